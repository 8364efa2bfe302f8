use std::path::Path;
use std::process::{Command, Output};

fn chaoslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaoslab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const CHAOS: &str = r#"
[model]
family = "granular"

[sim]
dt = 0.05
t_final = 0.5
n_grid = [8, 16]
seed = 2
replicas = 4
"#;

#[test]
fn validate_prints_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAOS);
    let o = chaoslab(&["validate", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("picard_iters = 2"));
    assert!(text.contains("kind = \"chaos_rate\""));
}

#[test]
fn validation_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CHAOS.replace("replicas = 4", "replicas = 0\nn_partcles = 3"));
    let o = chaoslab(&["validate", &cfg]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("did you mean \"n_particles\""), "{err}");
    assert_eq!(code(&chaoslab(&["frobnicate"])), 1);
    assert_eq!(code(&chaoslab(&["--help"])), 0);
}

#[test]
fn missing_files_exit_3() {
    assert_eq!(code(&chaoslab(&["run", "/nonexistent/run.toml"])), 3);
    assert_eq!(code(&chaoslab(&["replot", "/nonexistent/t.csv", "loglog"])), 3);
}

#[test]
fn divergence_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[model]
family = "linear"
rate = 1e308
initial = { kind = "point_mass", at = [10.0] }

[sim]
dt = 0.1
t_final = 0.2
n_particles = 4
seed = 1
replicas = 2

[experiment]
kind = "equilibrium"
"#,
    );
    let out = tmp.path().join("out");
    let o = chaoslab(&["run", &cfg, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.jsonl").exists());
}

#[test]
fn run_then_rerun_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAOS);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = chaoslab(&["run", &cfg, "--output-dir", a.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = a.join("manifest.jsonl");
    let o = chaoslab(&["run", manifest.to_str().unwrap(), "--output-dir", b.to_str().unwrap(), "--threads", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rate_fit.csv", "rate_fit_summary.csv", "picard_gaps.csv", "rate_fit.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAOS);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&chaoslab(&["run", &cfg, "--output-dir", a.to_str().unwrap()])), 0);
    assert_eq!(code(&chaoslab(&["run", &cfg, "--output-dir", b.to_str().unwrap(), "--seed", "99"])), 0);
    assert_ne!(std::fs::read(a.join("rate_fit.csv")).unwrap(), std::fs::read(b.join("rate_fit.csv")).unwrap());
    let m = std::fs::read_to_string(b.join("manifest.jsonl")).unwrap();
    assert!(m.contains("\"seed\":99"));
}

#[test]
fn replot_writes_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let table = tmp.path().join("curve.csv");
    std::fs::write(&table, "t,w2,w2_se\n0,1,0.1\n1,0.5,0.05\n2,0.25,0.02\n").unwrap();
    let o = chaoslab(&["replot", table.to_str().unwrap(), "loglinear"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = std::fs::read_to_string(tmp.path().join("curve.svg")).unwrap();
    assert!(svg.contains("slope=-0.69"));
    assert_eq!(code(&chaoslab(&["replot", table.to_str().unwrap(), "pie"])), 1);
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let o = chaoslab(&["validate", path.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        seen += 1;
    }
    assert!(seen >= 5);
}
