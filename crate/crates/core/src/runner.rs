//! Runs a configured experiment end to end and records what it wrote.
//!
//! Every artifact is listed in `manifest.jsonl`: one `run` record carrying the resolved
//! config, then one `file` record per artifact with its SHA-256. If the experiment
//! fails the manifest is still written, marked incomplete, with the error text.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{
    chaos_rate_experiment, compare_across_n, empirical_measure_deviation_with_flow, equilibrium_convergence,
    observable_deviation_experiment, DeviationTable, EquilibriumCurve, ObservableDeviation, RateFit, TargetKind,
};
use crate::io::{cell, Table};
use crate::plot::{emit_plot, PlotKind, PlotTable};

pub const MANIFEST: &str = "manifest.jsonl";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    /// `None` for the manifest itself.
    pub sha256: Option<String>,
    pub bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Fully resolved TOML config.
    pub config: String,
    pub config_sha256: String,
    /// SHA-256 of `blob <len>\0<model section as JSON>`.
    pub model_fingerprint: String,
    pub seed: u64,
    pub experiment: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub status: RunStatus,
    /// Caveats on how to read the outputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub files: Vec<FileRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum ManifestLine {
    Run(RunManifest),
    File(FileRecord),
}

impl RunManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&ManifestLine::Run(self.clone())).expect("manifest serializes");
        out.push('\n');
        for f in &self.files {
            out.push_str(&serde_json::to_string(&ManifestLine::File(f.clone())).expect("manifest serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> std::result::Result<RunManifest, String> {
        let mut run: Option<RunManifest> = None;
        let mut files = Vec::new();
        for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<ManifestLine>(line).map_err(|e| format!("line {}: {e}", k + 1))? {
                ManifestLine::Run(r) if run.is_none() => run = Some(r),
                ManifestLine::Run(_) => return Err(format!("line {}: second run record", k + 1)),
                ManifestLine::File(f) => files.push(f),
            }
        }
        let mut run = run.ok_or("no run record")?;
        run.files = files;
        Ok(run)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunManifest::from_jsonl(&text).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            column: 1,
            message,
        })
    }
}

/// The config text stored in a manifest.
pub fn config_from_manifest(text: &str) -> std::result::Result<String, String> {
    RunManifest::from_jsonl(text).map(|m| m.config)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn model_fingerprint(config: &RunConfig) -> String {
    let json = serde_json::to_string(&config.model).expect("model section serializes");
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", json.len()));
    h.update(json.as_bytes());
    format!("{:x}", h.finalize())
}

fn notes(config: &RunConfig) -> Vec<String> {
    let mut notes = Vec::new();
    match config.experiment.kind.as_str() {
        "chaos_rate" => {
            notes.push(
                "w2_sq is the sample W2^2 between pooled X^1 draws and reference samples; it is biased upward by sampling noise"
                    .to_string(),
            );
            if config.state_dim() > 1 {
                notes.push("w2_sq uses 512-point random subsamples of both clouds (d > 1)".to_string());
            }
        }
        "w1_deviation" => {
            notes.push("f_t is represented by a size-N random subsample of the reference snapshot per replica".to_string());
            if config.experiment.sup_over_time == Some(true) {
                notes.push(format!(
                    "the supremum is taken over snapshot times only (every {} steps), not continuous time",
                    config.output.snapshot_stride.unwrap_or(10)
                ));
            }
        }
        _ => {}
    }
    notes
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Artifacts {
    dir: PathBuf,
    plot: bool,
    files: Vec<FileRecord>,
}

impl Artifacts {
    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: Some(sha256_hex(bytes)),
            bytes: Some(bytes.len() as u64),
        });
        Ok(())
    }

    /// Writes `stem.csv` and, when plotting is on, `stem.svg` rendered from that table.
    fn table(&mut self, stem: &str, table: &Table, kind: Option<PlotKind>) -> Result<()> {
        self.bytes(&format!("{stem}.csv"), &table.to_bytes())?;
        if let (true, Some(kind)) = (self.plot, kind) {
            let svg = emit_plot(&plot_from_table(table, stem)?, kind);
            self.bytes(&format!("{stem}.svg"), svg.as_bytes())?;
        }
        Ok(())
    }
}

/// Reads a plot from a table: x is the first column, y the second. Error bars come from
/// `<y>_se` or the pair `<y>_lo`, `<y>_hi`; a `fit` column masks the fitted points.
pub fn plot_from_table(table: &Table, title: &str) -> Result<PlotTable> {
    if table.headers.len() < 2 {
        return Err(Error::invalid("a plot table needs at least two columns"));
    }
    if table.rows.is_empty() {
        return Err(Error::invalid("a plot table needs at least one row"));
    }
    let (xh, yh) = (&table.headers[0], &table.headers[1]);
    let x = table.column(0)?;
    let y = table.column(1)?;
    let mut plot = PlotTable::new(title, xh, yh, x, y);
    if let Some(i) = table.column_index(&format!("{yh}_se")) {
        let se = table.column(i)?;
        plot = plot.with_se(&se);
    } else if let (Some(lo), Some(hi)) = (table.column_index(&format!("{yh}_lo")), table.column_index(&format!("{yh}_hi"))) {
        let (lo, hi) = (table.column(lo)?, table.column(hi)?);
        plot = plot.with_bounds(lo.into_iter().zip(hi).collect());
    }
    if let Some(i) = table.column_index("fit") {
        plot = plot.with_fit_mask(table.column(i)?.iter().map(|&v| v != 0.0).collect());
    }
    Ok(plot)
}

/// Re-renders the SVG for a CSV table into `out_dir` (default: beside the table).
pub fn replot(table_path: &Path, kind: PlotKind, out_dir: Option<&Path>) -> Result<PathBuf> {
    let table = Table::read(table_path)?;
    let stem = table_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("{} has no file name", table_path.display())))?;
    let svg = emit_plot(&plot_from_table(&table, stem)?, kind);
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| table_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let out = dir.join(format!("{stem}.svg"));
    std::fs::write(&out, svg).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

/// Files in `dir` that no previous manifest accounts for; the accounted ones are removed.
fn clear_previous(dir: &Path) -> Result<()> {
    if !dir.exists() {
        return std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e));
    }
    let manifest_path = dir.join(MANIFEST);
    let known: Vec<String> = if manifest_path.exists() {
        RunManifest::read(&manifest_path)?.files.into_iter().map(|f| f.path).collect()
    } else {
        Vec::new()
    };
    let mut stray = Vec::new();
    let mut owned = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST || known.contains(&name) {
            owned.push(entry.path());
        } else {
            stray.push(name);
        }
    }
    if !stray.is_empty() {
        stray.sort();
        return Err(Error::invalid(format!(
            "output directory {} holds files no manifest lists: {}",
            dir.display(),
            stray.join(", ")
        )));
    }
    for path in owned {
        std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Runs the experiment in `config`, writing artifacts and the manifest into
/// `config.output.directory`.
pub fn run(config: &RunConfig) -> Result<RunManifest> {
    let config = config.clone().resolve()?;
    let dir = PathBuf::from(config.output.directory.clone().unwrap_or_else(|| "output".into()));
    clear_previous(&dir)?;
    let text = config.to_toml();
    let mut manifest = RunManifest {
        config_sha256: sha256_hex(text.as_bytes()),
        model_fingerprint: model_fingerprint(&config),
        notes: notes(&config),
        config: text,
        seed: config.sim.seed.unwrap_or(0),
        experiment: config.experiment.kind.clone(),
        version: VERSION.to_string(),
        started_at: now(),
        finished_at: String::new(),
        status: RunStatus::Incomplete,
        error: None,
        files: Vec::new(),
    };
    let mut out = Artifacts {
        dir: dir.clone(),
        plot: config.output.plot.unwrap_or(true),
        files: Vec::new(),
    };
    let outcome = execute(&config, &mut out);
    manifest.finished_at = now();
    manifest.files = out.files;
    match &outcome {
        Ok(()) => manifest.status = RunStatus::Complete,
        Err(e) => manifest.error = Some(e.to_string()),
    }
    manifest.files.push(FileRecord {
        path: MANIFEST.to_string(),
        sha256: None,
        bytes: None,
    });
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest.to_jsonl()).map_err(|e| Error::io(&path, e))?;
    outcome.map(|()| manifest)
}

fn execute(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let model = config.build_model()?;
    let sim = config.sim_config();
    let replicas = config.sim.replicas.unwrap_or(1);
    let reference = config.reference_settings();
    match config.experiment.kind.as_str() {
        "chaos_rate" => {
            let grid = config.sim.n_grid.clone().unwrap_or_default();
            let fit = chaos_rate_experiment(&model, &grid, &sim, replicas, &reference)?;
            write_rate_fit(out, &fit)
        }
        "observable_deviation" => {
            let obs = config.experiment.observable.clone().unwrap_or_default().to_observable();
            let n = config.sim.n_particles.unwrap_or(1);
            let r_grid = config.experiment.r_grid.clone().unwrap_or_default();
            let dev = observable_deviation_experiment(&model, &obs, n, &r_grid, replicas, &sim, &reference)?;
            write_observable_deviation(out, &dev)
        }
        "w1_deviation" => {
            let grid = config
                .sim
                .n_grid
                .clone()
                .unwrap_or_else(|| vec![config.sim.n_particles.unwrap_or(1)]);
            let r_grid = config.experiment.r_grid.clone().unwrap_or_default();
            let sup = config.experiment.sup_over_time.unwrap_or(false);
            let flow = reference.build(&model, &sim, config.n_max())?;
            let mut tables = Vec::with_capacity(grid.len());
            for &n in &grid {
                tables.push(empirical_measure_deviation_with_flow(&model, n, &r_grid, replicas, &sim, sup, &flow)?);
            }
            write_w1_deviation(out, &tables)
        }
        "equilibrium" => {
            let n = config.sim.n_particles.unwrap_or(1);
            let curve = equilibrium_convergence(&model, n, &sim, &config.equilibrium_params())?;
            write_equilibrium(out, &curve)
        }
        other => Err(Error::invalid(format!("unknown experiment \"{other}\""))),
    }
}

fn opt(v: Option<f64>) -> String {
    cell(v.unwrap_or(f64::NAN))
}

fn write_rate_fit(out: &mut Artifacts, fit: &RateFit) -> Result<()> {
    let mut t = Table::new(&["n", "mean_sq_gap", "mean_sq_gap_se", "w2_sq", "w2_sq_se"]);
    for (k, &n) in fit.n_grid.iter().enumerate() {
        let (g, w) = (fit.mean_sq_gaps[k], fit.w2_sq_estimates[k]);
        t.push_f64(&[n as f64, g.mean, g.se, w.mean, w.se]);
    }
    out.table("rate_fit", &t, Some(PlotKind::LogLog))?;

    let mut s = Table::new(&[
        "slope",
        "intercept",
        "r_squared",
        "slope_se",
        "slope_ci_lo",
        "slope_ci_hi",
        "degenerate",
        "replicas",
        "m_reference",
        "t_final",
    ]);
    s.push(vec![
        cell(fit.slope),
        cell(fit.intercept),
        cell(fit.r_squared),
        cell(fit.slope_se),
        opt(fit.slope_ci95.map(|c| c.0)),
        opt(fit.slope_ci95.map(|c| c.1)),
        fit.degenerate.to_string(),
        fit.replicas.to_string(),
        fit.m_reference.to_string(),
        cell(fit.t_final),
    ]);
    out.table("rate_fit_summary", &s, None)?;

    let mut p = Table::new(&["iteration", "w2", "exact"]);
    for g in &fit.picard_gaps {
        p.push(vec![g.iteration.to_string(), cell(g.w2), g.exact.to_string()]);
    }
    out.table("picard_gaps", &p, None)
}

/// Columns `n_r2, prob, prob_lo, prob_hi, fit, r, threshold, exceedances, bound`.
fn tail_table(t: &DeviationTable) -> Table {
    let mut table = Table::new(&["n_r2", "prob", "prob_lo", "prob_hi", "fit", "r", "threshold", "exceedances", "bound"]);
    let bound = t.dominating_bound();
    for (k, &r) in t.r_grid.iter().enumerate() {
        table.push(vec![
            cell(t.n_particles as f64 * r * r),
            cell(t.empirical_probs[k]),
            cell(t.wilson[k].0),
            cell(t.wilson[k].1),
            t.fit_window.contains(&k).to_string(),
            cell(r),
            cell(t.thresholds[k]),
            t.exceedances[k].to_string(),
            opt(bound.as_ref().map(|b| b[k])),
        ]);
    }
    table
}

const TAIL_SUMMARY: [&str; 9] = [
    "n",
    "replicas",
    "fitted_c",
    "c_ci_lo",
    "c_ci_hi",
    "fit_points",
    "dominance_violations",
    "mean_statistic",
    "mean_statistic_se",
];

fn tail_summary_row(t: &DeviationTable) -> Vec<String> {
    let ci = t.fitted_c_ci95();
    vec![
        t.n_particles.to_string(),
        t.n_replicas.to_string(),
        opt(t.fitted_c),
        opt(ci.map(|c| c.0)),
        opt(ci.map(|c| c.1)),
        t.fit_window.len().to_string(),
        t.dominance_violations().map_or(String::new(), |v| v.len().to_string()),
        cell(t.mean_statistic.mean),
        cell(t.mean_statistic.se),
    ]
}

fn write_observable_deviation(out: &mut Artifacts, dev: &ObservableDeviation) -> Result<()> {
    out.table("deviation_tail", &tail_table(&dev.table), Some(PlotKind::LogLinear))?;
    let mut headers = TAIL_SUMMARY.to_vec();
    headers.extend(["reference_value", "mse", "mse_se", "c_fit", "c_fit_se", "lipschitz_scale"]);
    let mut s = Table::new(&headers);
    let mut row = tail_summary_row(&dev.table);
    row.extend([
        cell(dev.reference_value),
        cell(dev.mse.mean),
        cell(dev.mse.se),
        cell(dev.c_fit.mean),
        cell(dev.c_fit.se),
        cell(dev.lipschitz_scale),
    ]);
    s.push(row);
    out.table("deviation_summary", &s, None)
}

fn write_w1_deviation(out: &mut Artifacts, tables: &[DeviationTable]) -> Result<()> {
    let mut s = Table::new(&TAIL_SUMMARY);
    for t in tables {
        out.table(&format!("w1_tail_N{}", t.n_particles), &tail_table(t), Some(PlotKind::LogLinear))?;
        s.push(tail_summary_row(t));
    }
    out.table("w1_summary", &s, None)?;
    if tables.len() < 2 {
        return Ok(());
    }
    // rows per (r, N); `increase` describes the step from this N to the next
    let mut m = Table::new(&["r", "n", "prob", "prob_lo", "prob_hi", "increase"]);
    for k in 0..tables[0].r_grid.len() {
        let check = compare_across_n(tables, k)?;
        for (j, &n) in check.n_values.iter().enumerate() {
            let increase = if check.violations.contains(&j) {
                "violation"
            } else if check.flagged.contains(&j) {
                "flagged"
            } else {
                "none"
            };
            m.push(vec![
                cell(check.r),
                n.to_string(),
                cell(check.probs[j]),
                cell(check.wilson[j].0),
                cell(check.wilson[j].1),
                increase.to_string(),
            ]);
        }
    }
    out.table("w1_monotonicity", &m, None)
}

fn write_equilibrium(out: &mut Artifacts, c: &EquilibriumCurve) -> Result<()> {
    let mut t = Table::new(&["t", "w2", "w2_se", "fit"]);
    for (j, &time) in c.times.iter().enumerate() {
        t.push(vec![
            cell(time),
            cell(c.w2_to_target[j]),
            cell(c.w2_se[j]),
            c.fit_window.contains(&j).to_string(),
        ]);
    }
    out.table("equilibrium_curve", &t, Some(PlotKind::LogLinear))?;

    let mut g = Table::new(&["t", "gap", "gap_se"]);
    for (time, e) in c.coupling_times.iter().zip(&c.coupling_gaps) {
        g.push_f64(&[*time, e.mean, e.se]);
    }
    if !c.coupling_times.is_empty() {
        out.table("coupling_gaps", &g, Some(PlotKind::TimeSeries))?;
    }

    let target = match c.target {
        TargetKind::ClosedForm => "closed_form".to_string(),
        TargetKind::BurnIn { particles, .. } => format!("burn_in_{particles}"),
    };
    let mut s = Table::new(&[
        "n",
        "replicas",
        "target",
        "noise_floor",
        "noise_floor_se",
        "decay_rate",
        "fit_r_squared",
        "gap_slope",
        "gap_slope_se",
        "mean_gap",
    ]);
    s.push(vec![
        c.n_particles.to_string(),
        c.replicas.to_string(),
        target,
        cell(c.noise_floor.mean),
        cell(c.noise_floor.se),
        opt(c.fitted_decay_rate),
        opt(c.fit.map(|f| f.r_squared)),
        opt(c.gap_slope.map(|g| g.mean)),
        opt(c.gap_slope.map(|g| g.se)),
        if c.coupling_gaps.is_empty() { cell(f64::NAN) } else { cell(c.mean_gap()) },
    ]);
    out.table("equilibrium_summary", &s, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn chaos_config(dir: &Path) -> RunConfig {
        parse_config(&format!(
            r#"
[model]
family = "granular"

[sim]
dt = 0.05
t_final = 0.5
n_grid = [8, 16]
seed = 3
replicas = 6

[output]
directory = "{}"
"#,
            dir.display()
        ))
        .unwrap()
    }

    fn checksums(m: &RunManifest) -> Vec<(String, Option<String>)> {
        m.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect()
    }

    #[test]
    fn chaos_run_lists_its_files() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("out");
        let m = run(&chaos_config(&dir)).unwrap();
        let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        for want in ["rate_fit.csv", "rate_fit.svg", "manifest.jsonl"] {
            assert!(names.contains(&want), "{names:?}");
        }
        let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        on_disk.sort();
        let mut listed: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        listed.sort();
        assert_eq!(on_disk, listed);
        let back = RunManifest::read(&dir.join(MANIFEST)).unwrap();
        assert_eq!(back.status, RunStatus::Complete);
        assert_eq!(checksums(&back), checksums(&m));
    }

    #[test]
    fn same_seed_same_checksums() {
        let tmp = tempfile::tempdir().unwrap();
        let a = run(&chaos_config(&tmp.path().join("a"))).unwrap();
        let b = run(&chaos_config(&tmp.path().join("b"))).unwrap();
        assert_eq!(checksums(&a), checksums(&b));
        // and again into the same directory
        let c = run(&chaos_config(&tmp.path().join("a"))).unwrap();
        assert_eq!(checksums(&a), checksums(&c));
    }

    #[test]
    fn stray_files_block_the_run() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("notes.txt"), "x").unwrap();
        let err = run(&chaos_config(tmp.path())).unwrap_err();
        assert!(err.to_string().contains("notes.txt"));
    }

    #[test]
    fn replot_matches_run_svg() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("out");
        run(&chaos_config(&dir)).unwrap();
        let original = std::fs::read(dir.join("rate_fit.svg")).unwrap();
        let again = replot(&dir.join("rate_fit.csv"), PlotKind::LogLog, Some(&tmp.path().join("re"))).unwrap();
        assert_eq!(std::fs::read(again).unwrap(), original);
    }

    #[test]
    fn divergence_leaves_incomplete_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("out");
        let cfg = parse_config(&format!(
            r#"
[model]
family = "linear"
rate = 1e308
initial = {{ kind = "point_mass", at = [10.0] }}

[sim]
dt = 0.1
t_final = 0.2
n_particles = 4
seed = 1
replicas = 2

[experiment]
kind = "equilibrium"
coupling_times = []

[output]
directory = "{}"
"#,
            dir.display()
        ))
        .unwrap();
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let m = RunManifest::read(&dir.join(MANIFEST)).unwrap();
        assert_eq!(m.status, RunStatus::Incomplete);
        assert!(m.error.unwrap().contains("divergence"));
    }

    #[test]
    fn manifest_config_reparses() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = chaos_config(&tmp.path().join("out"));
        let m = run(&cfg).unwrap();
        let text = std::fs::read_to_string(tmp.path().join("out").join(MANIFEST)).unwrap();
        assert_eq!(config_from_manifest(&text).unwrap(), m.config);
        assert_eq!(parse_config(&m.config).unwrap(), cfg);
    }
}
