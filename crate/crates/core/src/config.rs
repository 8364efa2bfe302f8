//! Run configuration: a TOML document with `[model]`, `[sim]`, `[reference]`,
//! `[experiment]` and `[output]` sections.
//!
//! Parsing is strict. Syntax and type errors carry line and column; unknown keys and
//! semantic problems are collected and reported together. After validation every
//! default is written back into the structure, so serializing a parsed config yields a
//! fully explicit file that parses to the same value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{EquilibriumParams, ReferenceSettings, DEFAULT_REFERENCE_FACTOR};
use crate::model::{
    free_model, granular_media_model, linear_test_model, vlasov_fokker_planck_model, InitialLaw, ModelSpec,
    Observable, Potential, VectorMap,
};
use crate::sde::{step_count, SimConfig, MAX_DT};

pub const FAMILIES: [&str; 4] = ["granular", "kinetic", "linear", "free"];
pub const EXPERIMENTS: [&str; 4] = ["chaos_rate", "observable_deviation", "w1_deviation", "equilibrium"];
const POTENTIALS: [&str; 3] = ["zero", "quadratic", "cubic"];
const INITIAL_LAWS: [&str; 3] = ["gaussian", "point_mass", "uniform_box"];
const OBSERVABLES: [&str; 2] = ["coordinate", "clipped"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coord: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

/// `family` selects the model; the other keys are its parameters.
///
/// * granular: `confinement` (V), `interaction` (W), `dim`
/// * kinetic: `interaction` (U), `friction` (A(v) = friction v), `restoring`
///   (B(x) = restoring x), `dim` = d' (the state is (x, v) in R^{2d'})
/// * linear: `rate`, `dim`
/// * free: `sigma`, `dim`
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confinement: Option<PotentialSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interaction: Option<PotentialSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restoring: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taming: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allow_large_dt: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_over_time: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub sim: SimSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Allowed keys per table path; `None` marks a leaf.
fn schema(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "" => &["model", "sim", "reference", "experiment", "output"],
        "model" => &[
            "family",
            "dim",
            "confinement",
            "interaction",
            "friction",
            "restoring",
            "rate",
            "sigma",
            "initial",
        ],
        "model.confinement" | "model.interaction" => &["kind", "strength"],
        "model.initial" => &["kind", "mean", "variance", "at", "low", "high"],
        "sim" => &[
            "dt",
            "t_final",
            "n_particles",
            "n_grid",
            "seed",
            "replicas",
            "taming",
            "allow_large_dt",
        ],
        "reference" => &["m", "picard_iters"],
        "experiment" => &[
            "kind",
            "r_grid",
            "observable",
            "sup_over_time",
            "coupling_times",
            "record_stride",
        ],
        "experiment.observable" => &["kind", "coord", "bound"],
        "output" => &["directory", "snapshot_stride", "plot"],
        _ => return None,
    })
}

fn suggestion(key: &str, allowed: &[&str]) -> Option<String> {
    allowed
        .iter()
        .map(|a| (strsim::jaro_winkler(key, a), *a))
        .filter(|(score, _)| *score >= 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, a)| a.to_string())
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|line| {
        let t = line.trim_start();
        t.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
            || t.contains(&format!("{key} ="))
            || t.contains(&format!("{key}="))
    })
    .map(|k| k + 1)
}

fn unknown_keys(text: &str, table: &toml::Table, path: &str, problems: &mut Vec<String>) {
    let Some(allowed) = schema(path) else { return };
    for (key, value) in table {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        if !allowed.contains(&key.as_str()) {
            let at = line_of_key(text, key).map(|l| format!("line {l}: ")).unwrap_or_default();
            let section = if path.is_empty() { "top level".to_string() } else { format!("[{path}]") };
            let hint = suggestion(key, allowed)
                .map(|s| format!("; did you mean \"{s}\"?"))
                .unwrap_or_default();
            problems.push(format!("{at}unknown key \"{key}\" in {section}{hint}"));
            continue;
        }
        if let toml::Value::Table(inner) = value {
            unknown_keys(text, inner, &full, problems);
        }
    }
}

fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn parse_error(source: &str, text: &str, err: toml::de::Error) -> Error {
    let (line, column) = err.span().map_or((0, 0), |s| position(text, s.start));
    Error::Parse {
        path: source.to_string(),
        line,
        column,
        message: err.message().to_string(),
    }
}

/// Parses, validates and resolves defaults. `source` names the input in error messages.
pub fn parse_config_named(text: &str, source: &str) -> Result<RunConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(source, text, e))?;
    let mut problems = Vec::new();
    unknown_keys(text, &table, "", &mut problems);
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let raw: RunConfig = toml::from_str(text).map_err(|e| parse_error(source, text, e))?;
    raw.resolve()
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_named(text, "<config>")
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    if path.extension().is_some_and(|e| e == "jsonl") {
        let config = crate::runner::config_from_manifest(&text).map_err(|message| Error::Parse {
            path: source.clone(),
            line: 1,
            column: 1,
            message,
        })?;
        return parse_config_named(&config, &source);
    }
    parse_config_named(&text, &source)
}

fn check_vector(label: &str, v: &Option<Vec<f64>>, dim: usize, problems: &mut Vec<String>) {
    match v {
        None => problems.push(format!("{label} is required")),
        Some(v) if v.len() != dim => problems.push(format!("{label} has {} entries, the state has dimension {dim}", v.len())),
        Some(v) if v.iter().any(|x| !x.is_finite()) => problems.push(format!("{label} must be finite")),
        _ => {}
    }
}

fn resolve_potential(label: &str, spec: &mut Option<PotentialSpec>, problems: &mut Vec<String>) {
    let p = spec.get_or_insert_with(|| PotentialSpec {
        kind: "quadratic".to_string(),
        strength: None,
    });
    if !POTENTIALS.contains(&p.kind.as_str()) {
        problems.push(format!("{label}.kind = \"{}\" is not one of {POTENTIALS:?}", p.kind));
        return;
    }
    if p.kind == "zero" {
        if p.strength.is_some() {
            problems.push(format!("{label}.strength does not apply to kind \"zero\""));
        }
    } else {
        let s = *p.strength.get_or_insert(1.0);
        if !(s.is_finite() && s >= 0.0) {
            problems.push(format!("{label}.strength must be finite and nonnegative, got {s}"));
        }
    }
}

impl PotentialSpec {
    pub fn to_potential(&self) -> Potential {
        let s = self.strength.unwrap_or(1.0);
        match self.kind.as_str() {
            "quadratic" => Potential::Quadratic { strength: s },
            "cubic" => Potential::Cubic { strength: s },
            _ => Potential::Zero,
        }
    }
}

impl InitialSpec {
    pub fn to_law(&self) -> Result<InitialLaw> {
        match self.kind.as_str() {
            "gaussian" => InitialLaw::isotropic_gaussian(self.mean.clone().unwrap_or_default(), self.variance.unwrap_or(1.0)),
            "point_mass" => InitialLaw::point_mass(self.at.clone().unwrap_or_default()),
            "uniform_box" => InitialLaw::uniform_box(self.low.clone().unwrap_or_default(), self.high.clone().unwrap_or_default()),
            other => Err(Error::invalid(format!("unknown initial law \"{other}\""))),
        }
    }
}

impl ObservableSpec {
    pub fn to_observable(&self) -> Observable {
        let coord = self.coord.unwrap_or(0);
        match self.kind.as_str() {
            "clipped" => Observable::clipped_coordinate(coord, self.bound.unwrap_or(5.0)),
            _ => Observable::coordinate(coord),
        }
    }
}

impl RunConfig {
    /// Validates every section, collecting all violations, and fills in defaults.
    pub fn resolve(mut self) -> Result<RunConfig> {
        let mut problems = Vec::new();
        self.resolve_model(&mut problems);
        self.resolve_sim(&mut problems);
        self.resolve_experiment(&mut problems);
        self.resolve_reference(&mut problems);
        self.resolve_output(&mut problems);
        if problems.is_empty() {
            // building the model runs the remaining checks (gradient, evenness, PSD)
            self.build_model()?;
            Ok(self)
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Dimension of the simulated state.
    pub fn state_dim(&self) -> usize {
        let d = self.model.dim.unwrap_or(1);
        if self.model.family == "kinetic" {
            2 * d
        } else {
            d
        }
    }

    fn resolve_model(&mut self, problems: &mut Vec<String>) {
        let m = &mut self.model;
        if !FAMILIES.contains(&m.family.as_str()) {
            let hint = suggestion(&m.family, &FAMILIES).map(|s| format!("; did you mean \"{s}\"?")).unwrap_or_default();
            problems.push(format!("model.family = \"{}\" is not one of {FAMILIES:?}{hint}", m.family));
            return;
        }
        let dim = *m.dim.get_or_insert(1);
        if dim == 0 {
            problems.push("model.dim must be at least 1".to_string());
            return;
        }
        let unused = |name: &str, present: bool, problems: &mut Vec<String>| {
            if present {
                problems.push(format!("model.{name} does not apply to family \"{}\"", m.family));
            }
        };
        match m.family.as_str() {
            "granular" => {
                resolve_potential("model.confinement", &mut m.confinement, problems);
                resolve_potential("model.interaction", &mut m.interaction, problems);
                unused("friction", m.friction.is_some(), problems);
                unused("restoring", m.restoring.is_some(), problems);
                unused("rate", m.rate.is_some(), problems);
                unused("sigma", m.sigma.is_some(), problems);
            }
            "kinetic" => {
                unused("confinement", m.confinement.is_some(), problems);
                resolve_potential("model.interaction", &mut m.interaction, problems);
                for (name, v) in [("friction", &mut m.friction), ("restoring", &mut m.restoring)] {
                    let x = *v.get_or_insert(1.0);
                    if !x.is_finite() {
                        problems.push(format!("model.{name} must be finite"));
                    }
                }
                unused("rate", m.rate.is_some(), problems);
                unused("sigma", m.sigma.is_some(), problems);
            }
            "linear" => {
                let r = *m.rate.get_or_insert(1.0);
                if !(r > 0.0 && r.is_finite()) {
                    problems.push(format!("model.rate must be positive, got {r}"));
                }
                unused("confinement", m.confinement.is_some(), problems);
                unused("interaction", m.interaction.is_some(), problems);
                unused("friction", m.friction.is_some(), problems);
                unused("restoring", m.restoring.is_some(), problems);
                unused("sigma", m.sigma.is_some(), problems);
            }
            _ => {
                let s = *m.sigma.get_or_insert(std::f64::consts::SQRT_2);
                if !(s.is_finite() && s >= 0.0) {
                    problems.push(format!("model.sigma must be finite and nonnegative, got {s}"));
                }
                unused("confinement", m.confinement.is_some(), problems);
                unused("interaction", m.interaction.is_some(), problems);
                unused("friction", m.friction.is_some(), problems);
                unused("restoring", m.restoring.is_some(), problems);
                unused("rate", m.rate.is_some(), problems);
            }
        }
        let state = if m.family == "kinetic" { 2 * dim } else { dim };
        let init = m.initial.get_or_insert_with(|| InitialSpec {
            kind: "gaussian".to_string(),
            ..Default::default()
        });
        match init.kind.as_str() {
            "gaussian" => {
                init.mean.get_or_insert_with(|| vec![0.0; state]);
                let v = *init.variance.get_or_insert(1.0);
                check_vector("model.initial.mean", &init.mean, state, problems);
                if !(v.is_finite() && v >= 0.0) {
                    problems.push(format!("model.initial.variance must be nonnegative, got {v}"));
                }
            }
            "point_mass" => check_vector("model.initial.at", &init.at, state, problems),
            "uniform_box" => {
                check_vector("model.initial.low", &init.low, state, problems);
                check_vector("model.initial.high", &init.high, state, problems);
                if let (Some(lo), Some(hi)) = (&init.low, &init.high) {
                    if lo.iter().zip(hi).any(|(l, h)| l >= h) {
                        problems.push("model.initial.low must be below model.initial.high in every coordinate".to_string());
                    }
                }
            }
            other => problems.push(format!("model.initial.kind = \"{other}\" is not one of {INITIAL_LAWS:?}")),
        }
    }

    fn resolve_sim(&mut self, problems: &mut Vec<String>) {
        let s = &mut self.sim;
        for (name, v) in [("dt", s.dt), ("t_final", s.t_final)] {
            match v {
                None => problems.push(format!("sim.{name} is required")),
                Some(x) if !(x > 0.0 && x.is_finite()) => problems.push(format!("sim.{name} must be positive, got {x}")),
                _ => {}
            }
        }
        if s.seed.is_none() {
            problems.push("sim.seed is required".to_string());
        }
        let allow = *s.allow_large_dt.get_or_insert(false);
        if let (Some(dt), Some(t)) = (s.dt, s.t_final) {
            if dt > 0.0 && t > 0.0 && step_count(dt, t).is_none() {
                problems.push(format!(
                    "sim.t_final / sim.dt = {t} / {dt} is not an integer number of steps"
                ));
            }
            if dt > MAX_DT && !allow {
                problems.push(format!("sim.dt = {dt} exceeds {MAX_DT}; set sim.allow_large_dt = true to override"));
            }
        }
        s.taming.get_or_insert(true);
        let r = *s.replicas.get_or_insert(100);
        if r == 0 {
            problems.push("sim.replicas must be at least 1".to_string());
        }
        if s.n_particles == Some(0) {
            problems.push("sim.n_particles must be at least 1".to_string());
        }
        if let Some(g) = &s.n_grid {
            if g.is_empty() || g.contains(&0) {
                problems.push("sim.n_grid must be a nonempty list of positive sizes".to_string());
            }
        }
    }

    /// Largest N any part of the experiment uses.
    pub fn n_max(&self) -> usize {
        let grid = self.sim.n_grid.iter().flatten().copied().max().unwrap_or(0);
        grid.max(self.sim.n_particles.unwrap_or(0))
    }

    fn resolve_reference(&mut self, problems: &mut Vec<String>) {
        let n_max = self.n_max();
        let m = *self.reference.m.get_or_insert(DEFAULT_REFERENCE_FACTOR * n_max.max(1));
        if m == 0 {
            problems.push("reference.m must be at least 1".to_string());
        }
        if self.experiment.kind == "chaos_rate" && m < DEFAULT_REFERENCE_FACTOR * n_max {
            problems.push(format!(
                "reference.m = {m} must be at least {DEFAULT_REFERENCE_FACTOR} * max(sim.n_grid) = {}",
                DEFAULT_REFERENCE_FACTOR * n_max
            ));
        }
        if self.experiment.kind == "w1_deviation" && m < n_max {
            problems.push(format!("reference.m = {m} must be at least the largest N = {n_max}"));
        }
        if *self.reference.picard_iters.get_or_insert(2) == 0 {
            problems.push("reference.picard_iters must be at least 1".to_string());
        }
    }

    fn resolve_experiment(&mut self, problems: &mut Vec<String>) {
        if self.experiment.kind.is_empty() {
            self.experiment.kind = "chaos_rate".to_string();
        }
        let kind = self.experiment.kind.clone();
        if !EXPERIMENTS.contains(&kind.as_str()) {
            let hint = suggestion(&kind, &EXPERIMENTS).map(|s| format!("; did you mean \"{s}\"?")).unwrap_or_default();
            problems.push(format!("experiment.kind = \"{kind}\" is not one of {EXPERIMENTS:?}{hint}"));
            return;
        }
        if kind == "chaos_rate" && self.sim.n_grid.is_none() {
            // a doubling grid ending at N
            if let Some(n) = self.sim.n_particles.filter(|&n| n > 0) {
                let mut grid: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&k| k > 0).collect();
                grid.dedup();
                self.sim.n_grid = Some(grid);
            }
        }
        let e = &mut self.experiment;
        let s = &self.sim;
        let not_for = |name: &str, present: bool, problems: &mut Vec<String>| {
            if present {
                problems.push(format!("experiment.{name} does not apply to kind \"{kind}\""));
            }
        };
        match kind.as_str() {
            "chaos_rate" => {
                match (&s.n_grid, s.n_particles) {
                    (None, _) => problems.push("experiment \"chaos_rate\" needs sim.n_grid or sim.n_particles".to_string()),
                    (Some(g), Some(n)) if g.iter().max() != Some(&n) => {
                        problems.push(format!("sim.n_particles = {n} must equal the largest entry of sim.n_grid"))
                    }
                    _ => {}
                }
                not_for("r_grid", e.r_grid.is_some(), problems);
                not_for("observable", e.observable.is_some(), problems);
                not_for("sup_over_time", e.sup_over_time.is_some(), problems);
                not_for("coupling_times", e.coupling_times.is_some(), problems);
                not_for("record_stride", e.record_stride.is_some(), problems);
            }
            "observable_deviation" | "w1_deviation" => {
                let observable = kind == "observable_deviation";
                if observable {
                    if s.n_particles.is_none() {
                        problems.push("experiment \"observable_deviation\" needs sim.n_particles".to_string());
                    }
                    if s.n_grid.is_some() {
                        problems.push("sim.n_grid does not apply to \"observable_deviation\"".to_string());
                    }
                    let o = e.observable.get_or_insert_with(|| ObservableSpec {
                        kind: "clipped".to_string(),
                        ..Default::default()
                    });
                    if !OBSERVABLES.contains(&o.kind.as_str()) {
                        problems.push(format!("experiment.observable.kind = \"{}\" is not one of {OBSERVABLES:?}", o.kind));
                    }
                    let c = *o.coord.get_or_insert(0);
                    if c >= self.model.dim.unwrap_or(1) * if self.model.family == "kinetic" { 2 } else { 1 } {
                        problems.push(format!("experiment.observable.coord = {c} is outside the state"));
                    }
                    if o.kind == "clipped" {
                        let b = *o.bound.get_or_insert(5.0);
                        if !(b > 0.0 && b.is_finite()) {
                            problems.push(format!("experiment.observable.bound must be positive, got {b}"));
                        }
                    } else if o.bound.is_some() {
                        problems.push("experiment.observable.bound only applies to kind \"clipped\"".to_string());
                    }
                    not_for("sup_over_time", e.sup_over_time.is_some(), problems);
                } else {
                    if s.n_particles.is_none() && s.n_grid.is_none() {
                        problems.push("experiment \"w1_deviation\" needs sim.n_particles or sim.n_grid".to_string());
                    }
                    if s.n_particles.is_some() && s.n_grid.is_some() {
                        problems.push("give either sim.n_particles or sim.n_grid, not both".to_string());
                    }
                    not_for("observable", e.observable.is_some(), problems);
                    e.sup_over_time.get_or_insert(false);
                }
                let default: Vec<f64> = if observable {
                    (0..=15).map(|k| 0.02 * k as f64).collect()
                } else {
                    (1..=20).map(|k| 0.01 * k as f64).collect()
                };
                let r = e.r_grid.get_or_insert(default);
                if r.is_empty() || r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    problems.push("experiment.r_grid must be a nonempty list of nonnegative reals".to_string());
                }
                not_for("coupling_times", e.coupling_times.is_some(), problems);
                not_for("record_stride", e.record_stride.is_some(), problems);
            }
            _ => {
                if s.n_particles.is_none() {
                    problems.push("experiment \"equilibrium\" needs sim.n_particles".to_string());
                }
                let t_final = s.t_final.unwrap_or(0.0);
                let times = e.coupling_times.get_or_insert_with(|| {
                    [1.0, 2.0, 4.0, 8.0].into_iter().filter(|t| *t <= t_final).collect()
                });
                for t in times.iter() {
                    if !(*t >= 0.0 && *t <= t_final) {
                        problems.push(format!("experiment.coupling_times entry {t} is outside [0, sim.t_final]"));
                    }
                }
                e.record_stride.get_or_insert(10);
                not_for("r_grid", e.r_grid.is_some(), problems);
                not_for("observable", e.observable.is_some(), problems);
                not_for("sup_over_time", e.sup_over_time.is_some(), problems);
                let convex = match self.model.family.as_str() {
                    "linear" => true,
                    "granular" => [&self.model.confinement, &self.model.interaction]
                        .iter()
                        .all(|p| p.as_ref().is_some_and(|p| POTENTIALS.contains(&p.kind.as_str()))),
                    _ => false,
                };
                if !convex {
                    problems.push("experiment \"equilibrium\" needs a granular (convex V, W) or linear model".to_string());
                }
            }
        }
    }

    fn resolve_output(&mut self, problems: &mut Vec<String>) {
        let o = &mut self.output;
        if o.directory.get_or_insert_with(|| "output".to_string()).is_empty() {
            problems.push("output.directory must not be empty".to_string());
        }
        o.snapshot_stride.get_or_insert(10);
        o.plot.get_or_insert(true);
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let dim = m.dim.unwrap_or(1);
        let model = match m.family.as_str() {
            "granular" => granular_media_model(
                m.confinement.clone().unwrap_or_default().to_potential(),
                m.interaction.clone().unwrap_or_default().to_potential(),
                dim,
            )?,
            "kinetic" => vlasov_fokker_planck_model(
                m.interaction.clone().unwrap_or_default().to_potential(),
                VectorMap::Linear {
                    coefficient: m.friction.unwrap_or(1.0),
                },
                VectorMap::Linear {
                    coefficient: m.restoring.unwrap_or(1.0),
                },
                dim,
            )?,
            "linear" => linear_test_model(m.rate.unwrap_or(1.0), dim)?,
            "free" => free_model(dim, m.sigma.unwrap_or(std::f64::consts::SQRT_2))?,
            other => return Err(Error::invalid(format!("unknown model family \"{other}\""))),
        };
        match &m.initial {
            Some(init) => model.with_initial_law(init.to_law()?),
            None => Ok(model),
        }
    }

    /// Base simulation settings; experiments override `n_particles` and `replica_id`.
    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt.unwrap_or(0.0),
            t_final: s.t_final.unwrap_or(0.0),
            n_particles: self.n_max().max(1),
            seed: s.seed.unwrap_or(0),
            replica_id: 0,
            taming: s.taming.unwrap_or(true),
            snapshot_stride: self.output.snapshot_stride.unwrap_or(10),
            allow_large_dt: s.allow_large_dt.unwrap_or(false),
        }
    }

    pub fn reference_settings(&self) -> ReferenceSettings {
        ReferenceSettings {
            m_reference: self.reference.m,
            picard_iters: self.reference.picard_iters.unwrap_or(2),
        }
    }

    pub fn equilibrium_params(&self) -> EquilibriumParams {
        EquilibriumParams {
            replicas: self.sim.replicas.unwrap_or(1),
            record_stride: self.experiment.record_stride.unwrap_or(10),
            coupling_times: self.experiment.coupling_times.clone().unwrap_or_default(),
            reference: self.reference_settings(),
        }
    }

    /// Fully explicit TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
family = "granular"

[sim]
dt = 0.01
t_final = 1.0
n_particles = 64
seed = 1
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.model.dim, Some(1));
        assert_eq!(cfg.model.confinement.as_ref().unwrap().strength, Some(1.0));
        assert_eq!(cfg.model.initial.as_ref().unwrap().mean, Some(vec![0.0]));
        assert_eq!(cfg.sim.replicas, Some(100));
        assert_eq!(cfg.experiment.kind, "chaos_rate");
        assert_eq!(cfg.sim.n_grid, Some(vec![8, 16, 32, 64]));
        assert_eq!(cfg.reference.m, Some(16 * 64));
        assert_eq!(cfg.reference.picard_iters, Some(2));
        assert_eq!(cfg.output.directory.as_deref(), Some("output"));
        assert_eq!(cfg.output.plot, Some(true));
    }

    #[test]
    fn round_trip() {
        let cfg = parse_config(MINIMAL).unwrap();
        let again = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn non_integer_steps_name_both_keys() {
        let text = MINIMAL.replace("dt = 0.01", "dt = 0.03");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("sim.t_final") && err.contains("sim.dt"), "{err}");
    }

    #[test]
    fn typo_gets_a_suggestion() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\nn_partcles = 64");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("n_partcles") && err.contains("did you mean \"n_particles\""), "{err}");
        assert!(err.contains("line 10"), "{err}");
    }

    #[test]
    fn every_violation_is_listed() {
        let text = MINIMAL
            .replace("dt = 0.01", "dt = -1.0")
            .replace("seed = 1", "seed = 1\nreplicas = 0");
        match parse_config(&text).unwrap_err() {
            Error::Validation(p) => {
                assert!(p.iter().any(|m| m.contains("sim.dt")));
                assert!(p.iter().any(|m| m.contains("replicas")));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn syntax_errors_have_positions() {
        match parse_config("[model]\nfamily = \n").unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column >= 1);
            }
            other => panic!("unexpected {other}"),
        }
        match parse_config(&MINIMAL.replace("seed = 1", "seed = \"one\"")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 9),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn builds_each_family() {
        for (family, extra) in [
            ("granular", "interaction = { kind = \"cubic\" }"),
            ("kinetic", "friction = 2.0"),
            ("linear", "rate = 3.0"),
            ("free", "sigma = 0.5"),
        ] {
            let text = MINIMAL.replace("family = \"granular\"", &format!("family = \"{family}\"\n{extra}"));
            let cfg = parse_config(&text).unwrap();
            let model = cfg.build_model().unwrap();
            assert_eq!(model.dim(), cfg.state_dim());
        }
    }
}
