use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{check_replicas, run_replicas, step_at, ReferenceSettings};
use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec};
use crate::noise::{Stream, TARGET_NAMESPACE};
use crate::ot::{sample_wasserstein, EmpiricalMeasure, Order};
use crate::sde::{run_particle_system, simulate_coupled_with, PreparedFlow, SimConfig};
use crate::stats::{LineFit, MeanEstimate};

/// Burn-in ensembles are this many times larger than N.
pub const BURN_IN_FACTOR: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumParams {
    pub replicas: usize,
    /// Steps between points of the W2 curve (0 = every step).
    pub record_stride: usize,
    /// Times at which the coupling gap is reported.
    pub coupling_times: Vec<f64>,
    pub reference: ReferenceSettings,
}

impl EquilibriumParams {
    pub fn new(replicas: usize) -> Self {
        EquilibriumParams {
            replicas,
            record_stride: 10,
            coupling_times: Vec::new(),
            reference: ReferenceSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    ClosedForm,
    /// A run of `particles` interacting particles up to `t_burn`.
    BurnIn { particles: usize, t_burn: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCurve {
    pub n_particles: usize,
    pub replicas: usize,
    pub target: TargetKind,
    pub times: Vec<f64>,
    /// Replica mean of the sample W2 from the empirical measure to a target sample.
    pub w2_to_target: Vec<f64>,
    pub w2_se: Vec<f64>,
    /// W2 between two independent target samples of size N.
    pub noise_floor: MeanEstimate,
    /// Indices of `times` with `w2_to_target >= 2 * floor`.
    pub fit_window: Vec<usize>,
    /// Minus the slope of `log W2` against t over the window.
    pub fitted_decay_rate: Option<f64>,
    pub fit: Option<LineFit>,
    pub coupling_times: Vec<f64>,
    pub coupling_gaps: Vec<MeanEstimate>,
    /// Replica mean of the per-replica least-squares slope of gap against t.
    pub gap_slope: Option<MeanEstimate>,
}

impl EquilibriumCurve {
    /// Mean over the reported coupling gaps.
    pub fn mean_gap(&self) -> f64 {
        self.coupling_gaps.iter().map(|g| g.mean).sum::<f64>() / self.coupling_gaps.len() as f64
    }

    /// Whether the gap's growth rate is at most `fraction` of its mean, up to `k` standard errors.
    pub fn gap_growth_within(&self, fraction: f64, k: f64) -> Option<bool> {
        let s = self.gap_slope?;
        Some(s.mean <= fraction * self.mean_gap() + k * s.se)
    }
}

fn check_convex_granular(model: &ModelSpec) -> Result<()> {
    match &model.family {
        Family::Linear { .. } => Ok(()),
        Family::Granular { .. } if model.convex => Ok(()),
        _ => Err(Error::invalid(format!(
            "equilibrium_convergence needs a granular model with convex V and W, got {:?}",
            model.family
        ))),
    }
}

/// Long-time behaviour of the N-particle system: W2 to the steady state along time, its
/// exponential decay rate above the noise floor, and the coupling gap at `coupling_times`.
pub fn equilibrium_convergence(
    model: &ModelSpec,
    n: usize,
    config: &SimConfig,
    params: &EquilibriumParams,
) -> Result<EquilibriumCurve> {
    check_convex_granular(model)?;
    check_replicas(params.replicas)?;
    config.validate()?;
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    let mut problems = Vec::new();
    for &t in &params.coupling_times {
        if !(t >= 0.0 && t <= config.t_final + 1e-12) {
            problems.push(format!("coupling time {t} is outside [0, t_final = {}]", config.t_final));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let d = model.dim();
    let noise = config.noise();
    let n_steps = config.n_steps();

    let steady = model.steady_state();
    let (target, burned) = match &steady {
        Some(_) => (TargetKind::ClosedForm, None),
        None => {
            let big = BURN_IN_FACTOR * n;
            let cfg = SimConfig {
                n_particles: big,
                replica_id: 0,
                ..config.clone()
            };
            let initial = model.initial_law.sample_many(&noise, TARGET_NAMESPACE, big);
            let states = run_particle_system(model, &cfg, &noise, TARGET_NAMESPACE, initial, None, &mut |_, _| {})
                .map_err(|e| e.with_context("burn-in target"))?;
            (
                TargetKind::BurnIn {
                    particles: big,
                    t_burn: config.t_final,
                },
                Some(states),
            )
        }
    };
    // two independent size-N target samples for replica r
    let target_pair = |r: usize| -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
        let id = TARGET_NAMESPACE + 1 + 2 * r as u32;
        match (&steady, &burned) {
            (Some(law), _) => Ok((
                EmpiricalMeasure::uniform(d, law.sample_many(&noise, id, n))?,
                EmpiricalMeasure::uniform(d, law.sample_many(&noise, id + 1, n))?,
            )),
            (None, Some(states)) => {
                let mut rng = noise.keyed_rng(Stream::Auxiliary, id, 0, 0);
                let picked = sample(&mut rng, BURN_IN_FACTOR * n, 2 * n).into_vec();
                let gather = |ix: &[usize]| ix.iter().flat_map(|&i| states[i * d..(i + 1) * d].iter().copied()).collect();
                Ok((
                    EmpiricalMeasure::uniform(d, gather(&picked[..n]))?,
                    EmpiricalMeasure::uniform(d, gather(&picked[n..]))?,
                ))
            }
            (None, None) => unreachable!("target is closed form or burned in"),
        }
    };

    let flow = params.reference.build(model, config, n)?;
    let prepared = PreparedFlow::new(model, &flow)?;
    let record: Vec<usize> = (0..=n_steps)
        .filter(|&k| k == n_steps || params.record_stride == 0 || k % params.record_stride == 0)
        .collect();
    let gap_steps: Vec<usize> = params.coupling_times.iter().map(|&t| step_at(config, t)).collect();

    let runs = run_replicas(params.replicas, |r| {
        let (target_sample, partner) = target_pair(r)?;
        let floor = sample_wasserstein(Order::W2, &target_sample, &partner)?;
        let cfg = SimConfig {
            n_particles: n,
            replica_id: r as u32,
            ..config.clone()
        };
        let mut curve = Vec::with_capacity(record.len());
        let mut failure = None;
        let gaps = simulate_coupled_with(model, &cfg, &prepared, &cfg.noise(), &mut |k, x, _| {
            if failure.is_some() || record.binary_search(&k).is_err() {
                return;
            }
            match EmpiricalMeasure::uniform(d, x.to_vec()).and_then(|mu| sample_wasserstein(Order::W2, &mu, &target_sample)) {
                Ok(w) => curve.push(w),
                Err(e) => failure = Some(e),
            }
        })
        .map_err(|e| e.with_context(format!("N={n}, replica={r}")))?;
        if let Some(e) = failure {
            return Err(e);
        }
        let at_times: Vec<f64> = gap_steps.iter().map(|&k| gaps[k]).collect();
        Ok((curve, floor, at_times))
    })?;

    let times: Vec<f64> = record.iter().map(|&k| config.time(k)).collect();
    let mut w2_to_target = Vec::with_capacity(times.len());
    let mut w2_se = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let column: Vec<f64> = runs.iter().map(|(c, _, _)| c[j]).collect();
        let e = MeanEstimate::from_samples(&column);
        w2_to_target.push(e.mean);
        w2_se.push(e.se);
    }
    let floors: Vec<f64> = runs.iter().map(|(_, f, _)| *f).collect();
    let noise_floor = MeanEstimate::from_samples(&floors);
    let fit_window: Vec<usize> = (0..times.len())
        .filter(|&j| w2_to_target[j] >= 2.0 * noise_floor.mean && w2_to_target[j] > 0.0)
        .collect();
    let fit = LineFit::fit(
        &fit_window.iter().map(|&j| times[j]).collect::<Vec<_>>(),
        &fit_window.iter().map(|&j| w2_to_target[j].ln()).collect::<Vec<_>>(),
    );

    let coupling_gaps: Vec<MeanEstimate> = (0..gap_steps.len())
        .map(|j| MeanEstimate::from_samples(&runs.iter().map(|(_, _, g)| g[j]).collect::<Vec<_>>()))
        .collect();
    let gap_times: Vec<f64> = gap_steps.iter().map(|&k| config.time(k)).collect();
    let slopes: Option<Vec<f64>> = runs
        .iter()
        .map(|(_, _, g)| LineFit::fit(&gap_times, g).map(|f| f.slope))
        .collect();
    let gap_slope = slopes.filter(|s| !s.is_empty()).map(|s| MeanEstimate::from_samples(&s));

    Ok(EquilibriumCurve {
        n_particles: n,
        replicas: params.replicas,
        target,
        times,
        w2_to_target,
        w2_se,
        noise_floor,
        fit_window,
        fitted_decay_rate: fit.map(|f| -f.slope),
        fit,
        coupling_times: gap_times,
        coupling_gaps,
        gap_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{granular_media_model, InitialLaw, Potential};

    #[test]
    fn non_convex_model_rejected() {
        let model = granular_media_model(Potential::Zero, Potential::Cubic { strength: 1.0 }, 1).unwrap();
        let mut m = model.clone();
        m.convex = false;
        let cfg = SimConfig::new(0.01, 0.1, 8, 1);
        assert!(equilibrium_convergence(&m, 8, &cfg, &EquilibriumParams::new(2)).is_err());
    }

    #[test]
    fn ou_curve_decays() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Zero, 1)
            .unwrap()
            .with_initial_law(InitialLaw::isotropic_gaussian(vec![3.0], 1.0).unwrap())
            .unwrap();
        let cfg = SimConfig::new(0.02, 2.0, 64, 4);
        let mut params = EquilibriumParams::new(8);
        params.coupling_times = vec![0.5, 1.0, 2.0];
        let curve = equilibrium_convergence(&model, 64, &cfg, &params).unwrap();
        assert_eq!(curve.target, TargetKind::ClosedForm);
        assert!(curve.w2_to_target[0] > 2.5);
        assert!(curve.w2_to_target.last().unwrap() < &1.0);
        assert!(curve.fitted_decay_rate.unwrap() > 0.5);
        // no interaction, so no coupling gap
        assert!(curve.coupling_gaps.iter().all(|g| g.mean == 0.0));
    }

    #[test]
    fn burn_in_target_when_no_closed_form() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Cubic { strength: 1.0 }, 1).unwrap();
        let cfg = SimConfig::new(0.02, 0.4, 16, 4);
        let curve = equilibrium_convergence(&model, 16, &cfg, &EquilibriumParams::new(3)).unwrap();
        assert_eq!(curve.target, TargetKind::BurnIn { particles: 64, t_burn: 0.4 });
        assert!(curve.noise_floor.mean > 0.0);
    }
}
