use serde::{Deserialize, Serialize};

use super::particles::{canonical_measure, Stepper};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::{NoiseGrid, REFERENCE_NAMESPACE};
use crate::ot::{sample_wasserstein, EmpiricalMeasure, Order};

/// Above this size, multi-dimensional iterate gaps use the pathwise coupling bound.
pub const EXACT_GAP_LIMIT: usize = 1024;

/// W2 between the terminal laws of Picard iterates `iteration - 1` and `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateGap {
    pub iteration: usize,
    pub w2: f64,
    /// False when `w2` is the synchronous-coupling upper bound rather than the exact distance.
    pub exact: bool,
}

/// Empirical approximation of the nonlinear law `f_t` on the Euler grid.
#[derive(Debug, Clone)]
pub struct ReferenceFlow {
    pub dim: usize,
    pub dt: f64,
    pub m_reference: usize,
    pub picard_iterations: usize,
    /// `snapshots[k]` approximates `f_{k dt}`.
    pub snapshots: Vec<EmpiricalMeasure>,
    pub picard_gaps: Vec<IterateGap>,
    /// Set when some iterate gap grew instead of shrinking.
    pub contraction_warning: bool,
}

impl ReferenceFlow {
    pub fn n_steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn t_final(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn at_step(&self, step: usize) -> &EmpiricalMeasure {
        &self.snapshots[step]
    }

    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.snapshots.last().expect("flow has snapshots")
    }
}

fn iterate_gap(iteration: usize, dim: usize, prev: (&[f64], &EmpiricalMeasure), cur: (&[f64], &EmpiricalMeasure)) -> Result<IterateGap> {
    let m = prev.0.len() / dim;
    if dim == 1 || m <= EXACT_GAP_LIMIT {
        let w2 = sample_wasserstein(Order::W2, prev.1, cur.1)?;
        return Ok(IterateGap { iteration, w2, exact: true });
    }
    let total: f64 = prev.0.iter().zip(cur.0).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(IterateGap {
        iteration,
        w2: (total / m as f64).sqrt(),
        exact: false,
    })
}

/// Builds `f_t` from `m` reference particles on the grid of `config` (its `n_particles`
/// and `replica_id` are ignored; the reference draws from its own noise namespace).
///
/// Iterate 0 is the self-consistent m-particle system. Iterate k >= 1 moves the same
/// particles, with the same noise, in the frozen field of iterate k - 1.
pub fn build_reference_flow(
    model: &ModelSpec,
    m: usize,
    config: &SimConfig,
    picard_iters: usize,
    noise: &NoiseGrid,
) -> Result<ReferenceFlow> {
    let mut problems = Vec::new();
    if m == 0 {
        problems.push("m_reference must be at least 1".to_string());
    }
    if picard_iters == 0 {
        problems.push("picard_iters must be at least 1".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let config = SimConfig {
        n_particles: m,
        replica_id: 0,
        ..config.clone()
    };
    config.validate()?;
    let d = model.dim();
    let n_steps = config.n_steps();
    let stepper = Stepper {
        diffusion: &model.diffusion,
        noise,
        replica: REFERENCE_NAMESPACE,
        keys: None,
        dt: config.dt,
        taming: config.taming_for(model.drift.taming_exponent()),
    };
    let initial = model.initial_law.sample_many(noise, REFERENCE_NAMESPACE, m);
    let context = |e: Error, iteration: usize| e.with_context(format!("reference flow, Picard iterate {iteration}"));

    let mut states = initial.clone();
    let mut next = vec![0.0; m * d];
    let mut snapshots = Vec::with_capacity(n_steps + 1);
    for step in 0..n_steps {
        let snapshot = canonical_measure(d, &states);
        {
            let field = model.drift.field(&snapshot);
            stepper
                .advance(&*field, &states, &mut next, step)
                .map_err(|e| context(e, 0))?;
        }
        snapshots.push(snapshot);
        std::mem::swap(&mut states, &mut next);
    }
    snapshots.push(canonical_measure(d, &states));
    let mut terminal_states = states;

    let mut picard_gaps = Vec::with_capacity(picard_iters);
    for iteration in 1..=picard_iters {
        let mut states = initial.clone();
        let mut fresh = Vec::with_capacity(n_steps + 1);
        fresh.push(canonical_measure(d, &states));
        for (step, frozen) in snapshots.iter().take(n_steps).enumerate() {
            let field = model.drift.field(frozen);
            stepper
                .advance(&*field, &states, &mut next, step)
                .map_err(|e| context(e, iteration))?;
            std::mem::swap(&mut states, &mut next);
            fresh.push(canonical_measure(d, &states));
        }
        let gap = iterate_gap(
            iteration,
            d,
            (&terminal_states, snapshots.last().expect("terminal snapshot")),
            (&states, fresh.last().expect("terminal snapshot")),
        )?;
        picard_gaps.push(gap);
        snapshots = fresh;
        terminal_states = states;
    }

    let contraction_warning = picard_gaps.windows(2).any(|w| w[1].w2 > w[0].w2);
    if contraction_warning {
        log::warn!(
            "Picard iterates did not contract: gaps {:?}",
            picard_gaps.iter().map(|g| g.w2).collect::<Vec<_>>()
        );
    }
    Ok(ReferenceFlow {
        dim: d,
        dt: config.dt,
        m_reference: m,
        picard_iterations: picard_iters,
        snapshots,
        picard_gaps,
        contraction_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{granular_media_model, ou_mean, ou_variance, InitialLaw, Potential};

    #[test]
    fn flow_has_one_snapshot_per_grid_point() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Cubic { strength: 1.0 }, 1).unwrap();
        let cfg = SimConfig::new(0.01, 0.1, 1, 5);
        let flow = build_reference_flow(&model, 64, &cfg, 2, &cfg.noise()).unwrap();
        assert_eq!(flow.snapshots.len(), 11);
        assert_eq!(flow.picard_gaps.len(), 2);
        assert!(flow.snapshots.iter().all(|s| s.len() == 64));
        assert!((flow.t_final() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn reference_moments_track_the_ou_law() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Zero, 1)
            .unwrap()
            .with_initial_law(InitialLaw::isotropic_gaussian(vec![1.0], 0.5).unwrap())
            .unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 1, 9);
        let flow = build_reference_flow(&model, 4096, &cfg, 1, &cfg.noise()).unwrap();
        let mean = flow.terminal().mean()[0];
        let var = flow.terminal().integrate(|x| (x[0] - mean).powi(2));
        let sd = ou_variance(0.5, 1.0, 1.0).sqrt();
        assert!((mean - ou_mean(1.0, 1.0, 1.0)).abs() < 4.0 * sd / 64.0, "mean {mean}");
        assert!((var - ou_variance(0.5, 1.0, 1.0)).abs() < 0.1, "var {var}");
    }

    #[test]
    fn rejects_bad_sizes() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Zero, 1).unwrap();
        let cfg = SimConfig::new(0.01, 0.1, 1, 5);
        let err = build_reference_flow(&model, 0, &cfg, 0, &cfg.noise()).unwrap_err();
        match err {
            Error::Validation(p) => assert_eq!(p.len(), 2),
            other => panic!("unexpected {other}"),
        }
    }
}
