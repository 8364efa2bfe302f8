use serde::{Deserialize, Serialize};

use super::particles::{canonical_measure, first_nonfinite, recorded, Stepper, TrajectoryEnsemble};
use super::{ReferenceFlow, SimConfig};
use crate::error::{Error, Result};
use crate::model::{MeanField, ModelSpec};
use crate::noise::NoiseGrid;
use crate::ot::EmpiricalMeasure;

/// Mean-field evaluators for every snapshot of a reference flow, built once and shared
/// by all replicas.
pub struct PreparedFlow<'a> {
    flow: &'a ReferenceFlow,
    fields: Vec<Box<dyn MeanField + 'a>>,
}

impl<'a> PreparedFlow<'a> {
    pub fn new(model: &'a ModelSpec, flow: &'a ReferenceFlow) -> Result<Self> {
        if flow.dim != model.dim() {
            return Err(Error::invalid(format!(
                "reference flow has dimension {}, model has {}",
                flow.dim,
                model.dim()
            )));
        }
        let fields = flow.snapshots.iter().map(|s| model.drift.field(s)).collect();
        Ok(PreparedFlow { flow, fields })
    }

    pub fn flow(&self) -> &ReferenceFlow {
        self.flow
    }

    pub fn field(&self, step: usize) -> &dyn MeanField {
        &*self.fields[step]
    }
}

/// Synchronously coupled particle system and nonlinear copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledEnsemble {
    pub particles: TrajectoryEnsemble,
    pub nonlinear: TrajectoryEnsemble,
    /// `(1/N) sum_i |X^i_t - Xbar^i_t|^2` at every grid step.
    pub mean_sq_gap: Vec<f64>,
}

impl CoupledEnsemble {
    pub fn terminal_gap(&self) -> f64 {
        *self.mean_sq_gap.last().expect("gap recorded")
    }
}

pub(crate) fn mean_sq_gap(a: &[f64], b: &[f64], n: usize) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64
}

/// Coupled run driven by an observer: `observer(k, X, Xbar)` sees every time level.
/// Both systems share initial draws and Brownian increments, and both are tamed the
/// same way. Returns the mean-square gap at each step.
pub fn simulate_coupled_with(
    model: &ModelSpec,
    config: &SimConfig,
    prepared: &PreparedFlow<'_>,
    noise: &NoiseGrid,
    observer: &mut dyn FnMut(usize, &[f64], &[f64]),
) -> Result<Vec<f64>> {
    config.validate()?;
    let flow = prepared.flow();
    let n_steps = config.n_steps();
    if (flow.dt - config.dt).abs() > 1e-12 * config.dt {
        return Err(Error::invalid(format!(
            "reference flow uses dt = {}, simulation uses {}",
            flow.dt, config.dt
        )));
    }
    if flow.n_steps() < n_steps {
        return Err(Error::invalid(format!(
            "reference flow covers {} steps, simulation needs {n_steps}",
            flow.n_steps()
        )));
    }
    let d = model.dim();
    let n = config.n_particles;
    let stepper = Stepper {
        diffusion: &model.diffusion,
        noise,
        replica: config.replica_id,
        keys: None,
        dt: config.dt,
        taming: config.taming_for(model.drift.taming_exponent()),
    };
    let mut x = model.initial_law.sample_many(noise, config.replica_id, n);
    let mut xbar = x.clone();
    let mut next = vec![0.0; n * d];
    let mut gaps = Vec::with_capacity(n_steps + 1);
    gaps.push(0.0);
    observer(0, &x, &xbar);
    for step in 0..n_steps {
        {
            let measure = if model.drift.depends_on_measure() {
                canonical_measure(d, &x)
            } else {
                EmpiricalMeasure::uniform(d, x.clone())?
            };
            let field = model.drift.field(&measure);
            stepper
                .advance(&*field, &x, &mut next, step)
                .map_err(|e| e.with_context("particle system"))?;
        }
        std::mem::swap(&mut x, &mut next);
        stepper
            .advance(prepared.field(step), &xbar, &mut next, step)
            .map_err(|e| e.with_context("nonlinear copies"))?;
        std::mem::swap(&mut xbar, &mut next);
        debug_assert!(first_nonfinite(&x, d).is_none());
        gaps.push(mean_sq_gap(&x, &xbar, n));
        observer(step + 1, &x, &xbar);
    }
    Ok(gaps)
}

/// Coupled run recording both systems every `snapshot_stride` steps.
pub fn simulate_coupled(model: &ModelSpec, config: &SimConfig, flow: &ReferenceFlow, noise: &NoiseGrid) -> Result<CoupledEnsemble> {
    config.validate()?;
    let prepared = PreparedFlow::new(model, flow)?;
    let n_steps = config.n_steps();
    let blank = || TrajectoryEnsemble {
        dim: model.dim(),
        n_particles: config.n_particles,
        dt: config.dt,
        steps: Vec::new(),
        states: Vec::new(),
    };
    let (mut particles, mut nonlinear) = (blank(), blank());
    let mean_sq_gap = simulate_coupled_with(model, config, &prepared, noise, &mut |k, x, xbar| {
        if recorded(k, n_steps, config.snapshot_stride) {
            particles.steps.push(k);
            particles.states.push(x.to_vec());
            nonlinear.steps.push(k);
            nonlinear.states.push(xbar.to_vec());
        }
    })?;
    Ok(CoupledEnsemble {
        particles,
        nonlinear,
        mean_sq_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{free_model, granular_media_model, linear_test_model, Potential};
    use crate::sde::build_reference_flow;

    #[test]
    fn no_interaction_means_no_gap() {
        for model in [free_model(1, 1.0).unwrap(), linear_test_model(1.0, 2).unwrap()] {
            let cfg = SimConfig::new(0.01, 0.5, 32, 4);
            let flow = build_reference_flow(&model, 64, &cfg, 1, &cfg.noise()).unwrap();
            let run = simulate_coupled(&model, &cfg, &flow, &cfg.noise()).unwrap();
            assert!(run.mean_sq_gap.iter().all(|&g| g == 0.0));
            assert_eq!(run.particles, run.nonlinear);
        }
    }

    #[test]
    fn interacting_systems_separate() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Quadratic { strength: 1.0 }, 1).unwrap();
        let mut cfg = SimConfig::new(0.01, 0.5, 32, 4);
        cfg.snapshot_stride = 0;
        let flow = build_reference_flow(&model, 512, &cfg, 1, &cfg.noise()).unwrap();
        let run = simulate_coupled(&model, &cfg, &flow, &cfg.noise()).unwrap();
        assert_eq!(run.mean_sq_gap.len(), 51);
        assert_eq!(run.mean_sq_gap[0], 0.0);
        assert!(run.terminal_gap() > 0.0);
        assert_eq!(run.particles.steps, vec![0, 50]);
        assert_eq!(run.particles.initial_state(), run.nonlinear.initial_state());
    }

    #[test]
    fn flow_grid_must_match() {
        let model = linear_test_model(1.0, 1).unwrap();
        let cfg = SimConfig::new(0.01, 0.5, 8, 4);
        let flow = build_reference_flow(&model, 16, &cfg, 1, &cfg.noise()).unwrap();
        let longer = SimConfig::new(0.01, 1.0, 8, 4);
        assert!(simulate_coupled(&model, &longer, &flow, &cfg.noise()).is_err());
        let finer = SimConfig::new(0.005, 0.5, 8, 4);
        assert!(simulate_coupled(&model, &finer, &flow, &cfg.noise()).is_err());
    }
}
