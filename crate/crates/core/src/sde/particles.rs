use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{euler_step_into, SimConfig};
use crate::error::{Error, Result};
use crate::model::{DiffusionSpec, MeanField, ModelSpec};
use crate::noise::NoiseGrid;
use crate::ot::EmpiricalMeasure;
use crate::par;

/// Recorded states of an N-particle system. `states[k]` holds all particles at time
/// `steps[k] * dt`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    pub dim: usize,
    pub n_particles: usize,
    pub dt: f64,
    pub steps: Vec<usize>,
    pub states: Vec<Vec<f64>>,
}

impl TrajectoryEnsemble {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&k| k as f64 * self.dt).collect()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("ensemble has at least one state")
    }

    pub fn particle(&self, record: usize, i: usize) -> &[f64] {
        &self.states[record][i * self.dim..(i + 1) * self.dim]
    }

    pub fn empirical_measure(&self, record: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.dim, self.states[record].clone()).expect("recorded states are finite")
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Uniform measure over the rows of `states`, sorted lexicographically. Mean-field sums
/// then run in an order that does not depend on particle labels, so relabelling the
/// particles relabels the trajectories bit for bit.
pub fn canonical_measure(dim: usize, states: &[f64]) -> EmpiricalMeasure {
    let n = states.len() / dim;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lexicographic(&states[i * dim..(i + 1) * dim], &states[j * dim..(j + 1) * dim]));
    let mut sorted = Vec::with_capacity(states.len());
    for i in order {
        sorted.extend_from_slice(&states[i * dim..(i + 1) * dim]);
    }
    EmpiricalMeasure::uniform(dim, sorted).expect("particle states are finite")
}

pub(crate) fn first_nonfinite(states: &[f64], dim: usize) -> Option<usize> {
    states.iter().position(|v| !v.is_finite()).map(|k| k / dim)
}

/// Everything one Euler step needs apart from the states and the field.
#[derive(Clone, Copy)]
pub(crate) struct Stepper<'a> {
    pub diffusion: &'a DiffusionSpec,
    pub noise: &'a NoiseGrid,
    pub replica: u32,
    pub keys: Option<&'a [u32]>,
    pub dt: f64,
    pub taming: Option<f64>,
}

impl Stepper<'_> {
    /// `next_i = X_i + sigma dW_i - field(X_i) dt` for every particle, then the
    /// divergence check tagged with the index of the new time level.
    pub fn advance(&self, field: &dyn MeanField, states: &[f64], next: &mut [f64], step: usize) -> Result<()> {
        let d = self.diffusion.dim();
        par::for_each_chunk(next, d, |i, out| {
            let x = &states[i * d..(i + 1) * d];
            let key = self.keys.map_or(i as u32, |k| k[i]);
            let mut drift = vec![0.0; d];
            let mut dw = vec![0.0; d];
            field.drift(x, &mut drift);
            self.noise.fill_increments(self.replica, key, step as u32, &mut dw);
            euler_step_into(x, &mut drift, self.diffusion, &dw, self.dt, self.taming, out);
        });
        match first_nonfinite(next, d) {
            None => Ok(()),
            Some(particle) => Err(Error::Divergence {
                step: step + 1,
                particle,
                context: None,
            }),
        }
    }
}

/// Runs the interacting system from explicit initial states. Particle `i` draws its
/// noise under key `keys[i]` (default `i`). `observer(k, states)` sees every time level
/// including `k = 0`. Returns the terminal states.
pub fn run_particle_system(
    model: &ModelSpec,
    config: &SimConfig,
    noise: &NoiseGrid,
    replica: u32,
    initial: Vec<f64>,
    keys: Option<&[u32]>,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    config.validate()?;
    let d = model.dim();
    let n = config.n_particles;
    if initial.len() != n * d {
        return Err(Error::invalid(format!(
            "initial states have {} values, expected {} particles of dimension {d}",
            initial.len(),
            n
        )));
    }
    if let Some(k) = keys {
        if k.len() != n {
            return Err(Error::invalid("one noise key per particle is required"));
        }
    }
    let stepper = Stepper {
        diffusion: &model.diffusion,
        noise,
        replica,
        keys,
        dt: config.dt,
        taming: config.taming_for(model.drift.taming_exponent()),
    };
    let mut states = initial;
    let mut next = vec![0.0; n * d];
    observer(0, &states);
    for step in 0..config.n_steps() {
        let measure = if model.drift.depends_on_measure() {
            canonical_measure(d, &states)
        } else {
            EmpiricalMeasure::uniform(d, states.clone())?
        };
        let field = model.drift.field(&measure);
        stepper.advance(&*field, &states, &mut next, step)?;
        std::mem::swap(&mut states, &mut next);
        observer(step + 1, &states);
    }
    Ok(states)
}

pub(crate) fn recorded(step: usize, n_steps: usize, stride: usize) -> bool {
    step == 0 || step == n_steps || (stride > 0 && step % stride == 0)
}

/// The N-particle system of `config` on replica `config.replica_id`, started from
/// i.i.d. draws of the model's initial law.
pub fn simulate_particle_system(model: &ModelSpec, config: &SimConfig, noise: &NoiseGrid) -> Result<TrajectoryEnsemble> {
    config.validate()?;
    let n_steps = config.n_steps();
    let initial = model
        .initial_law
        .sample_many(noise, config.replica_id, config.n_particles);
    let mut ensemble = TrajectoryEnsemble {
        dim: model.dim(),
        n_particles: config.n_particles,
        dt: config.dt,
        steps: Vec::new(),
        states: Vec::new(),
    };
    run_particle_system(
        model,
        config,
        noise,
        config.replica_id,
        initial,
        None,
        &mut |k, states| {
            if recorded(k, n_steps, config.snapshot_stride) {
                ensemble.steps.push(k);
                ensemble.states.push(states.to_vec());
            }
        },
    )?;
    Ok(ensemble)
}
