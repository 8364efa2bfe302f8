//! Euler-Maruyama discretization of the particle system, the reference flow and the
//! synchronous coupling between them.

mod coupled;
mod particles;
mod reference;

use serde::{Deserialize, Serialize};

pub use coupled::{simulate_coupled, simulate_coupled_with, CoupledEnsemble, PreparedFlow};
pub use particles::{canonical_measure, run_particle_system, simulate_particle_system, TrajectoryEnsemble};
pub use reference::{build_reference_flow, IterateGap, ReferenceFlow};

use crate::error::{Error, Result};
use crate::model::DiffusionSpec;
use crate::noise::{NoiseGrid, MAX_REPLICA};

/// Largest time step accepted without `allow_large_dt`.
pub const MAX_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub replica_id: u32,
    /// Tame superlinear drifts (only kernels with a positive taming exponent are affected).
    pub taming: bool,
    /// Record every k-th step in trajectory output; 0 keeps only the first and last states.
    pub snapshot_stride: usize,
    pub allow_large_dt: bool,
}

impl SimConfig {
    pub fn new(dt: f64, t_final: f64, n_particles: usize, seed: u64) -> Self {
        SimConfig {
            dt,
            t_final,
            n_particles,
            seed,
            replica_id: 0,
            taming: true,
            snapshot_stride: 1,
            allow_large_dt: false,
        }
    }

    pub fn with_replica(mut self, replica_id: u32) -> Self {
        self.replica_id = replica_id;
        self
    }

    pub fn with_particles(mut self, n: usize) -> Self {
        self.n_particles = n;
        self
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            problems.push(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.dt > 0.0 && self.t_final > 0.0 && step_count(self.dt, self.t_final).is_none() {
            problems.push(format!(
                "t_final / dt must be an integer step count (t_final = {}, dt = {})",
                self.t_final, self.dt
            ));
        }
        if self.dt > MAX_DT && !self.allow_large_dt {
            problems.push(format!("dt = {} exceeds {MAX_DT}; set allow_large_dt to override", self.dt));
        }
        if self.n_particles == 0 {
            problems.push("n_particles must be at least 1".to_string());
        }
        if self.n_particles > u32::MAX as usize {
            problems.push("n_particles exceeds the noise key range".to_string());
        }
        if self.replica_id > MAX_REPLICA {
            problems.push(format!("replica_id {} is in the reserved namespace", self.replica_id));
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.violations();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Number of Euler steps; call after `validate`.
    pub fn n_steps(&self) -> usize {
        step_count(self.dt, self.t_final).expect("validated step count")
    }

    pub fn noise(&self) -> NoiseGrid {
        NoiseGrid::new(self.seed, self.dt)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Taming exponent to apply for a kernel, if any.
    pub fn taming_for(&self, kernel_exponent: f64) -> Option<f64> {
        (self.taming && kernel_exponent > 0.0).then_some(kernel_exponent)
    }
}

/// `t_final / dt` if it is an integer up to rounding.
pub fn step_count(dt: f64, t_final: f64) -> Option<usize> {
    let ratio = t_final / dt;
    let rounded = ratio.round();
    if rounded >= 1.0 && (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        Some(rounded as usize)
    } else {
        None
    }
}

/// `b / (1 + dt^alpha |b|)`, in place.
#[inline]
pub fn tame(drift: &mut [f64], dt: f64, exponent: f64) {
    let norm = drift.iter().map(|v| v * v).sum::<f64>().sqrt();
    let factor = 1.0 + dt.powf(exponent) * norm;
    for v in drift.iter_mut() {
        *v /= factor;
    }
}

/// One explicit step `X + sigma dW - b dt` written into `out`; `drift` is tamed in place
/// first when `taming` carries an exponent. Returns false if the result is not finite.
#[inline]
pub fn euler_step_into(
    x: &[f64],
    drift: &mut [f64],
    diffusion: &DiffusionSpec,
    dw: &[f64],
    dt: f64,
    taming: Option<f64>,
    out: &mut [f64],
) -> bool {
    if let Some(exponent) = taming {
        tame(drift, dt, exponent);
    }
    diffusion.apply(dw, out);
    let mut finite = true;
    for ((o, xi), bi) in out.iter_mut().zip(x).zip(drift.iter()) {
        *o = xi + *o - bi * dt;
        finite &= o.is_finite();
    }
    finite
}

/// One explicit Euler-Maruyama step `X + sigma dW - b dt`.
pub fn euler_step(
    x: &[f64],
    drift: &[f64],
    diffusion: &DiffusionSpec,
    dw: &[f64],
    dt: f64,
    taming: Option<f64>,
) -> Result<Vec<f64>> {
    let mut b = drift.to_vec();
    let mut out = vec![0.0; x.len()];
    if euler_step_into(x, &mut b, diffusion, dw, dt, taming, &mut out) {
        Ok(out)
    } else {
        Err(Error::Divergence {
            step: 0,
            particle: 0,
            context: None,
        })
    }
}
