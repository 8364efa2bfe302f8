//! Replicated experiments: chaos rate, deviation tails and equilibration.
//!
//! Replicas run concurrently on disjoint noise keys and are reduced in replica order,
//! so every reported number is independent of the worker count.

mod chaos;
mod deviation;
mod equilibrium;

use serde::{Deserialize, Serialize};

pub use chaos::{chaos_rate_experiment, chaos_rate_with_flow, RateFit};
pub use deviation::{
    compare_across_n, empirical_measure_deviation, empirical_measure_deviation_with_flow,
    observable_deviation_experiment, observable_deviation_with_flow, DeviationTable, MonotonicityCheck,
    ObservableDeviation, TailStatistic,
};
pub use equilibrium::{equilibrium_convergence, EquilibriumCurve, EquilibriumParams, TargetKind};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::par;
use crate::sde::{build_reference_flow, ReferenceFlow, SimConfig};

/// Reference particles per particle of the largest system, when M is not given.
pub const DEFAULT_REFERENCE_FACTOR: usize = 16;

/// Size and Picard depth of the reference flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSettings {
    pub m_reference: Option<usize>,
    pub picard_iters: usize,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings {
            m_reference: None,
            picard_iters: 2,
        }
    }
}

impl ReferenceSettings {
    pub fn with_m(m: usize) -> Self {
        ReferenceSettings {
            m_reference: Some(m),
            ..Self::default()
        }
    }

    pub fn resolve_m(&self, n_max: usize) -> usize {
        self.m_reference.unwrap_or(DEFAULT_REFERENCE_FACTOR * n_max)
    }

    pub fn build(&self, model: &ModelSpec, config: &SimConfig, n_max: usize) -> Result<ReferenceFlow> {
        build_reference_flow(model, self.resolve_m(n_max), config, self.picard_iters, &config.noise())
    }
}

pub(crate) fn check_replicas(replicas: usize) -> Result<()> {
    if replicas == 0 {
        return Err(Error::invalid("replicas must be at least 1"));
    }
    if replicas > crate::noise::MAX_REPLICA as usize {
        return Err(Error::invalid("too many replicas for the noise key space"));
    }
    Ok(())
}

/// `f(0..replicas)` concurrently; the first error by replica index wins.
pub(crate) fn run_replicas<T, F>(replicas: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Send + Sync,
{
    par::map_indexed(replicas, f).into_iter().collect()
}

/// Last grid step at or before `t`.
pub(crate) fn step_at(config: &SimConfig, t: f64) -> usize {
    ((t / config.dt) + 1e-9).floor() as usize
}
