use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{check_replicas, run_replicas, ReferenceSettings, DEFAULT_REFERENCE_FACTOR};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::Stream;
use crate::ot::{sample_wasserstein, wasserstein_1d, EmpiricalMeasure, Order};
use crate::sde::{simulate_coupled_with, IterateGap, PreparedFlow, ReferenceFlow, SimConfig};
use crate::stats::{LineFit, MeanEstimate};

/// Batches used for the standard error of the pooled W2 estimate.
const W2_BATCHES: usize = 10;
/// Sample size for the multi-dimensional W2 estimate (exact assignment).
const W2_ASSIGNMENT_SIZE: usize = 512;

/// Terminal mean-square coupling gap against N with its log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub m_reference: usize,
    pub t_final: f64,
    pub mean_sq_gaps: Vec<MeanEstimate>,
    /// Sample `W2^2` between one-particle marginals (pooled over particles and replicas)
    /// and the terminal reference snapshot; `se` from batches of replicas.
    pub w2_sq_estimates: Vec<MeanEstimate>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_se: f64,
    pub slope_ci95: Option<(f64, f64)>,
    /// Set when some gap is not positive, so no log-log fit exists.
    pub degenerate: bool,
    pub picard_gaps: Vec<IterateGap>,
}

impl RateFit {
    /// `sqrt(se_gap^2 + se_w2^2)` per N.
    pub fn combined_se(&self) -> Vec<f64> {
        self.mean_sq_gaps
            .iter()
            .zip(&self.w2_sq_estimates)
            .map(|(g, w)| (g.se * g.se + w.se * w.se).sqrt())
            .collect()
    }

    /// Whether `W2^2 <= gap + k * combined_se` at each N.
    pub fn chain_holds(&self, k: f64) -> Vec<bool> {
        self.mean_sq_gaps
            .iter()
            .zip(&self.w2_sq_estimates)
            .zip(self.combined_se())
            .map(|((g, w), se)| w.mean <= g.mean + k * se)
            .collect()
    }
}

fn w2_squared(pooled: Vec<f64>, dim: usize, target: &EmpiricalMeasure, config: &SimConfig, tag: u32) -> Result<f64> {
    let mu = EmpiricalMeasure::uniform(dim, pooled)?;
    if dim == 1 {
        let w = wasserstein_1d(Order::W2, &mu, target)?.cost;
        return Ok(w * w);
    }
    let n = mu.len().min(target.len()).min(W2_ASSIGNMENT_SIZE);
    let noise = config.noise();
    let mut rng = noise.keyed_rng(Stream::Auxiliary, tag, 0, 0);
    let a = mu.subsample(&sample(&mut rng, mu.len(), n).into_vec())?;
    let b = target.subsample(&sample(&mut rng, target.len(), n).into_vec())?;
    let w = sample_wasserstein(Order::W2, &a, &b)?;
    Ok(w * w)
}

/// Builds the reference flow at `M >= 16 max(n_grid)` and runs [`chaos_rate_with_flow`].
pub fn chaos_rate_experiment(
    model: &ModelSpec,
    n_grid: &[usize],
    config: &SimConfig,
    replicas: usize,
    reference: &ReferenceSettings,
) -> Result<RateFit> {
    check_replicas(replicas)?;
    let n_max = n_grid.iter().copied().max().ok_or_else(|| Error::invalid("n_grid is empty"))?;
    let m = reference.resolve_m(n_max);
    if m < DEFAULT_REFERENCE_FACTOR * n_max {
        return Err(Error::invalid(format!(
            "m_reference = {m} is below {DEFAULT_REFERENCE_FACTOR} * max(n_grid) = {}",
            DEFAULT_REFERENCE_FACTOR * n_max
        )));
    }
    let flow = reference.build(model, config, n_max)?;
    chaos_rate_with_flow(model, n_grid, config, replicas, &flow)
}

/// Terminal mean-square gap for each N, every N coupled to the same reference flow.
/// Replica r at grid index g uses noise replica `g * replicas + r`.
pub fn chaos_rate_with_flow(
    model: &ModelSpec,
    n_grid: &[usize],
    config: &SimConfig,
    replicas: usize,
    flow: &ReferenceFlow,
) -> Result<RateFit> {
    check_replicas(replicas)?;
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::invalid("n_grid must be a nonempty list of positive sizes"));
    }
    if n_grid.len() * replicas > crate::noise::MAX_REPLICA as usize {
        return Err(Error::invalid("n_grid x replicas exceeds the noise key space"));
    }
    config.validate()?;
    let prepared = PreparedFlow::new(model, flow)?;
    let d = model.dim();
    let target = flow.at_step(config.n_steps());
    let mut mean_sq_gaps = Vec::with_capacity(n_grid.len());
    let mut w2_sq_estimates = Vec::with_capacity(n_grid.len());
    for (g, &n) in n_grid.iter().enumerate() {
        let runs = run_replicas(replicas, |r| {
            let id = (g * replicas + r) as u32;
            let cfg = SimConfig {
                n_particles: n,
                replica_id: id,
                ..config.clone()
            };
            let mut terminal = Vec::new();
            let n_steps = cfg.n_steps();
            let gaps = simulate_coupled_with(model, &cfg, &prepared, &cfg.noise(), &mut |k, x, _| {
                if k == n_steps {
                    terminal = x.to_vec();
                }
            })
            .map_err(|e| e.with_context(format!("N={n}, replica={r}")))?;
            Ok((*gaps.last().expect("gap recorded"), terminal))
        })?;
        let gaps: Vec<f64> = runs.iter().map(|(gap, _)| *gap).collect();
        mean_sq_gaps.push(MeanEstimate::from_samples(&gaps));

        let tag = (g * W2_BATCHES) as u32;
        let pooled: Vec<f64> = runs.iter().flat_map(|(_, x)| x.iter().copied()).collect();
        let full = w2_squared(pooled, d, target, config, tag)?;
        let batches = W2_BATCHES.min(replicas);
        let se = if batches >= 2 {
            let mut values = Vec::with_capacity(batches);
            for b in 0..batches {
                let batch: Vec<f64> = runs
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| r * batches / replicas == b)
                    .flat_map(|(_, (_, x))| x.iter().copied())
                    .collect();
                values.push(w2_squared(batch, d, target, config, tag + 1 + b as u32)?);
            }
            MeanEstimate::from_samples(&values).se
        } else {
            f64::NAN
        };
        w2_sq_estimates.push(MeanEstimate {
            mean: full,
            se,
            n: replicas,
        });
    }

    let degenerate = mean_sq_gaps.iter().any(|g| !(g.mean > 0.0));
    let fit = if degenerate {
        None
    } else {
        let xs: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = mean_sq_gaps.iter().map(|g| g.mean.ln()).collect();
        LineFit::fit(&xs, &ys)
    };
    let nan = f64::NAN;
    Ok(RateFit {
        n_grid: n_grid.to_vec(),
        replicas,
        m_reference: flow.m_reference,
        t_final: config.t_final,
        mean_sq_gaps,
        w2_sq_estimates,
        slope: fit.map_or(nan, |f| f.slope),
        intercept: fit.map_or(nan, |f| f.intercept),
        r_squared: fit.map_or(nan, |f| f.r_squared),
        slope_se: fit.map_or(nan, |f| f.slope_se),
        slope_ci95: fit.and_then(|f| f.slope_ci95()),
        degenerate: degenerate || fit.is_none(),
        picard_gaps: flow.picard_gaps.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{granular_media_model, linear_test_model, Potential};

    #[test]
    fn law_independent_drift_is_degenerate() {
        let model = linear_test_model(1.0, 1).unwrap();
        let cfg = SimConfig::new(0.01, 0.2, 1, 3);
        let fit = chaos_rate_experiment(&model, &[4, 8], &cfg, 4, &ReferenceSettings::default()).unwrap();
        assert!(fit.degenerate);
        assert!(fit.slope.is_nan());
        assert!(fit.mean_sq_gaps.iter().all(|g| g.mean == 0.0));
    }

    #[test]
    fn reference_must_be_large_enough() {
        let model = linear_test_model(1.0, 1).unwrap();
        let cfg = SimConfig::new(0.01, 0.2, 1, 3);
        let err = chaos_rate_experiment(&model, &[4, 8], &cfg, 4, &ReferenceSettings::with_m(100)).unwrap_err();
        assert!(err.to_string().contains("m_reference"));
        assert!(chaos_rate_experiment(&model, &[4], &cfg, 0, &ReferenceSettings::default()).is_err());
    }

    #[test]
    fn gaps_shrink_with_n() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Quadratic { strength: 1.0 }, 1).unwrap();
        let cfg = SimConfig::new(0.02, 0.5, 1, 8);
        let fit = chaos_rate_experiment(&model, &[8, 32], &cfg, 40, &ReferenceSettings::default()).unwrap();
        assert!(!fit.degenerate);
        assert!(fit.mean_sq_gaps[1].mean < fit.mean_sq_gaps[0].mean);
        assert!(fit.slope < 0.0);
        assert_eq!(fit.m_reference, 512);
    }

    #[test]
    fn replica_order_does_not_matter() {
        // the reduction runs in replica order whatever the pool size
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Quadratic { strength: 1.0 }, 1).unwrap();
        let cfg = SimConfig::new(0.02, 0.2, 1, 8);
        let a = crate::par::with_threads(1, || chaos_rate_experiment(&model, &[8, 16], &cfg, 6, &ReferenceSettings::default()).unwrap());
        let b = crate::par::with_threads(3, || chaos_rate_experiment(&model, &[8, 16], &cfg, 6, &ReferenceSettings::default()).unwrap());
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
