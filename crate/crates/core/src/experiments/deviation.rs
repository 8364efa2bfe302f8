use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{check_replicas, run_replicas, ReferenceSettings};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Observable};
use crate::noise::Stream;
use crate::ot::{sample_wasserstein, EmpiricalMeasure, Order};
use crate::sde::{run_particle_system, ReferenceFlow, SimConfig};
use crate::stats::{increasing_steps, wilson_interval, LineFit, MeanEstimate, Z95};

/// Which deviation a table counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailStatistic {
    /// `|1/N sum phi(X^i_t) - int phi df_t|` against `sqrt(C_fit / N) + r`.
    Observable { name: String },
    /// `W1(mu^N_t, f_t)` at the final time against `r`.
    W1Terminal,
    /// Max of `W1(mu^N_t, f_t)` over the recorded grid times (every `stride` steps).
    W1SupOverSnapshots { stride: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationTable {
    pub statistic: TailStatistic,
    pub n_particles: usize,
    pub n_replicas: usize,
    pub r_grid: Vec<f64>,
    /// Event thresholds actually applied (`offset + r`).
    pub thresholds: Vec<f64>,
    pub exceedances: Vec<usize>,
    pub empirical_probs: Vec<f64>,
    pub wilson: Vec<(f64, f64)>,
    /// Indices of `r_grid` whose probability lies in `[10 / replicas, 0.5]`.
    pub fit_window: Vec<usize>,
    /// Slope of `-log p` against `N r^2` over the window; `None` when unavailable.
    pub fitted_c: Option<f64>,
    pub fit: Option<LineFit>,
    /// Indices k with `p[k + 1] > p[k]`, flagged as Monte Carlo noise.
    pub monotonicity_flags: Vec<usize>,
    /// Mean of the deviation statistic over replicas.
    pub mean_statistic: MeanEstimate,
}

impl DeviationTable {
    /// Tabulates `P[sample > offset + r]` for each r.
    pub fn from_samples(statistic: TailStatistic, n_particles: usize, samples: &[f64], r_grid: &[f64], offset: f64) -> Self {
        let replicas = samples.len();
        let thresholds: Vec<f64> = r_grid.iter().map(|r| offset + r).collect();
        let exceedances: Vec<usize> = thresholds
            .iter()
            .map(|t| samples.iter().filter(|&&s| s > *t).count())
            .collect();
        let empirical_probs: Vec<f64> = exceedances.iter().map(|&k| k as f64 / replicas as f64).collect();
        let wilson = exceedances.iter().map(|&k| wilson_interval(k, replicas, Z95)).collect();
        let floor = 10.0 / replicas as f64;
        let fit_window: Vec<usize> = (0..r_grid.len())
            .filter(|&k| empirical_probs[k] >= floor && empirical_probs[k] <= 0.5 && empirical_probs[k] > 0.0)
            .collect();
        let xs: Vec<f64> = fit_window
            .iter()
            .map(|&k| n_particles as f64 * r_grid[k] * r_grid[k])
            .collect();
        let ys: Vec<f64> = fit_window.iter().map(|&k| -empirical_probs[k].ln()).collect();
        let fit = LineFit::fit(&xs, &ys);
        let monotonicity_flags = increasing_steps(&empirical_probs);
        DeviationTable {
            statistic,
            n_particles,
            n_replicas: replicas,
            r_grid: r_grid.to_vec(),
            thresholds,
            exceedances,
            empirical_probs,
            wilson,
            fit_window,
            fitted_c: fit.map(|f| f.slope),
            fit,
            monotonicity_flags,
            mean_statistic: MeanEstimate::from_samples(samples),
        }
    }

    /// 95% interval of the fitted c.
    pub fn fitted_c_ci95(&self) -> Option<(f64, f64)> {
        self.fit.and_then(|f| f.slope_ci95())
    }

    /// `2 exp(-(c/2) N r^2)` at the fitted c, per r.
    pub fn dominating_bound(&self) -> Option<Vec<f64>> {
        let c = self.fitted_c?;
        Some(
            self.r_grid
                .iter()
                .map(|r| 2.0 * (-(c / 2.0) * self.n_particles as f64 * r * r).exp())
                .collect(),
        )
    }

    /// Indices where the empirical probability exceeds the dominating bound.
    pub fn dominance_violations(&self) -> Option<Vec<usize>> {
        let bound = self.dominating_bound()?;
        Some(
            (0..self.r_grid.len())
                .filter(|&k| self.empirical_probs[k] > bound[k])
                .collect(),
        )
    }
}

/// Observable tail table plus the mean-square error it is calibrated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableDeviation {
    pub table: DeviationTable,
    /// `int phi df_t` from the reference flow.
    pub reference_value: f64,
    /// Mean over replicas of `(1/N sum phi(X^i_t) - int phi df_t)^2`.
    pub mse: MeanEstimate,
    /// `N * mse`, the fitted C of `C / N`.
    pub c_fit: MeanEstimate,
    /// Factor the observable was divided by to make it 1-Lipschitz.
    pub lipschitz_scale: f64,
}

pub fn observable_deviation_experiment(
    model: &ModelSpec,
    observable: &Observable,
    n: usize,
    r_grid: &[f64],
    replicas: usize,
    config: &SimConfig,
    reference: &ReferenceSettings,
) -> Result<ObservableDeviation> {
    check_replicas(replicas)?;
    let flow = reference.build(model, config, n)?;
    observable_deviation_with_flow(model, observable, n, r_grid, replicas, config, &flow)
}

fn check_r_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.is_empty() || r_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::invalid("r_grid must be a nonempty list of nonnegative reals"));
    }
    Ok(())
}

fn replica_config(config: &SimConfig, n: usize, r: usize) -> SimConfig {
    SimConfig {
        n_particles: n,
        replica_id: r as u32,
        ..config.clone()
    }
}

/// Terminal-time deviation of the particle average of `observable` from its reference value.
pub fn observable_deviation_with_flow(
    model: &ModelSpec,
    observable: &Observable,
    n: usize,
    r_grid: &[f64],
    replicas: usize,
    config: &SimConfig,
    flow: &ReferenceFlow,
) -> Result<ObservableDeviation> {
    check_replicas(replicas)?;
    check_r_grid(r_grid)?;
    config.validate()?;
    let lipschitz_scale = observable.lipschitz_constant().max(1.0);
    let phi = if lipschitz_scale > 1.0 {
        observable.normalized()
    } else {
        observable.clone()
    };
    let reference_value = flow.at_step(config.n_steps()).integrate(|x| phi.eval(x));
    let d = model.dim();
    let deviations = run_replicas(replicas, |r| {
        let cfg = replica_config(config, n, r);
        let noise = cfg.noise();
        let initial = model.initial_law.sample_many(&noise, cfg.replica_id, n);
        let terminal = run_particle_system(model, &cfg, &noise, cfg.replica_id, initial, None, &mut |_, _| {})
            .map_err(|e| e.with_context(format!("N={n}, replica={r}")))?;
        let avg = terminal.chunks(d).map(|x| phi.eval(x)).sum::<f64>() / n as f64;
        Ok((avg - reference_value).abs())
    })?;
    let squares: Vec<f64> = deviations.iter().map(|v| v * v).collect();
    let mse = MeanEstimate::from_samples(&squares);
    let c_fit = MeanEstimate {
        mean: n as f64 * mse.mean,
        se: n as f64 * mse.se,
        n: mse.n,
    };
    let offset = (c_fit.mean / n as f64).sqrt();
    let table = DeviationTable::from_samples(
        TailStatistic::Observable {
            name: phi.name().to_string(),
        },
        n,
        &deviations,
        r_grid,
        offset,
    );
    Ok(ObservableDeviation {
        table,
        reference_value,
        mse,
        c_fit,
        lipschitz_scale,
    })
}

pub fn empirical_measure_deviation(
    model: &ModelSpec,
    n: usize,
    r_grid: &[f64],
    replicas: usize,
    config: &SimConfig,
    sup_over_time: bool,
    reference: &ReferenceSettings,
) -> Result<DeviationTable> {
    check_replicas(replicas)?;
    let flow = reference.build(model, config, n)?;
    empirical_measure_deviation_with_flow(model, n, r_grid, replicas, config, sup_over_time, &flow)
}

/// `W1` between the empirical measure and an equal-size random subsample of the
/// reference snapshot (one index set per replica, reused at every time).
pub fn empirical_measure_deviation_with_flow(
    model: &ModelSpec,
    n: usize,
    r_grid: &[f64],
    replicas: usize,
    config: &SimConfig,
    sup_over_time: bool,
    flow: &ReferenceFlow,
) -> Result<DeviationTable> {
    check_replicas(replicas)?;
    check_r_grid(r_grid)?;
    config.validate()?;
    if n > flow.m_reference {
        return Err(Error::invalid(format!(
            "N = {n} exceeds the reference size M = {}",
            flow.m_reference
        )));
    }
    let n_steps = config.n_steps();
    let stride = config.snapshot_stride;
    let d = model.dim();
    let values = run_replicas(replicas, |r| {
        let cfg = replica_config(config, n, r);
        let noise = cfg.noise();
        let mut rng = noise.keyed_rng(Stream::Auxiliary, cfg.replica_id, 0, 0);
        let indices = sample(&mut rng, flow.m_reference, n).into_vec();
        let initial = model.initial_law.sample_many(&noise, cfg.replica_id, n);
        let mut worst: f64 = 0.0;
        let mut failure = None;
        let mut observe = |k: usize, states: &[f64]| {
            let wanted = if sup_over_time {
                k == n_steps || (stride > 0 && k % stride == 0)
            } else {
                k == n_steps
            };
            if !wanted || failure.is_some() {
                return;
            }
            let result = EmpiricalMeasure::uniform(d, states.to_vec()).and_then(|mu| {
                let nu = flow.at_step(k).subsample(&indices)?;
                sample_wasserstein(Order::W1, &mu, &nu)
            });
            match result {
                Ok(w) => worst = worst.max(w),
                Err(e) => failure = Some(e),
            }
        };
        run_particle_system(model, &cfg, &noise, cfg.replica_id, initial, None, &mut observe)
            .map_err(|e| e.with_context(format!("N={n}, replica={r}")))?;
        match failure {
            Some(e) => Err(e),
            None => Ok(worst),
        }
    })?;
    let statistic = if sup_over_time {
        TailStatistic::W1SupOverSnapshots { stride }
    } else {
        TailStatistic::W1Terminal
    };
    Ok(DeviationTable::from_samples(statistic, n, &values, r_grid, 0.0))
}

/// Probabilities at one r across tables ordered by increasing N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub r: f64,
    pub n_values: Vec<usize>,
    pub probs: Vec<f64>,
    pub wilson: Vec<(f64, f64)>,
    /// Consecutive pairs `(k, k + 1)` where p grew with disjoint Wilson intervals.
    pub violations: Vec<usize>,
    /// Pairs where p grew but the intervals overlap (Monte Carlo noise).
    pub flagged: Vec<usize>,
}

impl MonotonicityCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that `P[statistic > r_grid[r_index]]` does not grow along `tables`.
pub fn compare_across_n(tables: &[DeviationTable], r_index: usize) -> Result<MonotonicityCheck> {
    let first = tables.first().ok_or_else(|| Error::invalid("no tables to compare"))?;
    if tables.iter().any(|t| t.r_grid != first.r_grid) || r_index >= first.r_grid.len() {
        return Err(Error::invalid("tables must share the r grid and contain the index"));
    }
    let probs: Vec<f64> = tables.iter().map(|t| t.empirical_probs[r_index]).collect();
    let wilson: Vec<(f64, f64)> = tables.iter().map(|t| t.wilson[r_index]).collect();
    let mut violations = Vec::new();
    let mut flagged = Vec::new();
    for k in increasing_steps(&probs) {
        if wilson[k].1 < wilson[k + 1].0 {
            violations.push(k);
        } else {
            flagged.push(k);
        }
    }
    Ok(MonotonicityCheck {
        r: first.r_grid[r_index],
        n_values: tables.iter().map(|t| t.n_particles).collect(),
        probs,
        wilson,
        violations,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{granular_media_model, linear_test_model, Potential};

    #[test]
    fn tail_table_counts_exceedances() {
        let samples: Vec<f64> = (0..100).map(|k| k as f64 / 100.0).collect();
        let t = DeviationTable::from_samples(TailStatistic::W1Terminal, 10, &samples, &[0.0, 0.5, 0.9, 2.0], 0.0);
        assert_eq!(t.exceedances, vec![99, 49, 9, 0]);
        assert_eq!(t.fit_window, vec![1]);
        assert!(t.fitted_c.is_none());
        assert!(t.monotonicity_flags.is_empty());
        assert!(t.wilson.iter().zip(&t.empirical_probs).all(|((lo, hi), p)| lo <= p && p <= hi));
    }

    #[test]
    fn constant_observable_never_deviates() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Quadratic { strength: 1.0 }, 1).unwrap();
        let cfg = SimConfig::new(0.02, 0.2, 1, 2);
        let out = observable_deviation_experiment(
            &model,
            &Observable::constant(3.0),
            8,
            &[0.0, 0.1],
            10,
            &cfg,
            &ReferenceSettings::default(),
        )
        .unwrap();
        assert_eq!(out.mse.mean, 0.0);
        assert_eq!(out.table.empirical_probs, vec![0.0, 0.0]);
        assert!(out.table.fitted_c.is_none());
    }

    #[test]
    fn w1_limits() {
        let model = linear_test_model(1.0, 1).unwrap();
        let cfg = SimConfig::new(0.02, 0.2, 1, 2);
        let t = empirical_measure_deviation(&model, 16, &[0.0, 1e3], 20, &cfg, false, &ReferenceSettings::default()).unwrap();
        assert_eq!(t.empirical_probs, vec![1.0, 0.0]);
        let mut sup_cfg = cfg.clone();
        sup_cfg.snapshot_stride = 2;
        let s = empirical_measure_deviation(&model, 16, &[0.0, 1e3], 20, &sup_cfg, true, &ReferenceSettings::default()).unwrap();
        assert!(s.mean_statistic.mean >= t.mean_statistic.mean);
        assert_eq!(s.statistic, TailStatistic::W1SupOverSnapshots { stride: 2 });
    }

    #[test]
    fn monotonicity_uses_interval_overlap() {
        let mk = |n, k| DeviationTable::from_samples(
            TailStatistic::W1Terminal,
            n,
            &(0..100).map(|i| if i < k { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
            &[0.5],
            0.0,
        );
        let check = compare_across_n(&[mk(8, 30), mk(16, 33), mk(32, 10)], 0).unwrap();
        assert_eq!(check.flagged, vec![0]);
        assert!(check.passed());
        let bad = compare_across_n(&[mk(8, 5), mk(16, 60)], 0).unwrap();
        assert_eq!(bad.violations, vec![0]);
    }
}
