//! Wasserstein distances between empirical measures and Kantorovich-Rubinstein lower bounds.

mod assignment;
mod dual;
mod measure;
mod one_d;

use serde::{Deserialize, Serialize};

pub use assignment::{solve_assignment, wasserstein_assignment, MAX_ASSIGNMENT_SIZE};
pub use dual::{kr_dual_lower_bound, standard_family, TestFunction};
pub use measure::EmpiricalMeasure;
pub use one_d::wasserstein_1d;

use crate::error::{Error, Result};

/// Transport cost exponent; only W1 and W2 are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    W1,
    W2,
}

impl Order {
    pub fn exponent(self) -> f64 {
        match self {
            Order::W1 => 1.0,
            Order::W2 => 2.0,
        }
    }

    /// `|x - y|^p`. For p = 2 the squared norm is summed directly.
    #[inline]
    pub fn ground_cost(self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            Order::W1 => sq.sqrt(),
            Order::W2 => sq,
        }
    }

    /// Inverse of the outer power: `value^{1/p}`.
    #[inline]
    pub fn root(self, value: f64) -> f64 {
        let value = value.max(0.0);
        match self {
            Order::W1 => value,
            Order::W2 => value.sqrt(),
        }
    }
}

/// One transfer of mass from atom `from` of the first measure to atom `to` of the second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    /// The distance `W_p`, not its p-th power.
    pub cost: f64,
    pub plan: Vec<Transfer>,
    pub order: Order,
}

impl TransportResult {
    /// Mass leaving each atom of the source and arriving at each atom of the target.
    pub fn marginals(&self, n_from: usize, n_to: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; n_from];
        let mut b = vec![0.0; n_to];
        for t in &self.plan {
            a[t.from] += t.mass;
            b[t.to] += t.mass;
        }
        (a, b)
    }

    /// `(sum mass * |x_i - y_j|^p)^{1/p}` recomputed from the plan.
    pub fn plan_cost(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
        let total: f64 = self
            .plan
            .iter()
            .map(|t| t.mass * self.order.ground_cost(mu.point(t.from), nu.point(t.to)))
            .sum();
        self.order.root(total)
    }
}

/// Exact sample distance: quantile coupling in one dimension, optimal assignment otherwise.
///
/// In d = 1 the monotone coupling is optimal for every convex cost, so both
/// routes agree on equal-size uniform clouds.
pub fn sample_wasserstein(order: Order, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.dim() == 1 {
        Ok(wasserstein_1d(order, mu, nu)?.cost)
    } else {
        Ok(wasserstein_assignment(order, mu, nu)?.cost)
    }
}
