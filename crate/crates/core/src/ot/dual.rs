use std::fmt;
use std::sync::Arc;

use super::EmpiricalMeasure;
use crate::error::{Error, Result};

const LIPSCHITZ_SLACK: f64 = 1e-9;

/// A test function for the Kantorovich-Rubinstein dual of `W_1`. Every variant is 1-Lipschitz.
#[derive(Clone)]
pub enum TestFunction {
    Zero,
    /// `sign * x_coord`.
    Projection { coord: usize, sign: f64 },
    /// Continuous piecewise-linear function of one coordinate, zero at `knots[0]`.
    /// `slopes[k]` applies left of `knots[k]` for k < knots.len(), the last slope right of the last knot.
    PiecewiseLinear {
        coord: usize,
        knots: Vec<f64>,
        slopes: Vec<f64>,
    },
    /// Arbitrary function with a claimed Lipschitz constant; it is rescaled by `1 / lipschitz`
    /// and the claim is sample-checked before use.
    Custom {
        f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        lipschitz: f64,
    },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Zero => write!(f, "Zero"),
            TestFunction::Projection { coord, sign } => write!(f, "Projection({coord}, {sign})"),
            TestFunction::PiecewiseLinear { coord, knots, slopes } => {
                write!(f, "PiecewiseLinear({coord}, {knots:?}, {slopes:?})")
            }
            TestFunction::Custom { lipschitz, .. } => write!(f, "Custom(L={lipschitz})"),
        }
    }
}

impl TestFunction {
    /// `sign * max(x_coord - anchor, 0)`.
    pub fn ramp_up(coord: usize, anchor: f64, sign: f64) -> Self {
        TestFunction::PiecewiseLinear {
            coord,
            knots: vec![anchor],
            slopes: vec![0.0, sign],
        }
    }

    /// `sign * max(anchor - x_coord, 0)`.
    pub fn ramp_down(coord: usize, anchor: f64, sign: f64) -> Self {
        TestFunction::PiecewiseLinear {
            coord,
            knots: vec![anchor],
            slopes: vec![-sign, 0.0],
        }
    }

    /// `sign * |x_coord - anchor|`.
    pub fn distance(coord: usize, anchor: f64, sign: f64) -> Self {
        TestFunction::PiecewiseLinear {
            coord,
            knots: vec![anchor],
            slopes: vec![-sign, sign],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::Projection { coord, sign } => sign * x[*coord],
            TestFunction::PiecewiseLinear { coord, knots, slopes } => {
                let t = x[*coord];
                if t <= knots[0] {
                    return slopes[0] * (t - knots[0]);
                }
                let mut value = 0.0;
                for k in 1..knots.len() {
                    if t <= knots[k] {
                        return value + slopes[k] * (t - knots[k - 1]);
                    }
                    value += slopes[k] * (knots[k] - knots[k - 1]);
                }
                value + slopes[knots.len()] * (t - knots[knots.len() - 1])
            }
            TestFunction::Custom { f, lipschitz } => f(x) / lipschitz,
        }
    }

    fn certify(&self, dim: usize, probes: &[&[f64]]) -> Result<()> {
        match self {
            TestFunction::Zero => Ok(()),
            TestFunction::Projection { coord, sign } => {
                if *coord >= dim || sign.abs() > 1.0 + LIPSCHITZ_SLACK {
                    return Err(Error::invalid(format!("test function {self:?} is not 1-Lipschitz on R^{dim}")));
                }
                Ok(())
            }
            TestFunction::PiecewiseLinear { coord, knots, slopes } => {
                let sorted = knots.windows(2).all(|w| w[0] <= w[1]);
                if *coord >= dim
                    || knots.is_empty()
                    || slopes.len() != knots.len() + 1
                    || !sorted
                    || slopes.iter().any(|s| s.abs() > 1.0 + LIPSCHITZ_SLACK)
                {
                    return Err(Error::invalid(format!("test function {self:?} is not 1-Lipschitz on R^{dim}")));
                }
                Ok(())
            }
            TestFunction::Custom { f, lipschitz } => {
                if !(*lipschitz > 0.0) {
                    return Err(Error::invalid("custom test function needs a positive Lipschitz constant"));
                }
                for (a, x) in probes.iter().enumerate() {
                    for y in probes.iter().skip(a + 1) {
                        let dist = x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                        if dist == 0.0 {
                            continue;
                        }
                        let quotient = (f(x) - f(y)).abs() / dist;
                        if quotient > lipschitz * (1.0 + LIPSCHITZ_SLACK) + LIPSCHITZ_SLACK {
                            return Err(Error::invalid(format!(
                                "custom test function has difference quotient {quotient} above its constant {lipschitz}"
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// `max_Phi (int Phi dmu - int Phi dnu)` over the family, a lower bound on `W_1(mu, nu)`.
///
/// `Phi = 0` is always admissible, so the result is never negative.
pub fn kr_dual_lower_bound(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, family: &[TestFunction]) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    // Probe custom functions on (at most 64 of) the support points of both measures.
    let probes: Vec<&[f64]> = mu
        .iter()
        .map(|(x, _)| x)
        .take(32)
        .chain(nu.iter().map(|(x, _)| x).take(32))
        .collect();
    let mut best = 0.0f64;
    for phi in family {
        phi.certify(mu.dim(), &probes)?;
        let gap = mu.integrate(|x| phi.eval(x)) - nu.integrate(|x| phi.eval(x));
        best = best.max(gap);
    }
    Ok(best)
}

/// Coordinate projections, ramps and distance functions anchored at `n_anchors` quantiles of the
/// pooled support, each with both signs.
pub fn standard_family(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, n_anchors: usize) -> Vec<TestFunction> {
    let dim = mu.dim();
    let mut family = vec![TestFunction::Zero];
    for coord in 0..dim {
        let mut values: Vec<f64> = mu
            .iter()
            .chain(nu.iter())
            .map(|(x, _)| x[coord])
            .collect();
        values.sort_by(f64::total_cmp);
        for sign in [1.0, -1.0] {
            family.push(TestFunction::Projection { coord, sign });
        }
        for q in 1..=n_anchors {
            let rank = (q * (values.len() - 1)) / (n_anchors + 1);
            let anchor = values[rank];
            for sign in [1.0, -1.0] {
                family.push(TestFunction::ramp_up(coord, anchor, sign));
                family.push(TestFunction::ramp_down(coord, anchor, sign));
                family.push(TestFunction::distance(coord, anchor, sign));
            }
        }
    }
    family
}
