use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A Lipschitz observable `phi: R^d -> R` with its declared constant.
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    lipschitz_constant: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({}, L={})", self.name, self.lipschitz_constant)
    }
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        lipschitz_constant: f64,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lipschitz_constant > 0.0 && lipschitz_constant.is_finite()) {
            return Err(Error::invalid("observable Lipschitz constant must be positive and finite"));
        }
        Ok(Observable {
            name: name.into(),
            eval: Arc::new(eval),
            lipschitz_constant,
        })
    }

    /// `x -> x_coord`.
    pub fn coordinate(coord: usize) -> Self {
        Self::new(format!("x[{coord}]"), 1.0, move |x| x[coord]).expect("valid constant")
    }

    /// `x -> clamp(x_coord, -bound, bound)`, 1-Lipschitz and bounded.
    pub fn clipped_coordinate(coord: usize, bound: f64) -> Self {
        Self::new(format!("clip(x[{coord}], {bound})"), 1.0, move |x| x[coord].clamp(-bound, bound))
            .expect("valid constant")
    }

    /// Constant function; any positive constant is a valid Lipschitz bound, 1 is recorded.
    pub fn constant(value: f64) -> Self {
        Self::new(format!("const({value})"), 1.0, move |_| value).expect("valid constant")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz_constant
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// `phi / L`, which is 1-Lipschitz.
    pub fn normalized(&self) -> Observable {
        if self.lipschitz_constant == 1.0 {
            return self.clone();
        }
        let inner = self.eval.clone();
        let l = self.lipschitz_constant;
        Observable {
            name: format!("{}/{l}", self.name),
            eval: Arc::new(move |x| inner(x) / l),
            lipschitz_constant: 1.0,
        }
    }

    /// Largest difference quotient over all pairs of `points` (row-major, `dim` per point).
    pub fn max_difference_quotient(&self, dim: usize, points: &[f64]) -> f64 {
        let rows: Vec<&[f64]> = points.chunks_exact(dim).collect();
        let mut worst = 0.0f64;
        for (a, x) in rows.iter().enumerate() {
            for y in &rows[a + 1..] {
                let dist = x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                if dist > 0.0 {
                    worst = worst.max((self.eval(x) - self.eval(y)).abs() / dist);
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_observables_respect_their_constants() {
        let points: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() * 8.0).collect();
        for obs in [
            Observable::coordinate(0),
            Observable::clipped_coordinate(0, 2.0),
            Observable::constant(3.0),
        ] {
            assert!(obs.max_difference_quotient(1, &points) <= obs.lipschitz_constant() + 1e-12);
        }
    }

    #[test]
    fn normalization_rescales() {
        let obs = Observable::new("3x", 3.0, |x| 3.0 * x[0]).unwrap();
        let unit = obs.normalized();
        assert_eq!(unit.eval(&[2.0]), 2.0);
        assert_eq!(unit.lipschitz_constant(), 1.0);
        assert!(Observable::new("bad", 0.0, |x| x[0]).is_err());
    }
}
