use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseGrid, Stream};
use crate::ot::EmpiricalMeasure;

/// Number of random points used to validate user-supplied gradients.
pub const GRADIENT_CHECK_POINTS: u32 = 100;
const GRADIENT_CHECK_SEED: u64 = 0x6772_6164;
const GRADIENT_CHECK_TOLERANCE: f64 = 1e-5;

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// User-supplied potential: a value oracle and a gradient oracle.
#[derive(Clone)]
pub struct CustomPotential {
    pub name: String,
    pub value: ValueFn,
    pub gradient: GradientFn,
    /// Lipschitz constant of the gradient, if globally bounded.
    pub gradient_lipschitz: Option<f64>,
    pub convex: bool,
}

impl CustomPotential {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        CustomPotential {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            gradient_lipschitz: None,
            convex: false,
        }
    }

    pub fn with_gradient_lipschitz(mut self, bound: f64) -> Self {
        self.gradient_lipschitz = Some(bound);
        self
    }

    pub fn convex(mut self) -> Self {
        self.convex = true;
        self
    }
}

/// Serializable description of a potential, used in manifests and fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    Zero,
    Quadratic { strength: f64 },
    Cubic { strength: f64 },
    Custom { name: String },
}

/// Scalar potential on R^k, with an analytic gradient.
#[derive(Clone)]
pub enum Potential {
    Zero,
    /// `strength * |z|^2 / 2`
    Quadratic { strength: f64 },
    /// `strength * |z|^3`
    Cubic { strength: f64 },
    Custom(CustomPotential),
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind())
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Potential {
    pub fn kind(&self) -> PotentialKind {
        match self {
            Potential::Zero => PotentialKind::Zero,
            Potential::Quadratic { strength } => PotentialKind::Quadratic { strength: *strength },
            Potential::Cubic { strength } => PotentialKind::Cubic { strength: *strength },
            Potential::Custom(c) => PotentialKind::Custom { name: c.name.clone() },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic { strength } => 0.5 * strength * z.iter().map(|v| v * v).sum::<f64>(),
            Potential::Cubic { strength } => strength * norm(z).powi(3),
            Potential::Custom(c) => (c.value)(z),
        }
    }

    /// Adds `grad(z)` into `out`.
    #[inline]
    pub fn add_gradient(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Potential::Zero => {}
            Potential::Quadratic { strength } => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o += strength * v;
                }
            }
            Potential::Cubic { strength } => {
                let scale = 3.0 * strength * norm(z);
                for (o, v) in out.iter_mut().zip(z) {
                    *o += scale * v;
                }
            }
            Potential::Custom(c) => {
                let mut g = vec![0.0; z.len()];
                (c.gradient)(z, &mut g);
                for (o, v) in out.iter_mut().zip(&g) {
                    *o += v;
                }
            }
        }
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        self.add_gradient(z, &mut g);
        g
    }

    /// Global Lipschitz constant of the gradient; `None` when it grows without bound.
    pub fn gradient_lipschitz(&self) -> Option<f64> {
        match self {
            Potential::Zero => Some(0.0),
            Potential::Quadratic { strength } => Some(strength.abs()),
            Potential::Cubic { strength } if *strength == 0.0 => Some(0.0),
            Potential::Cubic { .. } => None,
            Potential::Custom(c) => c.gradient_lipschitz,
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            Potential::Zero => true,
            Potential::Quadratic { strength } | Potential::Cubic { strength } => *strength >= 0.0,
            Potential::Custom(c) => c.convex,
        }
    }

    fn probe_points(dim: usize) -> impl Iterator<Item = Vec<f64>> {
        let grid = NoiseGrid::new(GRADIENT_CHECK_SEED, 1.0);
        (0..GRADIENT_CHECK_POINTS).map(move |i| {
            let mut z = vec![0.0; dim];
            grid.fill_standard_normals(Stream::Auxiliary, 0, i, 0, &mut z);
            z.iter_mut().for_each(|v| *v *= 2.0);
            z
        })
    }

    /// Compare the gradient oracle against central differences with step `1e-6 (1 + |z|)`.
    pub fn check_gradient(&self, dim: usize, label: &str) -> Result<()> {
        let mut problems = Vec::new();
        for z in Self::probe_points(dim) {
            let analytic = self.gradient(&z);
            let h = 1e-6 * (1.0 + norm(&z));
            let scale = 1.0 + self.value(&z).abs() + norm(&analytic);
            for c in 0..dim {
                let mut plus = z.clone();
                let mut minus = z.clone();
                plus[c] += h;
                minus[c] -= h;
                let numeric = (self.value(&plus) - self.value(&minus)) / (2.0 * h);
                if (numeric - analytic[c]).abs() > GRADIENT_CHECK_TOLERANCE * scale {
                    problems.push(format!(
                        "{label}: gradient component {c} at {z:?} is {} but finite differences give {numeric}",
                        analytic[c]
                    ));
                    break;
                }
            }
            if problems.len() >= 3 {
                break;
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Check `W(z) = W(-z)` on random points.
    pub fn check_even(&self, dim: usize, label: &str) -> Result<()> {
        for z in Self::probe_points(dim) {
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            let (a, b) = (self.value(&z), self.value(&neg));
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::invalid(format!(
                    "{label} must be even: W(z)={a} but W(-z)={b} at z={z:?}"
                )));
            }
        }
        Ok(())
    }

    /// Prepared evaluator of `x -> int grad W(x - y) dmu(y)`.
    pub(crate) fn interaction_field<'a>(&'a self, measure: Cow<'a, EmpiricalMeasure>) -> InteractionField<'a> {
        match self {
            Potential::Zero => InteractionField::Zero,
            Potential::Quadratic { strength } => InteractionField::Quadratic {
                strength: *strength,
                mean: measure.mean(),
            },
            Potential::Cubic { strength } if measure.dim() == 1 => {
                InteractionField::cubic_line(*strength, &measure)
            }
            _ => InteractionField::Direct {
                potential: self,
                measure,
            },
        }
    }
}

/// `x -> int grad W(x - y) dmu(y)` with exact shortcuts for the built-in potentials.
pub(crate) enum InteractionField<'a> {
    Zero,
    /// `strength * (x - mean)`.
    Quadratic { strength: f64, mean: Vec<f64> },
    /// `3 s int |x - y| (x - y) dmu(y)` on the line, from weighted prefix sums of 1, y, y^2
    /// over the sorted support.
    CubicLine {
        strength: f64,
        sorted: Vec<f64>,
        prefix: Vec<[f64; 3]>,
    },
    Direct {
        potential: &'a Potential,
        measure: Cow<'a, EmpiricalMeasure>,
    },
}

impl<'a> InteractionField<'a> {
    fn cubic_line(strength: f64, measure: &EmpiricalMeasure) -> Self {
        let mut atoms: Vec<(f64, f64)> = measure.iter().map(|(y, w)| (y[0], w)).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix = Vec::with_capacity(atoms.len() + 1);
        let mut acc = [0.0f64; 3];
        prefix.push(acc);
        for &(y, w) in &atoms {
            acc[0] += w;
            acc[1] += w * y;
            acc[2] += w * y * y;
            prefix.push(acc);
        }
        InteractionField::CubicLine {
            strength,
            sorted: atoms.into_iter().map(|(y, _)| y).collect(),
            prefix,
        }
    }

    #[inline]
    pub(crate) fn add_to(&self, x: &[f64], out: &mut [f64]) {
        match self {
            InteractionField::Zero => {}
            InteractionField::Quadratic { strength, mean } => {
                for ((o, xi), m) in out.iter_mut().zip(x).zip(mean) {
                    *o += strength * (xi - m);
                }
            }
            InteractionField::CubicLine {
                strength,
                sorted,
                prefix,
            } => {
                let t = x[0];
                let k = sorted.partition_point(|&y| y < t);
                let below = prefix[k];
                let total = prefix[sorted.len()];
                let above = [total[0] - below[0], total[1] - below[1], total[2] - below[2]];
                // sum w (t - y)^2 = W t^2 - 2 t S1 + S2 on each side
                let left = below[0] * t * t - 2.0 * t * below[1] + below[2];
                let right = above[0] * t * t - 2.0 * t * above[1] + above[2];
                out[0] += 3.0 * strength * (left - right);
            }
            InteractionField::Direct { potential, measure } => {
                let mut z = vec![0.0; x.len()];
                let mut acc = vec![0.0; x.len()];
                let mut g = vec![0.0; x.len()];
                for (y, w) in measure.iter() {
                    for ((zi, xi), yi) in z.iter_mut().zip(x).zip(y) {
                        *zi = xi - yi;
                    }
                    g.iter_mut().for_each(|v| *v = 0.0);
                    potential.add_gradient(&z, &mut g);
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        *a += w * gi;
                    }
                }
                for (o, a) in out.iter_mut().zip(&acc) {
                    *o += a;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(p: &Potential, x: &[f64], m: &EmpiricalMeasure) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        InteractionField::Direct {
            potential: p,
            measure: Cow::Borrowed(m),
        }
        .add_to(x, &mut out);
        out
    }

    #[test]
    fn builtin_gradients_match_finite_differences() {
        for p in [
            Potential::Zero,
            Potential::Quadratic { strength: 1.5 },
            Potential::Cubic { strength: 1.0 },
        ] {
            for dim in 1..=3 {
                p.check_gradient(dim, "test").unwrap();
                p.check_even(dim, "test").unwrap();
            }
        }
    }

    #[test]
    fn cubic_gradient_values() {
        let p = Potential::Cubic { strength: 1.0 };
        assert_eq!(p.gradient(&[1.0]), vec![3.0]);
        assert_eq!(p.gradient(&[-2.0]), vec![-12.0]);
    }

    #[test]
    fn sign_error_is_caught() {
        let wrong = Potential::Custom(CustomPotential::new(
            "flipped",
            |z| 0.5 * z[0] * z[0],
            |z, g| g[0] = -z[0],
        ));
        assert!(wrong.check_gradient(1, "V").is_err());
    }

    #[test]
    fn odd_potential_is_caught() {
        let odd = Potential::Custom(CustomPotential::new("odd", |z| z[0].powi(3), |z, g| g[0] = 3.0 * z[0] * z[0]));
        odd.check_gradient(1, "W").unwrap();
        assert!(odd.check_even(1, "W").is_err());
    }

    #[test]
    fn shortcuts_agree_with_direct_sums() {
        let points = vec![-1.3, 0.2, 0.2, 2.5, -0.7, 4.0, 1.1];
        let weights = vec![0.1, 0.2, 0.05, 0.15, 0.2, 0.1, 0.2];
        let m = EmpiricalMeasure::weighted(1, points, weights).unwrap();
        for p in [Potential::Quadratic { strength: 2.0 }, Potential::Cubic { strength: 0.5 }] {
            let field = p.interaction_field(Cow::Borrowed(&m));
            for x in [-3.0, -1.3, 0.0, 0.2, 1.0, 4.0, 7.5] {
                let mut fast = vec![0.0];
                field.add_to(&[x], &mut fast);
                let slow = direct(&p, &[x], &m);
                assert!((fast[0] - slow[0]).abs() < 1e-12 * (1.0 + slow[0].abs()), "{p:?} at {x}: {fast:?} vs {slow:?}");
            }
        }
    }
}
