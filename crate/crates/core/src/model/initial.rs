use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseGrid, Stream};

const MIXTURE_SELECT_INDEX: u32 = 1 << 20;

/// Initial law f_0. Only families with closed-form second moments are offered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass {
        at: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        /// Row-major covariance.
        covariance: Vec<f64>,
        #[serde(skip)]
        cholesky: Vec<f64>,
    },
    UniformBox {
        low: Vec<f64>,
        high: Vec<f64>,
    },
    Mixture {
        components: Vec<(f64, InitialLaw)>,
    },
}

/// Lower-triangular factor of a symmetric positive semidefinite matrix.
fn cholesky(dim: usize, a: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                let scale = 1e-12 * (1.0 + a[i * dim + i].abs());
                if s < -scale {
                    return Err(Error::invalid("covariance is not positive semidefinite"));
                }
                l[i * dim + i] = s.max(0.0).sqrt();
            } else if l[j * dim + j] > 0.0 {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

impl InitialLaw {
    pub fn point_mass(at: Vec<f64>) -> Result<Self> {
        if at.is_empty() || at.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point mass needs a finite, nonempty location"));
        }
        Ok(InitialLaw::PointMass { at })
    }

    pub fn gaussian(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let mut problems = Vec::new();
        if d == 0 {
            problems.push("gaussian mean must be nonempty".to_string());
        }
        if covariance.len() != d * d {
            problems.push(format!("covariance has {} entries, expected {}", covariance.len(), d * d));
        }
        if mean.iter().chain(&covariance).any(|v| !v.is_finite()) {
            problems.push("gaussian parameters must be finite".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        for i in 0..d {
            for j in 0..i {
                if covariance[i * d + j] != covariance[j * d + i] {
                    return Err(Error::invalid("covariance must be symmetric"));
                }
            }
        }
        let cholesky = cholesky(d, &covariance)?;
        Ok(InitialLaw::Gaussian {
            mean,
            covariance,
            cholesky,
        })
    }

    /// `N(mean, variance * I)`.
    pub fn isotropic_gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance >= 0.0) {
            return Err(Error::invalid("variance must be nonnegative"));
        }
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = variance;
        }
        Self::gaussian(mean, cov)
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::isotropic_gaussian(vec![0.0; dim], 1.0).expect("standard gaussian is valid")
    }

    pub fn uniform_box(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::invalid("uniform box needs finite low <= high of equal, nonzero length"));
        }
        Ok(InitialLaw::UniformBox { low, high })
    }

    pub fn mixture(components: Vec<(f64, InitialLaw)>) -> Result<Self> {
        let mut problems = Vec::new();
        if components.is_empty() {
            problems.push("mixture needs at least one component".to_string());
        } else {
            let d = components[0].1.dim();
            if components.iter().any(|(_, c)| c.dim() != d) {
                problems.push("mixture components must share a dimension".to_string());
            }
            if components.iter().any(|(w, _)| !(*w >= 0.0)) {
                problems.push("mixture weights must be nonnegative".to_string());
            }
            let total: f64 = components.iter().map(|(w, _)| w).sum();
            if (total - 1.0).abs() > 1e-12 {
                problems.push(format!("mixture weights sum to {total}, expected 1"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(InitialLaw::Mixture { components })
    }

    /// Restore derived data after deserialization.
    pub fn rebuilt(self) -> Result<Self> {
        match self {
            InitialLaw::PointMass { at } => Self::point_mass(at),
            InitialLaw::Gaussian { mean, covariance, .. } => Self::gaussian(mean, covariance),
            InitialLaw::UniformBox { low, high } => Self::uniform_box(low, high),
            InitialLaw::Mixture { components } => Self::mixture(
                components
                    .into_iter()
                    .map(|(w, c)| Ok((w, c.rebuilt()?)))
                    .collect::<Result<_>>()?,
            ),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::PointMass { at } => at.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::UniformBox { low, .. } => low.len(),
            InitialLaw::Mixture { components } => components[0].1.dim(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::PointMass { at } => at.clone(),
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::UniformBox { low, high } => low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            InitialLaw::Mixture { components } => {
                let mut m = vec![0.0; self.dim()];
                for (w, c) in components {
                    for (mi, ci) in m.iter_mut().zip(c.mean()) {
                        *mi += w * ci;
                    }
                }
                m
            }
        }
    }

    /// `E|X|^2`, in closed form.
    pub fn second_moment(&self) -> f64 {
        match self {
            InitialLaw::PointMass { at } => at.iter().map(|v| v * v).sum(),
            InitialLaw::Gaussian { mean, covariance, .. } => {
                let d = mean.len();
                mean.iter().map(|v| v * v).sum::<f64>() + (0..d).map(|i| covariance[i * d + i]).sum::<f64>()
            }
            InitialLaw::UniformBox { low, high } => low
                .iter()
                .zip(high)
                .map(|(l, h)| (l * l + l * h + h * h) / 3.0)
                .sum(),
            InitialLaw::Mixture { components } => components.iter().map(|(w, c)| w * c.second_moment()).sum(),
        }
    }

    /// Draw the sample for `(replica, particle)` into `out`, keyed on the `Initial` stream.
    pub fn sample(&self, grid: &NoiseGrid, replica: u32, particle: u32, out: &mut [f64]) {
        self.sample_keyed(grid, Stream::Initial, replica, particle, 0, out);
    }

    pub fn sample_keyed(&self, grid: &NoiseGrid, stream: Stream, replica: u32, particle: u32, slot: u32, out: &mut [f64]) {
        match self {
            InitialLaw::PointMass { at } => out.copy_from_slice(at),
            InitialLaw::Gaussian { mean, cholesky, .. } => {
                let d = mean.len();
                let mut z = vec![0.0; d];
                grid.fill_standard_normals(stream, replica, particle, slot, &mut z);
                for i in 0..d {
                    let mut v = mean[i];
                    for (k, zk) in z.iter().enumerate().take(i + 1) {
                        v += cholesky[i * d + k] * zk;
                    }
                    out[i] = v;
                }
            }
            InitialLaw::UniformBox { low, high } => {
                for (c, o) in out.iter_mut().enumerate() {
                    let u = grid.uniform(stream, replica, particle, slot, c as u32);
                    *o = low[c] + (high[c] - low[c]) * u;
                }
            }
            InitialLaw::Mixture { components } => {
                let u = grid.uniform(stream, replica, particle, slot, MIXTURE_SELECT_INDEX);
                let mut acc = 0.0;
                let mut chosen = components.len() - 1;
                for (k, (w, _)) in components.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = k;
                        break;
                    }
                }
                components[chosen]
                    .1
                    .sample_keyed(grid, stream, replica, particle, slot + 1, out);
            }
        }
    }

    /// `n` samples for replica `replica`, row-major.
    pub fn sample_many(&self, grid: &NoiseGrid, replica: u32, n: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        for (i, row) in out.chunks_exact_mut(d).enumerate() {
            self.sample(grid, replica, i as u32, row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(law: &InitialLaw, n: usize) -> (Vec<f64>, f64) {
        let grid = NoiseGrid::new(99, 1.0);
        let d = law.dim();
        let xs = law.sample_many(&grid, 0, n);
        let mut mean = vec![0.0; d];
        let mut m2 = 0.0;
        for row in xs.chunks_exact(d) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n as f64;
            }
            m2 += row.iter().map(|v| v * v).sum::<f64>() / n as f64;
        }
        (mean, m2)
    }

    #[test]
    fn second_moments_match_sampling() {
        let laws = [
            InitialLaw::point_mass(vec![1.0, -2.0]).unwrap(),
            InitialLaw::gaussian(vec![1.0, 0.5], vec![2.0, 0.6, 0.6, 1.0]).unwrap(),
            InitialLaw::uniform_box(vec![-1.0, 0.0], vec![3.0, 1.0]).unwrap(),
            InitialLaw::mixture(vec![
                (0.3, InitialLaw::isotropic_gaussian(vec![-2.0, 0.0], 0.5).unwrap()),
                (0.7, InitialLaw::uniform_box(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap()),
            ])
            .unwrap(),
        ];
        for law in &laws {
            let (mean, m2) = moments(law, 200_000);
            let expected = law.mean();
            for (a, b) in mean.iter().zip(&expected) {
                assert!((a - b).abs() < 0.02, "{law:?}: mean {mean:?} vs {expected:?}");
            }
            let rel = (m2 - law.second_moment()).abs() / law.second_moment();
            assert!(rel < 0.02, "{law:?}: second moment {m2} vs {}", law.second_moment());
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(InitialLaw::gaussian(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(InitialLaw::gaussian(vec![0.0, 0.0], vec![1.0, 0.1, 0.2, 1.0]).is_err());
        assert!(InitialLaw::uniform_box(vec![1.0], vec![0.0]).is_err());
        assert!(InitialLaw::mixture(vec![(0.5, InitialLaw::standard_gaussian(1))]).is_err());
        assert!(InitialLaw::isotropic_gaussian(vec![0.0], f64::INFINITY).is_err());
    }

    #[test]
    fn degenerate_gaussian_is_allowed() {
        let law = InitialLaw::gaussian(vec![0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let grid = NoiseGrid::new(1, 1.0);
        let mut x = [0.0; 2];
        law.sample(&grid, 0, 0, &mut x);
        assert!((x[0] - x[1]).abs() < 1e-12);
    }

    #[test]
    fn serde_round_trip_rebuilds_factor() {
        let law = InitialLaw::gaussian(vec![1.0], vec![4.0]).unwrap();
        let text = serde_json::to_string(&law).unwrap();
        let back: InitialLaw = serde_json::from_str(&text).unwrap();
        assert_eq!(back.rebuilt().unwrap(), law);
    }
}
