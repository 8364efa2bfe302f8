use crate::error::{Error, Result};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Weighted point cloud in R^d. Points are stored row-major, `dim` values per point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    /// Uniform measure `1/n sum delta_{x_i}`; every weight is exactly `1.0 / n`.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        Self::check_shape(dim, &points)?;
        let n = points.len() / dim;
        let w = 1.0 / n as f64;
        Ok(EmpiricalMeasure {
            dim,
            points,
            weights: vec![w; n],
            uniform: true,
        })
    }

    pub fn weighted(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(dim, &points)?;
        let n = points.len() / dim;
        let mut problems = Vec::new();
        if weights.len() != n {
            problems.push(format!("{} weights for {n} points", weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            problems.push("weights must be finite and nonnegative".to_string());
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            problems.push(format!("weights sum to {total}, expected 1"));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        let uniform = weights.iter().all(|w| *w == weights[0]);
        Ok(EmpiricalMeasure {
            dim,
            points,
            weights,
            uniform,
        })
    }

    fn check_shape(dim: usize, points: &[f64]) -> Result<()> {
        if dim == 0 {
            return Err(Error::invalid("measure dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::invalid("measure must have at least one point"));
        }
        if points.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates is not a multiple of dimension {dim}",
                points.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("measure points must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Weighted mean of the support.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (x, w) in self.iter() {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += w * xi;
            }
        }
        mean
    }

    /// `int phi d(self)`.
    pub fn integrate(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * phi(x)).sum()
    }

    /// Keep coordinates `range` of every point (e.g. the position block of a phase-space cloud).
    pub fn project(&self, range: std::ops::Range<usize>) -> EmpiricalMeasure {
        assert!(range.end <= self.dim && !range.is_empty(), "projection out of range");
        let points = self
            .points
            .chunks_exact(self.dim)
            .flat_map(|x| x[range.clone()].iter().copied())
            .collect();
        EmpiricalMeasure {
            dim: range.len(),
            points,
            weights: self.weights.clone(),
            uniform: self.uniform,
        }
    }

    /// Uniform measure on the points with the given indices.
    pub fn subsample(&self, indices: &[usize]) -> Result<EmpiricalMeasure> {
        let points = indices.iter().flat_map(|&i| self.point(i).iter().copied()).collect();
        EmpiricalMeasure::uniform(self.dim, points)
    }

    /// Same measure with every point shifted by `h`.
    pub fn translated(&self, h: &[f64]) -> EmpiricalMeasure {
        assert_eq!(h.len(), self.dim, "dimension mismatch");
        let points = self
            .points
            .chunks_exact(self.dim)
            .flat_map(|x| x.iter().zip(h).map(|(a, b)| a + b))
            .collect();
        EmpiricalMeasure {
            dim: self.dim,
            points,
            weights: self.weights.clone(),
            uniform: self.uniform,
        }
    }

    /// Canonical form: atoms sorted lexicographically, coincident atoms merged, zero-mass atoms dropped.
    pub fn canonical(&self) -> Vec<(Vec<f64>, f64)> {
        let mut atoms: Vec<(Vec<f64>, f64)> = self
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(x, w)| (x.to_vec(), w))
            .collect();
        atoms.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut merged: Vec<(Vec<f64>, f64)> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => merged.push((x, w)),
            }
        }
        merged
    }
}
