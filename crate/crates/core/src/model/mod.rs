//! Mean-field models: pairwise drift kernel, diffusion factor and initial law.
//!
//! Sign convention: the process solves `dX = sigma dB - b[X, f] dt`, so a kernel
//! pointing away from the origin pulls particles back towards it.

mod families;
mod initial;
mod kernel;
mod observable;
mod potential;

use serde::{Deserialize, Serialize};

pub use families::{
    free_model, granular_media_model, linear_test_model, ou_mean, ou_variance, vlasov_fokker_planck_model,
};
pub use initial::InitialLaw;
pub use kernel::{
    mean_field_drift, DriftKernel, GranularInteraction, Interaction, KineticInteraction, LinearRestoring,
    MeanField, NoDrift, VectorMap,
};
pub use observable::Observable;
pub use potential::{CustomPotential, Potential, PotentialKind, GRADIENT_CHECK_POINTS};

use crate::error::{Error, Result};

/// Diffusion factor `sigma` and the derived matrix `a = sigma sigma^T / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    dim: usize,
    sigma: Vec<f64>,
    a: Vec<f64>,
}

impl DiffusionSpec {
    /// `sigma` is row-major `dim x dim`.
    pub fn new(dim: usize, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != dim * dim || dim == 0 {
            return Err(Error::invalid(format!(
                "sigma has {} entries, expected {}",
                sigma.len(),
                dim * dim
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sigma must be finite"));
        }
        let a = Self::half_gram(dim, &sigma);
        Ok(DiffusionSpec { dim, sigma, a })
    }

    /// `sigma sigma^T / 2`.
    pub fn half_gram(dim: usize, sigma: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let s: f64 = (0..dim).map(|k| sigma[i * dim + k] * sigma[j * dim + k]).sum();
                a[i * dim + j] = s / 2.0;
            }
        }
        a
    }

    /// `scale * I`.
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut sigma = vec![0.0; dim * dim];
        for i in 0..dim {
            sigma[i * dim + i] = scale;
        }
        Self::new(dim, sigma).expect("identity diffusion is valid")
    }

    /// `sqrt(2) I`, i.e. `a = I`.
    pub fn standard(dim: usize) -> Self {
        Self::scaled_identity(dim, std::f64::consts::SQRT_2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// `out = sigma dw`.
    #[inline]
    pub fn apply(&self, dw: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.sigma[i * d..(i + 1) * d];
            *o = row.iter().zip(dw).map(|(s, w)| s * w).sum();
        }
    }
}

/// Which built-in family a model came from; drives closed-form oracles and fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Free,
    Linear {
        rate: f64,
    },
    Granular {
        confinement: PotentialKind,
        interaction: PotentialKind,
    },
    Kinetic {
        interaction: PotentialKind,
        friction: String,
        confinement: String,
    },
    Custom,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub family: Family,
    pub drift: DriftKernel,
    pub diffusion: DiffusionSpec,
    pub initial_law: InitialLaw,
    /// Whether the granular potentials are declared convex.
    pub convex: bool,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        family: Family,
        drift: DriftKernel,
        diffusion: DiffusionSpec,
        initial_law: InitialLaw,
    ) -> Result<Self> {
        let (d, s, f) = (drift.dim(), diffusion.dim(), initial_law.dim());
        if d != s || d != f {
            return Err(Error::invalid(format!(
                "dimension mismatch: drift {d}, diffusion {s}, initial law {f}"
            )));
        }
        Ok(ModelSpec {
            name: name.into(),
            family,
            drift,
            diffusion,
            initial_law,
            convex: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn with_initial_law(mut self, law: InitialLaw) -> Result<Self> {
        if law.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "initial law has dimension {}, model has {}",
                law.dim(),
                self.dim()
            )));
        }
        self.initial_law = law;
        Ok(self)
    }

    pub fn with_diffusion(mut self, diffusion: DiffusionSpec) -> Result<Self> {
        if diffusion.dim() != self.dim() {
            return Err(Error::invalid("diffusion dimension does not match the model"));
        }
        self.diffusion = diffusion;
        Ok(self)
    }

    /// The unique stationary law, when it is known in closed form.
    ///
    /// Linear model with rate r: `N(0, I / r)`. Granular model with `V = a|v|^2/2` and
    /// `W = k|z|^2/2` (or `W = 0`): `N(0, I / (a + k))`, since the mean relaxes to 0
    /// at rate a and each particle then sees the linear drift `(a + k) v`.
    pub fn steady_state(&self) -> Option<InitialLaw> {
        let standard = self.diffusion == DiffusionSpec::standard(self.dim());
        if !standard {
            return None;
        }
        let variance = match &self.family {
            Family::Linear { rate } if *rate > 0.0 => 1.0 / rate,
            Family::Granular {
                confinement: PotentialKind::Quadratic { strength: a },
                interaction,
            } if *a > 0.0 => match interaction {
                PotentialKind::Zero => 1.0 / a,
                PotentialKind::Quadratic { strength: k } if *k >= 0.0 => 1.0 / (a + k),
                _ => return None,
            },
            _ => return None,
        };
        InitialLaw::isotropic_gaussian(vec![0.0; self.dim()], variance).ok()
    }
}
