use super::{
    DiffusionSpec, DriftKernel, Family, GranularInteraction, InitialLaw, KineticInteraction, LinearRestoring,
    ModelSpec, NoDrift, Potential, VectorMap,
};
use crate::error::{Error, Result};

/// Taming exponent applied to kernels whose drift grows superlinearly.
pub const SUPERLINEAR_TAMING_EXPONENT: f64 = 1.0;

fn validate_potential(potential: &Potential, dim: usize, label: &str, require_even: bool) -> Result<()> {
    if let Potential::Custom(_) = potential {
        potential.check_gradient(dim, label)?;
    }
    if require_even {
        potential.check_even(dim, label)?;
    }
    Ok(())
}

/// Granular media model: `b(v, w) = grad V(v) + grad W(v - w)`, `sigma = sqrt(2) I`.
///
/// Kernels with an unbounded gradient Lipschitz constant (the cubic interaction) are tamed.
/// The initial law defaults to the standard Gaussian.
pub fn granular_media_model(confinement: Potential, interaction: Potential, dim: usize) -> Result<ModelSpec> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut problems = Vec::new();
    if let Err(Error::Validation(p)) = validate_potential(&confinement, dim, "confinement V", false) {
        problems.extend(p);
    }
    if let Err(Error::Validation(p)) = validate_potential(&interaction, dim, "interaction W", true) {
        problems.extend(p);
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let convex = confinement.is_convex() && interaction.is_convex();
    let family = Family::Granular {
        confinement: confinement.kind(),
        interaction: interaction.kind(),
    };
    let kernel = GranularInteraction {
        confinement,
        interaction,
        dim,
    };
    let taming = if kernel.confinement.gradient_lipschitz().is_none() || kernel.interaction.gradient_lipschitz().is_none() {
        SUPERLINEAR_TAMING_EXPONENT
    } else {
        0.0
    };
    let mut model = ModelSpec::new(
        "granular",
        family,
        DriftKernel::new(kernel).with_taming_exponent(taming),
        DiffusionSpec::standard(dim),
        InitialLaw::standard_gaussian(dim),
    )?;
    model.convex = convex;
    Ok(model)
}

/// Vlasov-Fokker-Planck model on `(x, v)` in `R^{2 d'}`:
/// `b((x,v),(y,w)) = (-v, A(v) + B(x) + grad U(x - y))`, noise only on the velocity block.
pub fn vlasov_fokker_planck_model(
    interaction: Potential,
    friction: VectorMap,
    confinement: VectorMap,
    half_dim: usize,
) -> Result<ModelSpec> {
    if half_dim == 0 {
        return Err(Error::invalid("d' must be positive"));
    }
    validate_potential(&interaction, half_dim, "interaction U", false)?;
    let dim = 2 * half_dim;
    let mut sigma = vec![0.0; dim * dim];
    for i in half_dim..dim {
        sigma[i * dim + i] = std::f64::consts::SQRT_2;
    }
    let family = Family::Kinetic {
        interaction: interaction.kind(),
        friction: format!("{friction:?}"),
        confinement: format!("{confinement:?}"),
    };
    let kernel = KineticInteraction {
        interaction,
        friction,
        confinement,
        half_dim,
    };
    let taming = if kernel.lipschitz_bound_is_global() {
        0.0
    } else {
        SUPERLINEAR_TAMING_EXPONENT
    };
    ModelSpec::new(
        "vlasov-fokker-planck",
        family,
        DriftKernel::new(kernel).with_taming_exponent(taming),
        DiffusionSpec::new(dim, sigma)?,
        InitialLaw::standard_gaussian(dim),
    )
}

impl KineticInteraction {
    fn lipschitz_bound_is_global(&self) -> bool {
        use super::Interaction;
        self.lipschitz_bound().is_some()
    }
}

/// `b(X, Y) = rate X`, `sigma = sqrt(2) I`: Ornstein-Uhlenbeck particles with no interaction.
pub fn linear_test_model(rate: f64, dim: usize) -> Result<ModelSpec> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    ModelSpec::new(
        "linear",
        Family::Linear { rate },
        DriftKernel::new(LinearRestoring { rate, dim }),
        DiffusionSpec::standard(dim),
        InitialLaw::standard_gaussian(dim),
    )
}

/// `b == 0` with diffusion `sigma = scale I`.
pub fn free_model(dim: usize, sigma_scale: f64) -> Result<ModelSpec> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    ModelSpec::new(
        "free",
        Family::Free,
        DriftKernel::new(NoDrift { dim }),
        DiffusionSpec::scaled_identity(dim, sigma_scale),
        InitialLaw::standard_gaussian(dim),
    )
}

/// Mean at time t of `dX = sqrt(2) dB - rate X dt` started at mean `m0`.
pub fn ou_mean(m0: f64, rate: f64, t: f64) -> f64 {
    m0 * (-rate * t).exp()
}

/// Variance at time t of `dX = sqrt(2) dB - rate X dt` started with variance `v0`.
pub fn ou_variance(v0: f64, rate: f64, t: f64) -> f64 {
    1.0 / rate + (v0 - 1.0 / rate) * (-2.0 * rate * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mean_field_drift, CustomPotential};
    use crate::ot::EmpiricalMeasure;

    #[test]
    fn ou_from_granular_family() {
        let model = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Zero, 1).unwrap();
        assert_eq!(model.drift.eval(&[0.7], &[5.0]), vec![0.7]);
        assert!(!model.drift.depends_on_measure());
        assert_eq!(model.drift.taming_exponent(), 0.0);
    }

    #[test]
    fn quadratic_interaction_kernel() {
        let model = granular_media_model(Potential::Zero, Potential::Quadratic { strength: 1.0 }, 1).unwrap();
        assert_eq!(model.drift.eval(&[2.0], &[0.5]), vec![1.5]);
        assert_eq!(model.drift.lipschitz_bound(), Some(1.0));
    }

    #[test]
    fn cubic_interaction_kernel_matches_finite_differences() {
        let model = granular_media_model(
            Potential::Quadratic { strength: 1.0 },
            Potential::Cubic { strength: 1.0 },
            1,
        )
        .unwrap();
        assert_eq!(model.drift.taming_exponent(), 1.0);
        assert_eq!(model.drift.lipschitz_bound(), None);
        let w = |z: f64| z.abs().powi(3);
        for (v, u) in [(0.3, -1.2), (2.0, 1.5), (-0.4, 0.9)] {
            let h = 1e-6 * (1.0 + f64::abs(v - u));
            let fd = v + (w(v - u + h) - w(v - u - h)) / (2.0 * h);
            let exact = model.drift.eval(&[v], &[u])[0];
            assert!((exact - fd).abs() < 1e-6, "{exact} vs {fd}");
            assert_eq!(exact, v + 3.0 * (v - u).abs() * (v - u));
        }
    }

    #[test]
    fn non_even_interaction_rejected() {
        let odd = Potential::Custom(CustomPotential::new("odd", |z| z[0], |_, g| g[0] = 1.0));
        let err = granular_media_model(Potential::Zero, odd, 1).unwrap_err();
        assert!(err.to_string().contains("even"));
    }

    #[test]
    fn kinetic_ou_kernel() {
        let model = vlasov_fokker_planck_model(
            Potential::Zero,
            VectorMap::Linear { coefficient: 1.0 },
            VectorMap::Linear { coefficient: 1.0 },
            1,
        )
        .unwrap();
        assert_eq!(model.drift.eval(&[0.5, 2.0], &[9.0, 9.0]), vec![-2.0, 2.5]);
        assert_eq!(model.diffusion.sigma(), &[0.0, 0.0, 0.0, std::f64::consts::SQRT_2]);
    }

    #[test]
    fn kinetic_interaction_term() {
        let model = vlasov_fokker_planck_model(
            Potential::Quadratic { strength: 1.0 },
            VectorMap::Linear { coefficient: 0.0 },
            VectorMap::Linear { coefficient: 0.0 },
            1,
        )
        .unwrap();
        // grad U(x - y) = x - y in the velocity component
        assert_eq!(model.drift.eval(&[1.5, 0.0], &[0.25, 7.0]), vec![-0.0, 1.25]);
        let m = EmpiricalMeasure::uniform(2, vec![0.25, 7.0, 0.75, -1.0]).unwrap();
        assert_eq!(mean_field_drift(&model.drift, &[1.5, 0.0], &m), vec![0.0, 1.0]);
    }

    #[test]
    fn ou_closed_forms() {
        assert!((ou_mean(1.0, 1.0, 1.0) - 0.36787944117144233).abs() < 1e-15);
        assert_eq!(ou_variance(1.0, 1.0, 3.7), 1.0);
        assert!((ou_variance(0.0, 1.0, 50.0) - 1.0).abs() < 1e-12);
        assert!(linear_test_model(0.0, 1).is_err());
    }

    #[test]
    fn steady_states() {
        let ou = linear_test_model(2.0, 1).unwrap();
        assert_eq!(ou.steady_state().unwrap(), InitialLaw::isotropic_gaussian(vec![0.0], 0.5).unwrap());
        let gm = granular_media_model(
            Potential::Quadratic { strength: 1.0 },
            Potential::Quadratic { strength: 1.0 },
            1,
        )
        .unwrap();
        assert_eq!(gm.steady_state().unwrap(), InitialLaw::isotropic_gaussian(vec![0.0], 0.5).unwrap());
        let cubic = granular_media_model(Potential::Quadratic { strength: 1.0 }, Potential::Cubic { strength: 1.0 }, 1).unwrap();
        assert!(cubic.steady_state().is_none());
    }
}
