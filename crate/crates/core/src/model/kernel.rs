use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use super::potential::{InteractionField, Potential};
use crate::ot::EmpiricalMeasure;

/// A pairwise drift `b(X, Y)` on R^d x R^d.
///
/// `eval` must be total on finite inputs. `prepare` may return an exact shortcut for
/// `X -> int b(X, Y) dmu(Y)`; kernels without one fall back to direct summation.
pub trait Interaction: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Global Lipschitz constant L with `|b(X,Y) - b(X',Y')| <= L (|X-X'| + |Y-Y'|)`,
    /// or `None` if the kernel is only locally Lipschitz.
    fn lipschitz_bound(&self) -> Option<f64>;

    /// False when `b(X, Y)` ignores `Y`.
    fn depends_on_measure(&self) -> bool {
        true
    }

    fn describe(&self) -> String;

    fn prepare<'a>(&'a self, _measure: &'a EmpiricalMeasure) -> Option<Box<dyn MeanField + 'a>> {
        None
    }
}

/// `X -> b[X, mu]` for one fixed measure.
pub trait MeanField: Send + Sync {
    /// Overwrites `out` with the mean-field drift at `x`.
    fn drift(&self, x: &[f64], out: &mut [f64]);
}

struct DirectField<'a> {
    interaction: &'a dyn Interaction,
    measure: &'a EmpiricalMeasure,
}

impl MeanField for DirectField<'_> {
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let mut term = vec![0.0; d];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (y, w) in self.measure.iter() {
            self.interaction.eval(x, y, &mut term);
            for (o, t) in out.iter_mut().zip(&term) {
                *o += w * t;
            }
        }
    }
}

/// Drift kernel plus the taming exponent used by the integrator (0 = no taming).
#[derive(Clone)]
pub struct DriftKernel {
    interaction: Arc<dyn Interaction>,
    taming_exponent: f64,
}

impl fmt::Debug for DriftKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftKernel")
            .field("interaction", &self.interaction.describe())
            .field("dim", &self.dim())
            .field("lipschitz_bound", &self.lipschitz_bound())
            .field("taming_exponent", &self.taming_exponent)
            .finish()
    }
}

impl DriftKernel {
    pub fn new(interaction: impl Interaction + 'static) -> Self {
        DriftKernel {
            interaction: Arc::new(interaction),
            taming_exponent: 0.0,
        }
    }

    pub fn with_taming_exponent(mut self, exponent: f64) -> Self {
        assert!(exponent >= 0.0, "taming exponent must be nonnegative");
        self.taming_exponent = exponent;
        self
    }

    pub fn dim(&self) -> usize {
        self.interaction.dim()
    }

    pub fn taming_exponent(&self) -> f64 {
        self.taming_exponent
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.interaction.lipschitz_bound()
    }

    pub fn depends_on_measure(&self) -> bool {
        self.interaction.depends_on_measure()
    }

    pub fn describe(&self) -> String {
        self.interaction.describe()
    }

    pub fn eval_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        self.interaction.eval(x, y, out);
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.interaction.eval(x, y, &mut out);
        out
    }

    /// Evaluator of `X -> b[X, measure]`.
    pub fn field<'a>(&'a self, measure: &'a EmpiricalMeasure) -> Box<dyn MeanField + 'a> {
        assert_eq!(measure.dim(), self.dim(), "measure dimension does not match the kernel");
        self.interaction.prepare(measure).unwrap_or_else(|| {
            Box::new(DirectField {
                interaction: &*self.interaction,
                measure,
            })
        })
    }

    /// Reference evaluator that always sums `w_j b(X, Y_j)` term by term.
    pub fn direct_field<'a>(&'a self, measure: &'a EmpiricalMeasure) -> Box<dyn MeanField + 'a> {
        assert_eq!(measure.dim(), self.dim(), "measure dimension does not match the kernel");
        Box::new(DirectField {
            interaction: &*self.interaction,
            measure,
        })
    }
}

/// `b[X, p] = int b(X, Y) dp(Y)`: the exact weighted average over the measure's support.
///
/// Panics if `x` or the measure has the wrong dimension.
pub fn mean_field_drift(kernel: &DriftKernel, x: &[f64], measure: &EmpiricalMeasure) -> Vec<f64> {
    assert_eq!(x.len(), kernel.dim(), "state dimension does not match the kernel");
    let mut out = vec![0.0; kernel.dim()];
    kernel.field(measure).drift(x, &mut out);
    out
}

/// `b == 0`.
#[derive(Debug, Clone)]
pub struct NoDrift {
    pub dim: usize,
}

struct ZeroField;

impl MeanField for ZeroField {
    fn drift(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

impl Interaction for NoDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(0.0)
    }
    fn depends_on_measure(&self) -> bool {
        false
    }
    fn describe(&self) -> String {
        "zero drift".into()
    }
    fn prepare<'a>(&'a self, _measure: &'a EmpiricalMeasure) -> Option<Box<dyn MeanField + 'a>> {
        Some(Box::new(ZeroField))
    }
}

/// `b(X, Y) = rate * X`, no interaction.
#[derive(Debug, Clone)]
pub struct LinearRestoring {
    pub rate: f64,
    pub dim: usize,
}

impl MeanField for LinearRestoring {
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.rate * xi;
        }
    }
}

impl Interaction for LinearRestoring {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        MeanField::drift(self, x, out);
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.rate.abs())
    }
    fn depends_on_measure(&self) -> bool {
        false
    }
    fn describe(&self) -> String {
        format!("linear restoring drift, rate {}", self.rate)
    }
    fn prepare<'a>(&'a self, _measure: &'a EmpiricalMeasure) -> Option<Box<dyn MeanField + 'a>> {
        Some(Box::new(self.clone()))
    }
}

/// Space-homogeneous granular media kernel `b(v, w) = grad V(v) + grad W(v - w)`.
#[derive(Debug, Clone)]
pub struct GranularInteraction {
    pub confinement: Potential,
    pub interaction: Potential,
    pub dim: usize,
}

struct GranularField<'a> {
    confinement: &'a Potential,
    interaction: InteractionField<'a>,
}

impl MeanField for GranularField<'_> {
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.confinement.add_gradient(x, out);
        self.interaction.add_to(x, out);
    }
}

impl Interaction for GranularInteraction {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.confinement.add_gradient(x, out);
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.interaction.add_gradient(&z, out);
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.confinement.gradient_lipschitz()? + self.interaction.gradient_lipschitz()?)
    }
    fn depends_on_measure(&self) -> bool {
        !self.interaction.is_zero()
    }
    fn describe(&self) -> String {
        format!(
            "granular media, V={:?}, W={:?}, d={}",
            self.confinement.kind(),
            self.interaction.kind(),
            self.dim
        )
    }
    fn prepare<'a>(&'a self, measure: &'a EmpiricalMeasure) -> Option<Box<dyn MeanField + 'a>> {
        Some(Box::new(GranularField {
            confinement: &self.confinement,
            interaction: self.interaction.interaction_field(Cow::Borrowed(measure)),
        }))
    }
}

/// A vector field on R^k used for friction `A(v)` and confinement `B(x)`.
#[derive(Clone)]
pub enum VectorMap {
    /// `coefficient * z`.
    Linear { coefficient: f64 },
    Custom {
        name: String,
        f: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
        lipschitz: Option<f64>,
    },
}

impl fmt::Debug for VectorMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorMap::Linear { coefficient } => write!(f, "Linear({coefficient})"),
            VectorMap::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl VectorMap {
    /// Adds the map's value at `z` into `out`.
    #[inline]
    pub fn add_value(&self, z: &[f64], out: &mut [f64]) {
        match self {
            VectorMap::Linear { coefficient } => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o += coefficient * v;
                }
            }
            VectorMap::Custom { f, .. } => {
                let mut tmp = vec![0.0; z.len()];
                f(z, &mut tmp);
                for (o, v) in out.iter_mut().zip(&tmp) {
                    *o += v;
                }
            }
        }
    }

    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            VectorMap::Linear { coefficient } => Some(coefficient.abs()),
            VectorMap::Custom { lipschitz, .. } => *lipschitz,
        }
    }
}

/// Vlasov-Fokker-Planck kernel on phase space `(x, v)`:
/// `b((x,v),(y,w)) = (-v, A(v) + B(x) + grad U(x - y))`.
#[derive(Debug, Clone)]
pub struct KineticInteraction {
    pub interaction: Potential,
    pub friction: VectorMap,
    pub confinement: VectorMap,
    /// Dimension of the position (and velocity) block.
    pub half_dim: usize,
}

struct KineticField<'a> {
    kernel: &'a KineticInteraction,
    interaction: InteractionField<'a>,
}

impl MeanField for KineticField<'_> {
    fn drift(&self, state: &[f64], out: &mut [f64]) {
        let k = self.kernel.half_dim;
        let (x, v) = state.split_at(k);
        out.iter_mut().for_each(|o| *o = 0.0);
        let (out_x, out_v) = out.split_at_mut(k);
        for (o, vi) in out_x.iter_mut().zip(v) {
            *o = -vi;
        }
        self.kernel.friction.add_value(v, out_v);
        self.kernel.confinement.add_value(x, out_v);
        self.interaction.add_to(x, out_v);
    }
}

impl Interaction for KineticInteraction {
    fn dim(&self) -> usize {
        2 * self.half_dim
    }
    fn eval(&self, state: &[f64], other: &[f64], out: &mut [f64]) {
        let k = self.half_dim;
        let (x, v) = state.split_at(k);
        let y = &other[..k];
        out.iter_mut().for_each(|o| *o = 0.0);
        let (out_x, out_v) = out.split_at_mut(k);
        for (o, vi) in out_x.iter_mut().zip(v) {
            *o = -vi;
        }
        self.friction.add_value(v, out_v);
        self.confinement.add_value(x, out_v);
        let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.interaction.add_gradient(&z, out_v);
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(1.0 + self.friction.lipschitz()? + self.confinement.lipschitz()? + self.interaction.gradient_lipschitz()?)
    }
    fn depends_on_measure(&self) -> bool {
        !self.interaction.is_zero()
    }
    fn describe(&self) -> String {
        format!(
            "Vlasov-Fokker-Planck, U={:?}, A={:?}, B={:?}, d'={}",
            self.interaction.kind(),
            self.friction,
            self.confinement,
            self.half_dim
        )
    }
    fn prepare<'a>(&'a self, measure: &'a EmpiricalMeasure) -> Option<Box<dyn MeanField + 'a>> {
        // The interaction only sees the position marginal rho[f].
        let positions = measure.project(0..self.half_dim);
        Some(Box::new(KineticField {
            kernel: self,
            interaction: self.interaction.interaction_field(Cow::Owned(positions)),
        }))
    }
}
