//! The coefficient triple `(f, B, sigma)` and the constants attached to it.

mod bilinear;
mod checks;
mod drift;
mod noise;

pub use bilinear::{BilinearForm, SkewEntry, SkewTensor};
pub use checks::{
    check_form_bounds, form_identity_check, lipschitz_probe, sample_probe_state, FormBoundReport,
    FormIdentityReport, LipschitzReport, FORM_BOUND_SLACK,
};
pub use drift::DriftMap;
pub use noise::{Modulation, NoiseMap, NoiseOperator};

use crate::error::{check_dim, Error, Result};
use crate::spectral::{F0Form, H1Variant, SpectralBasis, StateVector};

/// A fully specified reflected equation in a truncated eigenbasis.
///
/// Immutable after [`ModelBuilder::build`]; `|f(0)|_{V*}` and
/// `|sigma(0)|_HS` are computed from the coefficients at build time, while
/// `C_1` is either declared or taken from the analytic bound of the
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    basis: SpectralBasis,
    drift: DriftMap,
    bilinear: BilinearForm,
    noise: NoiseMap,
    lipschitz_c1: f64,
    f0_vstar_sq: f64,
    sigma0_hs_sq: f64,
    damping_gamma: f64,
    coupling_n: usize,
    h1_variant: H1Variant,
    f0_form: F0Form,
}

impl ModelSpec {
    pub fn builder(basis: SpectralBasis) -> ModelBuilder {
        ModelBuilder::new(basis)
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }
    pub fn drift(&self) -> &DriftMap {
        &self.drift
    }
    pub fn bilinear(&self) -> &BilinearForm {
        &self.bilinear
    }
    pub fn noise(&self) -> &NoiseMap {
        &self.noise
    }
    pub fn lipschitz_c1(&self) -> f64 {
        self.lipschitz_c1
    }
    pub fn f0_vstar(&self) -> f64 {
        self.f0_vstar_sq.sqrt()
    }
    /// `|f(0)|^2_{V*}`, summed directly.
    pub fn f0_vstar_sq(&self) -> f64 {
        self.f0_vstar_sq
    }
    pub fn sigma0_hs(&self) -> f64 {
        self.sigma0_hs_sq.sqrt()
    }
    /// `|sigma(0)|^2_HS`, summed directly.
    pub fn sigma0_hs_sq(&self) -> f64 {
        self.sigma0_hs_sq
    }
    pub fn damping_gamma(&self) -> f64 {
        self.damping_gamma
    }
    pub fn coupling_n(&self) -> usize {
        self.coupling_n
    }
    pub fn h1_variant(&self) -> H1Variant {
        self.h1_variant
    }
    pub fn f0_form(&self) -> F0Form {
        self.f0_form
    }

    /// `lambda_{N+1}` at the model's coupling level.
    pub fn lambda_next(&self) -> f64 {
        self.basis.eigenvalues()[self.coupling_n]
    }

    /// Analytic bound on the constant of the Lipschitz assumption for the
    /// full drift `f(u) - gamma u` and the noise.
    pub fn analytic_lipschitz_bound(&self) -> f64 {
        self.drift.lipschitz_sq_bound(&self.basis, self.damping_gamma) + self.noise.lipschitz_sq_bound()
    }

    /// Lyapunov constant `K = 2(|f(0)|^2_{V*} + |sigma(0)|^2_HS + 2 C_1)`.
    pub fn lyapunov_k(&self) -> f64 {
        2.0 * (self.f0_vstar_sq + self.sigma0_hs_sq + 2.0 * self.lipschitz_c1)
    }

    /// Same model with another coupling level.
    pub fn with_coupling_n(&self, n: usize) -> Result<Self> {
        if n + 1 > self.dim() {
            return Err(Error::ModeOutOfRange { level: n, dim: self.dim() });
        }
        Ok(Self { coupling_n: n, ..self.clone() })
    }

    /// `f(u) - gamma u` into `out`.
    pub(crate) fn drift_into(&self, u: &[f64], out: &mut [f64]) {
        self.drift.apply_into(u, out);
        if self.damping_gamma != 0.0 {
            for (o, x) in out.iter_mut().zip(u) {
                *o -= self.damping_gamma * x;
            }
        }
    }

    /// `B(u, u)` into `out`; returns `false` when `B` vanishes identically.
    pub(crate) fn bilinear_into(&self, u: &[f64], out: &mut [f64]) -> bool {
        match self.bilinear.tensor() {
            Some(t) => {
                t.apply_into(u, u, out);
                true
            }
            None => false,
        }
    }
}

/// Builder for [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    basis: SpectralBasis,
    drift: Option<DriftMap>,
    bilinear: BilinearForm,
    noise: Option<NoiseMap>,
    lipschitz_c1: Option<f64>,
    damping_gamma: f64,
    coupling_n: Option<usize>,
    h1_variant: H1Variant,
    f0_form: F0Form,
    enforce_form_bounds: bool,
}

/// Samples used by the build-time form-bound check of custom tensors.
const BUILD_CHECK_SAMPLES: usize = 1000;

impl ModelBuilder {
    fn new(basis: SpectralBasis) -> Self {
        Self {
            basis,
            drift: None,
            bilinear: BilinearForm::Zero,
            noise: None,
            lipschitz_c1: None,
            damping_gamma: 0.0,
            coupling_n: None,
            h1_variant: H1Variant::Generic,
            f0_form: F0Form::Squared,
            enforce_form_bounds: true,
        }
    }

    pub fn drift(mut self, drift: DriftMap) -> Self {
        self.drift = Some(drift);
        self
    }
    pub fn bilinear(mut self, bilinear: BilinearForm) -> Self {
        self.bilinear = bilinear;
        self
    }
    pub fn noise(mut self, noise: NoiseMap) -> Self {
        self.noise = Some(noise);
        self
    }
    /// Declares `C_1`; without a declaration the analytic bound is used.
    pub fn lipschitz_c1(mut self, c1: f64) -> Self {
        self.lipschitz_c1 = Some(c1);
        self
    }
    pub fn damping_gamma(mut self, gamma: f64) -> Self {
        self.damping_gamma = gamma;
        self
    }
    pub fn coupling_n(mut self, n: usize) -> Self {
        self.coupling_n = Some(n);
        self
    }
    pub fn h1_variant(mut self, v: H1Variant) -> Self {
        self.h1_variant = v;
        self
    }
    pub fn f0_form(mut self, f: F0Form) -> Self {
        self.f0_form = f;
        self
    }

    /// Whether `build` rejects a skew-shear tensor that fails
    /// [`check_form_bounds`] (on by default).
    pub fn enforce_form_bounds(mut self, on: bool) -> Self {
        self.enforce_form_bounds = on;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let dim = self.basis.dim();
        let drift = self.drift.unwrap_or_else(|| DriftMap::zero(dim));
        let noise = self.noise.unwrap_or_else(|| NoiseMap::zero(dim));
        check_dim(dim, drift.dim())?;
        drift.validate()?;
        check_dim(dim, noise.dim())?;
        noise.validate()?;
        if let Some(t) = self.bilinear.tensor() {
            check_dim(dim, t.dim())?;
        }
        let coupling_n = self.coupling_n.unwrap_or_else(|| 4.min(dim - 1));
        if coupling_n + 1 > dim {
            return Err(Error::InvalidParameter(format!(
                "coupling_n must be < basis dim (got N = {coupling_n}, M = {dim})"
            )));
        }
        if !(self.damping_gamma.is_finite() && self.damping_gamma >= 0.0) {
            return Err(Error::InvalidParameter("damping_gamma must be nonnegative".into()));
        }
        let f0 = drift.value_at_zero();
        let f0_vstar_sq = self.basis.v_star_norm_sq(&f0);
        let sigma0_hs_sq = noise.operator_at(0.0).hs_norm_sq();
        let mut model = ModelSpec {
            basis: self.basis,
            drift,
            bilinear: self.bilinear,
            noise,
            lipschitz_c1: 0.0,
            f0_vstar_sq,
            sigma0_hs_sq,
            damping_gamma: self.damping_gamma,
            coupling_n,
            h1_variant: self.h1_variant,
            f0_form: self.f0_form,
        };
        model.lipschitz_c1 = match self.lipschitz_c1 {
            Some(c) if c.is_finite() && c >= 0.0 => c,
            Some(c) => return Err(Error::InvalidParameter(format!("lipschitz_c1 must be nonnegative (got {c})"))),
            None => model.analytic_lipschitz_bound(),
        };
        if self.enforce_form_bounds && matches!(model.bilinear, BilinearForm::SkewShear(_)) {
            let r = check_form_bounds(&model, BUILD_CHECK_SAMPLES, 0);
            if !r.passed {
                return Err(Error::InvalidParameter(format!(
                    "skew_shear tensor violates the trilinear bound (ratios {:.4}, {:.4})",
                    r.max_trilinear_ratio, r.max_bilinear_ratio
                )));
            }
        }
        Ok(model)
    }
}

/// `f(u) - gamma u`, the non-stiff drift of the model.
pub fn eval_drift(model: &ModelSpec, u: &StateVector) -> Result<StateVector> {
    check_dim(model.dim(), u.dim())?;
    let mut out = StateVector::zeros(model.dim());
    model.drift_into(u.coeffs(), out.coeffs_mut());
    Ok(out)
}

/// `b(u, v, w) = <B(u, v), w>`.
pub fn trilinear_form(model: &ModelSpec, u: &StateVector, v: &StateVector, w: &StateVector) -> Result<f64> {
    for x in [u, v, w] {
        check_dim(model.dim(), x.dim())?;
    }
    Ok(model
        .bilinear()
        .tensor()
        .map_or(0.0, |t| t.trilinear(u.coeffs(), v.coeffs(), w.coeffs())))
}

/// `B(u, v)` as a coefficient vector.
pub fn eval_bilinear(model: &ModelSpec, u: &StateVector, v: &StateVector) -> Result<StateVector> {
    check_dim(model.dim(), u.dim())?;
    check_dim(model.dim(), v.dim())?;
    let mut out = StateVector::zeros(model.dim());
    if let Some(t) = model.bilinear().tensor() {
        t.apply_into(u.coeffs(), v.coeffs(), out.coeffs_mut());
    }
    Ok(out)
}

/// The noise operator `sigma(u)`.
pub fn eval_noise(model: &ModelSpec, u: &StateVector) -> Result<NoiseOperator> {
    check_dim(model.dim(), u.dim())?;
    Ok(model.noise().operator_at(u.h_norm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(l: &[f64]) -> SpectralBasis {
        SpectralBasis::new(l.to_vec()).unwrap()
    }

    #[test]
    fn drift_kinds() {
        let b = basis(&[1.0, 2.0, 3.0]);
        let m = ModelSpec::builder(b.clone())
            .drift(DriftMap::LinearDecay { rates: vec![0.0; 3] })
            .coupling_n(1)
            .build()
            .unwrap();
        let u = StateVector::new(vec![0.3, -0.2, 0.5]);
        assert_eq!(eval_drift(&m, &u).unwrap(), b.zero());

        let m = ModelSpec::builder(b.clone())
            .drift(DriftMap::Affine { slopes: vec![0.5; 3], offset: vec![0.0; 3] })
            .coupling_n(1)
            .build()
            .unwrap();
        assert_eq!(eval_drift(&m, &b.unit(0)).unwrap(), b.unit(0).scaled(0.5));
        assert!(eval_drift(&m, &StateVector::zeros(2)).is_err());
    }

    #[test]
    fn table_drift_matches_its_table() {
        let table = vec![1.0, -2.0, 0.5, 0.0, 3.0, 0.25, -1.0, 4.0, 2.0];
        let offset = vec![0.1, 0.2, 0.3];
        let b = basis(&[1.0, 2.0, 3.0]);
        let m = ModelSpec::builder(b.clone())
            .drift(DriftMap::Table { matrix: table.clone(), offset: offset.clone() })
            .coupling_n(1)
            .build()
            .unwrap();
        assert_eq!(eval_drift(&m, &b.zero()).unwrap().coeffs(), &offset[..]);
        for j in 0..3 {
            let col = eval_drift(&m, &b.unit(j)).unwrap();
            for i in 0..3 {
                assert_eq!(col[i], table[i * 3 + j] + offset[i]);
            }
        }
    }

    #[test]
    fn recorded_constants() {
        let b = basis(&[1.0, 4.0, 9.0]);
        let m = ModelSpec::builder(b.clone())
            .drift(DriftMap::Affine { slopes: vec![0.0; 3], offset: vec![0.0, 2.0, 0.0] })
            .noise(NoiseMap::DiagAffine {
                amplitudes: vec![0.3, 0.4, 0.0],
                modulation: Modulation { base: 2.0, slope: 1.0, lo: 0.5, hi: 3.0 },
                c_min: 0.3,
            })
            .coupling_n(2)
            .build()
            .unwrap();
        assert_eq!(m.f0_vstar(), 1.0);
        // g(0) * sqrt(0.09 + 0.16)
        assert!((m.sigma0_hs() - 1.0).abs() < 1e-15);
        let op = eval_noise(&m, &b.zero()).unwrap();
        assert_eq!(op.hs_norm(), m.sigma0_hs());
    }

    #[test]
    fn noise_evaluation() {
        let b = basis(&[1.0, 2.0]);
        let m = ModelSpec::builder(b.clone())
            .noise(NoiseMap::additive(vec![1.0, 0.0]))
            .coupling_n(1)
            .build()
            .unwrap();
        assert_eq!(eval_noise(&m, &b.zero()).unwrap().hs_norm(), 1.0);
        let far = StateVector::new(vec![0.6, 0.8]);
        assert_eq!(eval_noise(&m, &far).unwrap(), eval_noise(&m, &b.zero()).unwrap());
    }

    #[test]
    fn zero_and_single_entry_forms() {
        let b = basis(&[1.0, 2.0, 3.0]);
        let zero = ModelSpec::builder(b.clone()).coupling_n(1).build().unwrap();
        let u = StateVector::new(vec![0.1, 0.2, 0.3]);
        assert_eq!(trilinear_form(&zero, &u, &u, &b.unit(0)).unwrap(), 0.0);
        assert_eq!(eval_bilinear(&zero, &u, &u).unwrap(), b.zero());

        let shear = ModelSpec::builder(b.clone())
            .bilinear(BilinearForm::SkewShear(SkewTensor::new(3, [(0, 1, 2, 1.0)]).unwrap()))
            .coupling_n(1)
            .build()
            .unwrap();
        assert_eq!(trilinear_form(&shear, &b.unit(0), &b.unit(1), &b.unit(2)).unwrap(), 1.0);
        assert_eq!(eval_bilinear(&shear, &b.unit(0), &b.unit(1)).unwrap(), b.unit(2));
    }

    #[test]
    fn rejects_inconsistent_models() {
        let b = basis(&[1.0, 2.0]);
        assert!(ModelSpec::builder(b.clone()).coupling_n(2).build().is_err());
        assert!(ModelSpec::builder(b.clone()).noise(NoiseMap::additive(vec![1.0])).build().is_err());
        assert!(ModelSpec::builder(b.clone()).lipschitz_c1(-1.0).build().is_err());
        assert!(ModelSpec::builder(b).damping_gamma(-0.5).build().is_err());
        let big = BilinearForm::SkewShear(SkewTensor::new(3, [(0, 1, 2, 50.0)]).unwrap());
        let b3 = basis(&[1.0, 1.0, 1.0]);
        assert!(ModelSpec::builder(b3.clone()).bilinear(big.clone()).coupling_n(1).build().is_err());
        assert!(ModelSpec::builder(b3)
            .bilinear(big)
            .coupling_n(1)
            .enforce_form_bounds(false)
            .build()
            .is_ok());
    }
}
