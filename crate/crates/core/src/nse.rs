//! Stochastic damped Navier-Stokes equations on the 2D periodic torus
//! `[0, 2 pi]^2`, truncated to the divergence-free Fourier modes with
//! `0 < |k| <= kappa`.
//!
//! Each retained wave vector `k` (one per `+-k` pair) carries two real modes
//! `e(x) = (-k_2, k_1)/|k| * c(k . x) / (pi sqrt 2)` with `c = cos, sin`,
//! which are orthonormal in `L^2` and eigenfunctions of the Stokes operator
//! with eigenvalue `|k|^2`. Viscosity is one.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::coefficients::{
    check_form_bounds, form_identity_check, BilinearForm, DriftMap, FormBoundReport, FormIdentityReport, ModelSpec,
    Modulation, NoiseMap, SkewTensor,
};
use crate::dynamics::{PathStepper, StepperConfig};
use crate::error::{Error, Result};
use crate::spectral::{validate_h1_variant, H1Report, H1Variant, SpectralBasis, StateVector};

/// Cosine or sine profile of a real Fourier mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Profile {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierMode {
    pub k: (i64, i64),
    pub profile: Profile,
    pub lambda: f64,
}

impl FourierMode {
    /// Unit direction `(-k_2, k_1) / |k|`.
    pub fn direction(&self) -> (f64, f64) {
        let n = (self.lambda).sqrt();
        (-(self.k.1 as f64) / n, self.k.0 as f64 / n)
    }

    /// Velocity of the normalized mode at `(x1, x2)`.
    pub fn velocity(&self, x1: f64, x2: f64) -> (f64, f64) {
        let phase = self.k.0 as f64 * x1 + self.k.1 as f64 * x2;
        let c = match self.profile {
            Profile::Cos => phase.cos(),
            Profile::Sin => phase.sin(),
        } * MODE_NORM;
        let d = self.direction();
        (d.0 * c, d.1 * c)
    }
}

/// `1 / (pi sqrt 2)`, the `L^2` normalization of a real mode on the torus.
pub const MODE_NORM: f64 = 1.0 / (PI * std::f64::consts::SQRT_2);

/// The retained Fourier modes, sorted by eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierGrid {
    pub kappa: u32,
    modes: Vec<FourierMode>,
}

impl FourierGrid {
    pub fn new(kappa: u32) -> Result<Self> {
        if kappa == 0 {
            return Err(Error::InvalidParameter("kappa must be at least 1".into()));
        }
        let r = kappa as i64;
        let mut modes = Vec::new();
        for kx in 0..=r {
            for ky in -r..=r {
                let n2 = kx * kx + ky * ky;
                let upper_half = kx > 0 || ky > 0;
                if n2 == 0 || n2 > r * r || !upper_half {
                    continue;
                }
                for profile in [Profile::Cos, Profile::Sin] {
                    modes.push(FourierMode { k: (kx, ky), profile, lambda: n2 as f64 });
                }
            }
        }
        modes.sort_by(|a, b| {
            a.lambda
                .total_cmp(&b.lambda)
                .then(a.k.cmp(&b.k))
                .then(a.profile.cmp(&b.profile))
        });
        Ok(Self { kappa, modes })
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    /// Number of distinct wave vectors `k` (both signs counted).
    pub fn wave_vectors(&self) -> usize {
        self.modes.len()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.lambda).collect()
    }

    /// Every mode's direction is orthogonal to its wave vector, checked in
    /// exact integer arithmetic (`k . (-k_2, k_1) = 0`), and no mode has
    /// `k = 0`.
    pub fn divergence_free(&self) -> bool {
        self.modes
            .iter()
            .all(|m| m.k != (0, 0) && m.k.0 * (-m.k.1) + m.k.1 * m.k.0 == 0)
    }

    /// Velocity of the field with coefficients `coeffs` at `(x1, x2)`.
    pub fn velocity(&self, coeffs: &[f64], x1: f64, x2: f64) -> (f64, f64) {
        let mut u = (0.0, 0.0);
        for (m, c) in self.modes.iter().zip(coeffs) {
            let v = m.velocity(x1, x2);
            u.0 += c * v.0;
            u.1 += c * v.1;
        }
        u
    }
}

/// `e^{i theta}` and `e^{-i theta}` weights of cos / sin, and of their
/// derivatives.
fn exp_weights(profile: Profile, derivative: bool) -> [Complex64; 2] {
    let half = Complex64::new(0.5, 0.0);
    let half_i = Complex64::new(0.0, 0.5);
    match (profile, derivative) {
        // cos = (e + e^-)/2
        (Profile::Cos, false) => [half, half],
        // sin = (e - e^-)/(2i)
        (Profile::Sin, false) => [-half_i, half_i],
        // cos' = -sin
        (Profile::Cos, true) => [half_i, -half_i],
        // sin' = cos
        (Profile::Sin, true) => [half, half],
    }
}

/// `int_{torus} psi_a(k.x) psi_b'(l.x) psi_c(m.x) dx`.
fn triple_integral(a: &FourierMode, b: &FourierMode, c: &FourierMode) -> f64 {
    let wa = exp_weights(a.profile, false);
    let wb = exp_weights(b.profile, true);
    let wc = exp_weights(c.profile, false);
    let sign = |i: usize| if i == 0 { 1 } else { -1 };
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            for l in 0..2 {
                let sx = sign(i) * a.k.0 + sign(j) * b.k.0 + sign(l) * c.k.0;
                let sy = sign(i) * a.k.1 + sign(j) * b.k.1 + sign(l) * c.k.1;
                if sx == 0 && sy == 0 {
                    acc += wa[i] * wb[j] * wc[l];
                }
            }
        }
    }
    acc.re * 4.0 * PI * PI
}

/// `b(e_a, e_b, e_c) = int (e_a . grad) e_b . e_c` for normalized modes.
pub fn mode_trilinear(a: &FourierMode, b: &FourierMode, c: &FourierMode) -> f64 {
    // Integer numerators keep the exact zeros exact.
    let da_l = -a.k.1 * b.k.0 + a.k.0 * b.k.1;
    let db_dc = b.k.0 * c.k.0 + b.k.1 * c.k.1;
    if da_l == 0 || db_dc == 0 {
        return 0.0;
    }
    let scale = da_l as f64 * db_dc as f64 / (a.lambda.sqrt() * b.lambda.sqrt() * c.lambda.sqrt());
    MODE_NORM.powi(3) * scale * triple_integral(a, b, c)
}

/// The convective form on the grid as an antisymmetric coefficient tensor.
///
/// Only `b < c` entries are computed; the antisymmetry in the last two
/// arguments is therefore exact, and the diagonal `b = c` vanishes.
pub fn convective_tensor(grid: &FourierGrid) -> Result<SkewTensor> {
    let modes = grid.modes();
    let n = modes.len();
    let mut entries = Vec::new();
    // Interactions need k_a = +-k_b +- k_c; index the modes by wave vector.
    let mut by_k: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, m) in modes.iter().enumerate() {
        by_k.entry(m.k).or_default().push(i);
    }
    for b in 0..n {
        for c in b + 1..n {
            let (kb, kc) = (modes[b].k, modes[c].k);
            for (sx, sy) in [(1, 1), (1, -1)] {
                let k = (sx * kb.0 + sy * kc.0, sx * kb.1 + sy * kc.1);
                for cand in [k, (-k.0, -k.1)] {
                    if let Some(list) = by_k.get(&cand) {
                        for &a in list {
                            let v = mode_trilinear(&modes[a], &modes[b], &modes[c]);
                            if v != 0.0 {
                                entries.push((a, b, c, v));
                            }
                        }
                    }
                }
            }
        }
    }
    // A wave vector can be reached through several sign choices; keep one
    // copy of each (a, b, c).
    entries.sort_by_key(|x| (x.0, x.1, x.2));
    entries.dedup_by(|x, y| (x.0, x.1, x.2) == (y.0, y.1, y.2));
    SkewTensor::new(n, entries)
}

/// Parameters of the truncated damped Navier-Stokes model.
#[derive(Debug, Clone, PartialEq)]
pub struct NseParams {
    pub kappa: u32,
    pub gamma: f64,
    /// Forcing coefficients on the leading modes (the rest are zero).
    pub forcing: Vec<f64>,
    /// Noise amplitudes on the leading modes (the rest are zero).
    pub noise_amplitudes: Vec<f64>,
    pub modulation: Modulation,
    pub coupling_n: Option<usize>,
    pub lipschitz_c1: Option<f64>,
}

impl Default for NseParams {
    fn default() -> Self {
        Self {
            kappa: 2,
            gamma: 0.5,
            forcing: Vec::new(),
            noise_amplitudes: Vec::new(),
            modulation: Modulation::constant(1.0),
            coupling_n: None,
            lipschitz_c1: None,
        }
    }
}

/// A built Navier-Stokes instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NseModel {
    pub grid: FourierGrid,
    pub gamma: f64,
    pub model: ModelSpec,
}

/// Builds the basis `lambda = |k|^2`, the convective form, damping `-gamma X`,
/// constant forcing and diagonal noise.
pub fn build_nse_model(params: &NseParams) -> Result<NseModel> {
    let grid = FourierGrid::new(params.kappa)?;
    let dim = grid.dim();
    for (name, v) in [("forcing", &params.forcing), ("noise", &params.noise_amplitudes)] {
        if v.len() > dim {
            return Err(Error::InvalidParameter(format!(
                "{name} has {} coefficients but kappa = {} gives only {dim} modes",
                v.len(),
                params.kappa
            )));
        }
    }
    let mut offset = params.forcing.clone();
    offset.resize(dim, 0.0);
    let mut amps = params.noise_amplitudes.clone();
    amps.resize(dim, 0.0);
    let n = params.coupling_n.unwrap_or_else(|| 4.min(dim - 1));
    let c_min = amps.iter().take(n).copied().fold(f64::INFINITY, f64::min);
    let c_min = if c_min.is_finite() { c_min.max(0.0) } else { 0.0 };
    let tensor = convective_tensor(&grid)?;
    let mut b = ModelSpec::builder(SpectralBasis::new(grid.eigenvalues())?)
        .drift(DriftMap::Affine { slopes: vec![0.0; dim], offset })
        .bilinear(BilinearForm::NseConvective(Arc::new(tensor)))
        .noise(NoiseMap::DiagAffine { amplitudes: amps, modulation: params.modulation, c_min })
        .damping_gamma(params.gamma)
        .coupling_n(n)
        .h1_variant(H1Variant::Nse);
    if let Some(c1) = params.lipschitz_c1 {
        b = b.lipschitz_c1(c1);
    }
    Ok(NseModel { grid, gamma: params.gamma, model: b.build()? })
}

/// Property suite of an NSE instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NseVerification {
    pub divergence_free: bool,
    pub identities: FormIdentityReport,
    pub bounds: FormBoundReport,
    pub h1_nse: H1Report,
    pub h1_generic: H1Report,
}

impl NseVerification {
    /// Structure and form checks; the spectral-gap verdicts are reported
    /// separately.
    pub fn structure_passed(&self) -> bool {
        self.divergence_free && self.identities.passed && self.bounds.passed
    }
}

pub fn verify_nse_model(nse: &NseModel, samples: usize, seed: u64) -> Result<NseVerification> {
    let m = &nse.model;
    Ok(NseVerification {
        divergence_free: nse.grid.divergence_free(),
        identities: form_identity_check(m, samples, seed),
        bounds: check_form_bounds(m, samples, seed),
        h1_nse: validate_h1_variant(m, m.coupling_n(), H1Variant::Nse)?,
        h1_generic: validate_h1_variant(m, m.coupling_n(), H1Variant::Generic)?,
    })
}

/// Discrete energy monotonicity along one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub steps: usize,
    /// Largest `(|X_{k+1}|^2 - |X_k|^2) / max(|X_k|^2, tiny)`.
    pub max_relative_increase: f64,
    pub initial: f64,
    pub last: f64,
    pub passed: bool,
}

/// Follows `|X(t)|^2` step by step; passes when it never grows by more than
/// the relative `slack`.
pub fn energy_check(
    model: &ModelSpec,
    x0: &StateVector,
    t_end: f64,
    cfg: &StepperConfig,
    seed: u64,
    slack: f64,
) -> Result<EnergyReport> {
    let steps = cfg.steps_for(t_end)?;
    let mut st = PathStepper::new(model, x0, *cfg, seed, 0)?;
    let e = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    let initial = e(st.state());
    let mut prev = initial;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..steps {
        st.advance()?;
        let cur = e(st.state());
        worst = worst.max((cur - prev) / prev.max(f64::MIN_POSITIVE));
        prev = cur;
    }
    Ok(EnergyReport {
        steps,
        max_relative_increase: if steps == 0 { 0.0 } else { worst },
        initial,
        last: prev,
        passed: steps == 0 || worst <= slack,
    })
}
