//! Finite truncation of the Gelfand triple `V ⊂ H ⊂ V*` in the eigenbasis of
//! a diagonal positive operator `A`.
//!
//! A state is the coefficient vector of a field in the eigenbasis
//! `e_1, ..., e_M`. The three norms are diagonal:
//!
//! ```text
//! |v|_H   = sqrt(sum a_i^2)
//! ||v||   = sqrt(sum lambda_i a_i^2)
//! |v|_V*  = sqrt(sum a_i^2 / lambda_i)
//! ```

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::coefficients::ModelSpec;
use crate::error::{check_dim, Error, Result};

/// Slack allowed on `|X|_H <= 1` for states produced by a reflected stepper.
pub const TOL_BALL: f64 = 1e-12;

/// Relative slack for the Poincaré gap inequality.
pub const POINCARE_SLACK: f64 = 1e-12;

/// The eigenvalues `0 < lambda_1 <= ... <= lambda_M` of the truncated operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
}

impl SpectralBasis {
    /// Builds a basis from a positive nondecreasing eigenvalue sequence.
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidEigenvalue {
                index: 0,
                reason: "the sequence is empty".into(),
            });
        }
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::InvalidEigenvalue {
                    index: i,
                    reason: format!("{l} is not a positive finite number"),
                });
            }
            if i > 0 && l < eigenvalues[i - 1] {
                return Err(Error::InvalidEigenvalue {
                    index: i,
                    reason: format!("{l} is smaller than the previous value {}", eigenvalues[i - 1]),
                });
            }
        }
        Ok(Self { eigenvalues })
    }

    /// `lambda_i = scale * i^power` for `i = 1..=dim`.
    pub fn power_law(dim: usize, scale: f64, power: f64) -> Result<Self> {
        Self::new((1..=dim).map(|i| scale * (i as f64).powf(power)).collect())
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_1(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `lambda_{N+1}`, the first eigenvalue above the coupling level `N`.
    pub fn lambda_next(&self, n: usize) -> Result<f64> {
        self.eigenvalues
            .get(n)
            .copied()
            .ok_or(Error::ModeOutOfRange { level: n, dim: self.dim() })
    }

    pub fn zero(&self) -> StateVector {
        StateVector::zeros(self.dim())
    }

    /// The eigenvector `e_{i+1}` (zero-based index `i`).
    pub fn unit(&self, i: usize) -> StateVector {
        let mut v = self.zero();
        v[i] = 1.0;
        v
    }

    pub fn v_norm(&self, v: &StateVector) -> f64 {
        self.v_norm_sq(v.coeffs()).sqrt()
    }

    pub fn v_norm_sq(&self, a: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim(), "state does not live in this basis");
        a.iter().zip(&self.eigenvalues).map(|(x, l)| l * x * x).sum()
    }

    pub fn v_star_norm(&self, v: &StateVector) -> f64 {
        self.v_star_norm_sq(v.coeffs()).sqrt()
    }

    pub fn v_star_norm_sq(&self, a: &[f64]) -> f64 {
        assert_eq!(a.len(), self.dim(), "state does not live in this basis");
        a.iter().zip(&self.eigenvalues).map(|(x, l)| x * x / l).sum()
    }

    /// `P_N v`: keeps the first `n` coordinates and zeroes the rest.
    pub fn project_low_modes(&self, v: &StateVector, n: usize) -> Result<StateVector> {
        check_dim(self.dim(), v.dim())?;
        if n > self.dim() {
            return Err(Error::ModeOutOfRange { level: n, dim: self.dim() });
        }
        let mut out = v.clone();
        out.coeffs_mut()[n..].iter_mut().for_each(|x| *x = 0.0);
        Ok(out)
    }

    /// Checks `||v||^2 >= lambda_{N+1} |(I - P_N) v|_H^2`.
    pub fn poincare_gap_check(&self, v: &StateVector, n: usize) -> Result<PoincareCheck> {
        check_dim(self.dim(), v.dim())?;
        if n >= self.dim() {
            return Err(Error::ModeOutOfRange { level: n, dim: self.dim() });
        }
        let lambda_next = self.eigenvalues[n];
        let v_sq = self.v_norm_sq(v.coeffs());
        let tail_sq: f64 = v.coeffs()[n..].iter().map(|x| x * x).sum();
        let residual = v_sq - lambda_next * tail_sq;
        Ok(PoincareCheck {
            holds: residual >= -POINCARE_SLACK * v_sq,
            residual,
        })
    }
}

/// Outcome of [`SpectralBasis::poincare_gap_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareCheck {
    pub holds: bool,
    /// `||v||^2 - lambda_{N+1} |(I - P_N) v|^2`.
    pub residual: f64,
}

/// Coordinates of a state in the eigenbasis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateVector {
    coeffs: Vec<f64>,
}

impl StateVector {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coeffs: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn h_norm(&self) -> f64 {
        h_norm_slice(&self.coeffs)
    }

    pub fn dot(&self, other: &StateVector) -> f64 {
        dot(&self.coeffs, &other.coeffs)
    }

    pub fn scaled(&self, c: f64) -> StateVector {
        StateVector::new(self.coeffs.iter().map(|x| c * x).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(coeffs: Vec<f64>) -> Self {
        Self::new(coeffs)
    }
}

impl Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coeffs[i]
    }
}

impl IndexMut<usize> for StateVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coeffs[i]
    }
}

impl Add for &StateVector {
    type Output = StateVector;
    fn add(self, rhs: &StateVector) -> StateVector {
        assert_eq!(self.dim(), rhs.dim());
        StateVector::new(self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &StateVector {
    type Output = StateVector;
    fn sub(self, rhs: &StateVector) -> StateVector {
        assert_eq!(self.dim(), rhs.dim());
        StateVector::new(self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &StateVector {
    type Output = StateVector;
    fn mul(self, c: f64) -> StateVector {
        self.scaled(c)
    }
}

/// Euclidean norm of the coefficients, `|v|_H`.
pub fn h_norm(v: &StateVector) -> f64 {
    v.h_norm()
}

/// `|a|_H` for a raw coefficient slice.
pub fn h_norm_slice(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Which form of the spectral-gap condition to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum H1Variant {
    /// `(32/3) F + (32/3) |sigma(0)|^2_HS + 16 C_1`, with `F` the forcing term
    /// selected by [`F0Form`].
    Generic,
    /// Damped Navier-Stokes form `(32/3) |sigma(0)|^2_HS + 12 C_1 + 16 gamma^2`.
    Nse,
}

/// How `|f(0)|_{V*}` enters the generic threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum F0Form {
    /// `|f(0)|^2_{V*}`, the form every moment estimate uses.
    #[default]
    Squared,
    /// `|f(0)|_{V*}` as literally stated in the condition.
    Unsquared,
}

/// Result of the spectral-gap condition check at level `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct H1Report {
    pub threshold: f64,
    pub lambda_next: f64,
    /// `lambda_next > threshold`.
    pub passed: bool,
    pub variant: H1Variant,
    /// Low-mode noise amplitudes are bounded below by a positive constant, so
    /// the pseudo-inverse on `P_N H` is uniformly bounded.
    pub range_condition: bool,
}

impl H1Report {
    pub fn fully_satisfied(&self) -> bool {
        self.passed && self.range_condition
    }
}

/// Evaluates the spectral-gap condition in the model's own variant.
pub fn validate_h1(model: &ModelSpec, n: usize) -> Result<H1Report> {
    validate_h1_variant(model, n, model.h1_variant())
}

pub fn validate_h1_variant(model: &ModelSpec, n: usize, variant: H1Variant) -> Result<H1Report> {
    let basis = model.basis();
    if n + 1 > basis.dim() {
        return Err(Error::ModeOutOfRange { level: n, dim: basis.dim() });
    }
    let lambda_next = basis.lambda_next(n)?;
    let threshold = h1_threshold(model, variant);
    Ok(H1Report {
        threshold,
        lambda_next,
        passed: lambda_next > threshold,
        variant,
        range_condition: model.noise().low_mode_range_condition(n),
    })
}

/// Right-hand side of the spectral-gap inequality.
pub fn h1_threshold(model: &ModelSpec, variant: H1Variant) -> f64 {
    let s0 = model.sigma0_hs_sq();
    let c1 = model.lipschitz_c1();
    match variant {
        H1Variant::Generic => {
            let forcing = match model.f0_form() {
                F0Form::Squared => model.f0_vstar_sq(),
                F0Form::Unsquared => model.f0_vstar(),
            };
            32.0 / 3.0 * forcing + 32.0 / 3.0 * s0 + 16.0 * c1
        }
        H1Variant::Nse => {
            let g = model.damping_gamma();
            32.0 / 3.0 * s0 + 12.0 * c1 + 16.0 * g * g
        }
    }
}
