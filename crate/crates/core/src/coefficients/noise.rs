use crate::error::{check_dim, Error, Result};

/// Bounded state modulation `g(r) = clamp(base + slope * r, lo, hi)` applied
/// to `r = |u|_H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub base: f64,
    pub slope: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Modulation {
    pub fn constant(c: f64) -> Self {
        Self { base: c, slope: 0.0, lo: c, hi: c }
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.base + self.slope * r).clamp(self.lo, self.hi)
    }

    pub fn lipschitz(&self) -> f64 {
        if self.lo < self.hi {
            self.slope.abs()
        } else {
            0.0
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo <= self.hi && self.hi.is_finite())
            || !self.base.is_finite()
            || !self.slope.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "noise modulation needs 0 < g_lo <= g_hi < inf (got g_lo = {}, g_hi = {})",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// The noise coefficient `sigma: H -> L_2(l^2, H)`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseMap {
    /// One Brownian motion per mode: `dW_i -> s_i g(|u|_H) dW_i e_i`.
    DiagAffine {
        amplitudes: Vec<f64>,
        modulation: Modulation,
        /// Lower bound on the amplitudes of the coupled low modes.
        c_min: f64,
    },
    /// Additive noise through an explicit `dim x noise_dim` row-major matrix,
    /// with an optional pseudo-inverse hook (`noise_dim x dim`, row-major)
    /// used for the Girsanov shift.
    Custom {
        dim: usize,
        noise_dim: usize,
        matrix: Vec<f64>,
        pseudo_inverse: Option<Vec<f64>>,
    },
}

impl NoiseMap {
    pub fn zero(dim: usize) -> Self {
        NoiseMap::DiagAffine {
            amplitudes: vec![0.0; dim],
            modulation: Modulation::constant(1.0),
            c_min: 0.0,
        }
    }

    /// Additive diagonal noise with the given per-mode amplitudes.
    pub fn additive(amplitudes: Vec<f64>) -> Self {
        let c_min = amplitudes.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
        NoiseMap::DiagAffine {
            amplitudes,
            modulation: Modulation::constant(1.0),
            c_min,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseMap::DiagAffine { amplitudes, .. } => amplitudes.len(),
            NoiseMap::Custom { dim, .. } => *dim,
        }
    }

    /// Number of independent Brownian motions.
    pub fn noise_dim(&self) -> usize {
        match self {
            NoiseMap::DiagAffine { amplitudes, .. } => amplitudes.len(),
            NoiseMap::Custom { noise_dim, .. } => *noise_dim,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            NoiseMap::DiagAffine { amplitudes, modulation, c_min } => {
                modulation.validate()?;
                if let Some(i) = amplitudes.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "noise amplitude s_{} must be finite and nonnegative",
                        i + 1
                    )));
                }
                if !(c_min.is_finite() && *c_min >= 0.0) {
                    return Err(Error::InvalidParameter("c_min must be nonnegative".into()));
                }
            }
            NoiseMap::Custom { dim, noise_dim, matrix, pseudo_inverse } => {
                check_dim(dim * noise_dim, matrix.len())?;
                if let Some(p) = pseudo_inverse {
                    check_dim(dim * noise_dim, p.len())?;
                }
                if !matrix.iter().all(|x| x.is_finite()) {
                    return Err(Error::InvalidParameter("noise matrix must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Adds `sigma(u) dW` to `out`; `u_norm = |u|_H`.
    pub fn apply_add(&self, u_norm: f64, dw: &[f64], out: &mut [f64]) {
        match self {
            NoiseMap::DiagAffine { amplitudes, modulation, .. } => {
                let g = modulation.eval(u_norm);
                for ((o, s), w) in out.iter_mut().zip(amplitudes).zip(dw) {
                    *o += s * g * w;
                }
            }
            NoiseMap::Custom { noise_dim, matrix, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &matrix[i * noise_dim..(i + 1) * noise_dim];
                    *o += row.iter().zip(dw).map(|(a, w)| a * w).sum::<f64>();
                }
            }
        }
    }

    /// The linear map `sigma(u)` for a state of norm `u_norm`.
    pub fn operator_at(&self, u_norm: f64) -> NoiseOperator {
        match self {
            NoiseMap::DiagAffine { amplitudes, modulation, .. } => {
                let g = modulation.eval(u_norm);
                NoiseOperator::Diagonal(amplitudes.iter().map(|s| s * g).collect())
            }
            NoiseMap::Custom { dim, noise_dim, matrix, .. } => NoiseOperator::Dense {
                rows: *dim,
                cols: *noise_dim,
                data: matrix.clone(),
            },
        }
    }

    /// Whether `P_N H` lies in the range of every `sigma(x)` with a uniformly
    /// bounded pseudo-inverse.
    pub fn low_mode_range_condition(&self, n: usize) -> bool {
        match self {
            NoiseMap::DiagAffine { amplitudes, modulation, c_min } => {
                n == 0 || (*c_min > 0.0 && modulation.lo > 0.0 && amplitudes[..n].iter().all(|s| s >= c_min))
            }
            NoiseMap::Custom { dim, noise_dim, matrix, pseudo_inverse } => {
                let Some(p) = pseudo_inverse else {
                    return n == 0;
                };
                // sigma * pinv must act as the identity on the first n modes.
                (0..n).all(|c| {
                    (0..*dim).all(|r| {
                        let v: f64 = (0..*noise_dim).map(|q| matrix[r * noise_dim + q] * p[q * dim + c]).sum();
                        let target = if r == c { 1.0 } else { 0.0 };
                        (v - target).abs() <= 1e-10
                    })
                })
            }
        }
    }

    /// Writes `sigma(y)^{-1} w` for `w` supported on the first `n` modes
    /// (higher coordinates of `w` are ignored).
    pub fn pseudo_inverse_apply(&self, y_norm: f64, w: &[f64], n: usize, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self {
            NoiseMap::DiagAffine { amplitudes, modulation, .. } => {
                let g = modulation.eval(y_norm);
                for i in 0..n {
                    let s = amplitudes[i] * g;
                    if s <= 0.0 {
                        return Err(Error::PseudoInverseUnavailable);
                    }
                    out[i] = w[i] / s;
                }
                Ok(())
            }
            NoiseMap::Custom { dim, noise_dim, pseudo_inverse, .. } => {
                let p = pseudo_inverse.as_ref().ok_or(Error::PseudoInverseUnavailable)?;
                for (q, o) in out.iter_mut().enumerate().take(*noise_dim) {
                    *o = (0..n).map(|c| p[q * dim + c] * w[c]).sum();
                }
                Ok(())
            }
        }
    }

    /// Operator-norm bound of the low-mode pseudo-inverse, uniform in the state.
    pub fn pseudo_inverse_bound(&self, n: usize) -> Option<f64> {
        match self {
            NoiseMap::DiagAffine { modulation, c_min, amplitudes } => {
                if n == 0 {
                    return Some(0.0);
                }
                let smallest = amplitudes[..n].iter().copied().fold(f64::INFINITY, f64::min);
                let c = if *c_min > 0.0 { c_min.min(smallest) } else { smallest };
                (c > 0.0).then(|| 1.0 / (c * modulation.lo))
            }
            NoiseMap::Custom { dim, noise_dim, pseudo_inverse, .. } => pseudo_inverse.as_ref().map(|p| {
                (0..*noise_dim)
                    .map(|q| (0..n).map(|c| p[q * dim + c].powi(2)).sum::<f64>())
                    .sum::<f64>()
                    .sqrt()
            }),
        }
    }

    /// Bound `L` with `|sigma(u) - sigma(v)|^2_HS <= L |u - v|^2_H`.
    pub fn lipschitz_sq_bound(&self) -> f64 {
        match self {
            NoiseMap::DiagAffine { amplitudes, modulation, .. } => {
                modulation.lipschitz().powi(2) * amplitudes.iter().map(|s| s * s).sum::<f64>()
            }
            NoiseMap::Custom { .. } => 0.0,
        }
    }
}

/// A realized linear map from noise space to state space.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseOperator {
    Diagonal(Vec<f64>),
    Dense { rows: usize, cols: usize, data: Vec<f64> },
}

impl NoiseOperator {
    pub fn hs_norm(&self) -> f64 {
        self.hs_norm_sq().sqrt()
    }

    pub fn hs_norm_sq(&self) -> f64 {
        let data = match self {
            NoiseOperator::Diagonal(d) => d,
            NoiseOperator::Dense { data, .. } => data,
        };
        data.iter().map(|x| x * x).sum::<f64>()
    }

    /// Hilbert-Schmidt distance between two operators of the same shape.
    pub fn hs_distance(&self, other: &NoiseOperator) -> f64 {
        let (a, b) = match (self, other) {
            (NoiseOperator::Diagonal(a), NoiseOperator::Diagonal(b)) => (a, b),
            (NoiseOperator::Dense { data: a, .. }, NoiseOperator::Dense { data: b, .. }) => (a, b),
            _ => panic!("noise operators of different kinds"),
        };
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    pub fn apply(&self, dw: &[f64]) -> Vec<f64> {
        match self {
            NoiseOperator::Diagonal(d) => d.iter().zip(dw).map(|(s, w)| s * w).collect(),
            NoiseOperator::Dense { rows, cols, data } => (0..*rows)
                .map(|i| data[i * cols..(i + 1) * cols].iter().zip(dw).map(|(a, w)| a * w).sum())
                .collect(),
        }
    }
}
