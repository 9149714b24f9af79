use crate::error::{check_dim, Error, Result};
use crate::spectral::SpectralBasis;

/// The drift `f: H -> V*` in eigen-coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftMap {
    /// `f(u)_i = -rate_i u_i`.
    LinearDecay { rates: Vec<f64> },
    /// `f(u)_i = slope_i u_i + offset_i`.
    Affine { slopes: Vec<f64>, offset: Vec<f64> },
    /// `f(u) = T u + offset` with an explicit row-major `dim x dim` table `T`.
    Table { matrix: Vec<f64>, offset: Vec<f64> },
}

impl DriftMap {
    pub fn zero(dim: usize) -> Self {
        DriftMap::LinearDecay { rates: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        match self {
            DriftMap::LinearDecay { rates } => rates.len(),
            DriftMap::Affine { slopes, .. } => slopes.len(),
            DriftMap::Table { offset, .. } => offset.len(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            DriftMap::LinearDecay { rates } => {
                if !finite(rates) {
                    return Err(Error::InvalidParameter("drift rates must be finite".into()));
                }
            }
            DriftMap::Affine { slopes, offset } => {
                check_dim(slopes.len(), offset.len())?;
                if !finite(slopes) || !finite(offset) {
                    return Err(Error::InvalidParameter("affine drift must be finite".into()));
                }
            }
            DriftMap::Table { matrix, offset } => {
                check_dim(offset.len() * offset.len(), matrix.len())?;
                if !finite(matrix) || !finite(offset) {
                    return Err(Error::InvalidParameter("drift table must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Overwrites `out` with `f(u)`.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        match self {
            DriftMap::LinearDecay { rates } => {
                for ((o, r), x) in out.iter_mut().zip(rates).zip(u) {
                    *o = -r * x;
                }
            }
            DriftMap::Affine { slopes, offset } => {
                for (((o, a), b), x) in out.iter_mut().zip(slopes).zip(offset).zip(u) {
                    *o = a * x + b;
                }
            }
            DriftMap::Table { matrix, offset } => {
                let m = offset.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &matrix[i * m..(i + 1) * m];
                    *o = offset[i] + row.iter().zip(u).map(|(t, x)| t * x).sum::<f64>();
                }
            }
        }
    }

    pub fn value_at_zero(&self) -> Vec<f64> {
        match self {
            DriftMap::LinearDecay { rates } => vec![0.0; rates.len()],
            DriftMap::Affine { offset, .. } | DriftMap::Table { offset, .. } => offset.clone(),
        }
    }

    /// Upper bound `L` with `|g(u) - g(v)|^2_{V*} <= L |u - v|^2_H` for
    /// `g(u) = f(u) - gamma u`. Exact for the diagonal kinds, a Frobenius
    /// bound for tables.
    pub fn lipschitz_sq_bound(&self, basis: &SpectralBasis, gamma: f64) -> f64 {
        let lam = basis.eigenvalues();
        match self {
            DriftMap::LinearDecay { rates } => rates
                .iter()
                .zip(lam)
                .map(|(r, l)| (r + gamma).powi(2) / l)
                .fold(0.0, f64::max),
            DriftMap::Affine { slopes, .. } => slopes
                .iter()
                .zip(lam)
                .map(|(a, l)| (a - gamma).powi(2) / l)
                .fold(0.0, f64::max),
            DriftMap::Table { matrix, offset } => {
                let m = offset.len();
                (0..m)
                    .map(|i| {
                        (0..m)
                            .map(|j| {
                                let t = matrix[i * m + j] - if i == j { gamma } else { 0.0 };
                                t * t
                            })
                            .sum::<f64>()
                            / lam[i]
                    })
                    .sum()
            }
        }
    }
}
