use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One antisymmetric pair `c_{ijk} = c`, `c_{ikj} = -c` with `j < k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub c: f64,
}

/// Coefficient tensor of a trilinear form `b(u,v,w) = sum c_{ijk} u_i v_j w_k`
/// that is antisymmetric in its last two slots.
///
/// Only the `j < k` half is stored, so `b(u,v,w) = -b(u,w,v)` and
/// `b(u,v,v) = 0` hold bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewTensor {
    dim: usize,
    entries: Vec<SkewEntry>,
}

impl SkewTensor {
    /// Builds the tensor from `(i, j, k, c_{ijk})` triples (zero-based).
    /// Entries given as `j > k` are folded onto `(i, k, j, -c)`; repeated
    /// positions are summed.
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (usize, usize, usize, f64)>) -> Result<Self> {
        let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (i, j, k, c) in entries {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::InvalidParameter(format!(
                    "tensor entry ({}, {}, {}) outside dimension {dim}",
                    i + 1,
                    j + 1,
                    k + 1
                )));
            }
            if !c.is_finite() {
                return Err(Error::InvalidParameter("tensor entries must be finite".into()));
            }
            if j == k {
                if c != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "entry ({}, {}, {}) on the diagonal of an antisymmetric pair must vanish",
                        i + 1,
                        j + 1,
                        k + 1
                    )));
                }
                continue;
            }
            let (key, val) = if j < k { ((i, j, k), c) } else { ((i, k, j), -c) };
            *acc.entry(key).or_insert(0.0) += val;
        }
        let entries = acc
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|((i, j, k), c)| SkewEntry { i, j, k, c })
            .collect();
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[SkewEntry] {
        &self.entries
    }

    pub fn trilinear(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|e| e.c * u[e.i] * (v[e.j] * w[e.k] - v[e.k] * w[e.j]))
            .sum()
    }

    /// `sum |c| |u_i| (|v_j w_k| + |v_k w_j|)`, the rounding scale of
    /// [`Self::trilinear`].
    pub fn trilinear_scale(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|e| e.c.abs() * u[e.i].abs() * ((v[e.j] * w[e.k]).abs() + (v[e.k] * w[e.j]).abs()))
            .sum()
    }

    /// Overwrites `out` with the Riesz representative of `w -> b(u, v, w)`.
    pub fn apply_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for e in &self.entries {
            let cu = e.c * u[e.i];
            out[e.k] += cu * v[e.j];
            out[e.j] -= cu * v[e.k];
        }
    }

    /// Frobenius norm over both halves of every antisymmetric pair.
    pub fn frobenius_norm(&self) -> f64 {
        (2.0 * self.entries.iter().map(|e| e.c * e.c).sum::<f64>()).sqrt()
    }
}

/// The bilinear map `B: V x V -> V*` through its trilinear form.
#[derive(Debug, Clone, PartialEq)]
pub enum BilinearForm {
    Zero,
    /// Finitely supported antisymmetric coefficient tensor.
    SkewShear(SkewTensor),
    /// 2D periodic convective term `(u . grad) v` on divergence-free modes.
    NseConvective(Arc<SkewTensor>),
}

impl BilinearForm {
    pub fn tensor(&self) -> Option<&SkewTensor> {
        match self {
            BilinearForm::Zero => None,
            BilinearForm::SkewShear(t) => Some(t),
            BilinearForm::NseConvective(t) => Some(t),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BilinearForm::Zero => "zero",
            BilinearForm::SkewShear(_) => "skew_shear",
            BilinearForm::NseConvective(_) => "nse_convective",
        }
    }
}
