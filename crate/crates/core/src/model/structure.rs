//! Cholesky parameterization of the random-effect covariance.
//!
//! `gamma` stacks the nonzero entries of the lower-triangular factor `Gamma`
//! row by row: `gamma = (gamma_1', ..., gamma_q')'` where `gamma_t` holds the
//! `t` entries `Gamma[t, 0..=t]` (unstructured) or the single entry
//! `Gamma[t, t]` (diagonal). Row `t` is the penalty group of random effect `t`.

use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovKind {
    Unstructured,
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovStructure {
    pub kind: CovKind,
    /// Random-effect dimension including the random intercept.
    pub q: usize,
}

impl CovStructure {
    pub fn new(kind: CovKind, q: usize) -> Self {
        CovStructure { kind, q }
    }

    pub fn gamma_len(&self) -> usize {
        match self.kind {
            CovKind::Unstructured => self.q * (self.q + 1) / 2,
            CovKind::Diagonal => self.q,
        }
    }

    /// Indices of `gamma` that belong to row `t` of `Gamma`.
    pub fn group_range(&self, t: usize) -> Range<usize> {
        match self.kind {
            CovKind::Unstructured => {
                let start = t * (t + 1) / 2;
                start..start + t + 1
            }
            CovKind::Diagonal => t..t + 1,
        }
    }

    /// `(row, col)` of `Gamma` addressed by `gamma[idx]`.
    pub fn position(&self, idx: usize) -> (usize, usize) {
        match self.kind {
            CovKind::Unstructured => {
                let mut t = 0;
                while (t + 1) * (t + 2) / 2 <= idx {
                    t += 1;
                }
                (t, idx - t * (t + 1) / 2)
            }
            CovKind::Diagonal => (idx, idx),
        }
    }

    /// `gamma` index of the diagonal element `Gamma[t, t]`.
    pub fn diagonal_index(&self, t: usize) -> usize {
        self.group_range(t).end - 1
    }

    pub fn check_gamma<F>(&self, gamma: &[F]) -> Result<()> {
        if gamma.len() != self.gamma_len() {
            return Err(PglmmError::Dimension(format!(
                "gamma has length {} but a {:?} structure with q = {} needs {}",
                gamma.len(),
                self.kind,
                self.q,
                self.gamma_len()
            )));
        }
        Ok(())
    }

    pub fn build_jq(&self) -> Jq {
        let entries = (0..self.gamma_len())
            .map(|idx| {
                let (r, c) = self.position(idx);
                c * self.q + r
            })
            .collect();
        Jq { q: self.q, entries }
    }

    /// Dense lower-triangular `Gamma` assembled from `gamma`.
    pub fn gamma_matrix<F: Real>(&self, gamma: &[F]) -> Array2<F> {
        let mut g = Array2::zeros((self.q, self.q));
        for (idx, &v) in gamma.iter().enumerate() {
            let (r, c) = self.position(idx);
            g[[r, c]] = v;
        }
        g
    }

    /// Random-effect covariance `Gamma Gamma'`.
    pub fn random_effect_cov<F: Real>(&self, gamma: &[F]) -> Array2<F> {
        let g = self.gamma_matrix(gamma);
        let q = self.q;
        let mut out = Array2::zeros((q, q));
        for i in 0..q {
            for j in 0..=i {
                let mut s = F::zero();
                for h in 0..=j {
                    s = s + g[[i, h]] * g[[j, h]];
                }
                out[[i, j]] = s;
                out[[j, i]] = s;
            }
        }
        out
    }

    /// Squared norm of row `t`, i.e. the variance of random effect `t`.
    pub fn row_variance<F: Real>(&self, gamma: &[F], t: usize) -> F {
        gamma[self.group_range(t)].iter().map(|&v| v * v).sum()
    }
}

/// Sparse 0/1 matrix of shape `q^2 x len(gamma)` with `vec(Gamma) = J_q gamma`
/// (column-major `vec`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Jq {
    q: usize,
    /// Row of `J_q` holding the single 1 of each column.
    entries: Vec<usize>,
}

impl Jq {
    pub fn shape(&self) -> (usize, usize) {
        (self.q * self.q, self.entries.len())
    }

    /// Row index of the 1 in column `col`.
    pub fn row_of(&self, col: usize) -> usize {
        self.entries[col]
    }

    pub fn to_dense<F: Real>(&self) -> Array2<F> {
        let (r, c) = self.shape();
        let mut m = Array2::zeros((r, c));
        for (col, &row) in self.entries.iter().enumerate() {
            m[[row, col]] = F::one();
        }
        m
    }

    /// `J_q gamma`, i.e. `vec(Gamma)`.
    pub fn apply<F: Real>(&self, gamma: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); self.q * self.q];
        for (col, &row) in self.entries.iter().enumerate() {
            out[row] = gamma[col];
        }
        out
    }

    /// `v' J_q` for a length `q^2` row vector `v`.
    pub fn project_row<F: Real>(&self, v: &[F]) -> Vec<F> {
        self.entries.iter().map(|&row| v[row]).collect()
    }
}
