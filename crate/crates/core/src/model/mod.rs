//! Statistical model: families, covariance parameterization, data and the
//! linear predictor.

mod dataset;
mod family;
mod structure;

pub use dataset::{standardize, Dataset, Standardization};
pub use family::Family;
pub use structure::{CovKind, CovStructure, Jq};

use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::real::Real;

/// Model parameters: fixed effects (intercept first), Cholesky vector and
/// dispersion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta<F> {
    pub beta: Vec<F>,
    pub gamma: Vec<F>,
    pub tau: F,
}

impl<F: Real> Theta<F> {
    pub fn zeros(p: usize, structure: &CovStructure) -> Self {
        Theta { beta: vec![F::zero(); p + 1], gamma: vec![F::zero(); structure.gamma_len()], tau: F::one() }
    }

    /// `(beta', gamma')'` as one vector.
    pub fn coefficients(&self) -> Vec<F> {
        self.beta.iter().chain(self.gamma.iter()).copied().collect()
    }

    pub fn nonzero_beta(&self) -> usize {
        self.beta.iter().filter(|v| **v != F::zero()).count()
    }

    pub fn nonzero_gamma(&self) -> usize {
        self.gamma.iter().filter(|v| **v != F::zero()).count()
    }

    /// Random effects whose variance row is not identically zero.
    pub fn active_random_effects(&self, structure: &CovStructure) -> Vec<bool> {
        (0..structure.q).map(|t| self.gamma[structure.group_range(t)].iter().any(|v| *v != F::zero())).collect()
    }

    /// Flips the sign of every column of `Gamma` whose diagonal entry is
    /// negative. `Gamma Gamma'` is unchanged; the returned columns identify the
    /// random-effect coordinates whose sign must be flipped alongside.
    pub fn normalize_signs(&mut self, structure: &CovStructure) -> Vec<usize> {
        let mut flipped = Vec::new();
        for h in 0..structure.q {
            let d = structure.diagonal_index(h);
            if self.gamma[d] < F::zero() {
                for idx in 0..self.gamma.len() {
                    if structure.position(idx).1 == h {
                        self.gamma[idx] = -self.gamma[idx];
                    }
                }
                flipped.push(h);
            }
        }
        flipped
    }
}

/// `eta_ki = x_ki' beta + z_ki' Gamma alpha_k` for row `i` of group `k`.
pub fn linear_predictor<F: Real>(
    dataset: &Dataset<F>,
    theta: &Theta<F>,
    structure: &CovStructure,
    alpha_k: &[F],
    k: usize,
    i: usize,
) -> Result<F> {
    check_predictor_inputs(dataset, theta, structure, alpha_k, k, i)?;
    let z = dataset.z().row(i);
    let mut random = F::zero();
    for (idx, &g) in theta.gamma.iter().enumerate() {
        let (t, h) = structure.position(idx);
        random = random + z[t] * g * alpha_k[h];
    }
    Ok(dataset.fixed_predictor(&theta.beta, i) + random)
}

/// The same predictor written as `(x_ki', (alpha_k kron z_ki)' J_q) (beta', gamma')'`.
pub fn linear_predictor_kron<F: Real>(
    dataset: &Dataset<F>,
    theta: &Theta<F>,
    structure: &CovStructure,
    alpha_k: &[F],
    k: usize,
    i: usize,
) -> Result<F> {
    check_predictor_inputs(dataset, theta, structure, alpha_k, k, i)?;
    let z = dataset.z().row(i);
    let q = structure.q;
    let mut kron = vec![F::zero(); q * q];
    for (a, &av) in alpha_k.iter().enumerate() {
        for (b, &zv) in z.iter().enumerate() {
            kron[a * q + b] = av * zv;
        }
    }
    let augmented = structure.build_jq().project_row(&kron);
    let mut eta = F::zero();
    eta = eta + theta.beta[0];
    for (j, &xv) in dataset.x().row(i).iter().enumerate() {
        eta = eta + xv * theta.beta[j + 1];
    }
    for (a, g) in augmented.iter().zip(theta.gamma.iter()) {
        eta = eta + *a * *g;
    }
    Ok(eta)
}

fn check_predictor_inputs<F: Real>(
    dataset: &Dataset<F>,
    theta: &Theta<F>,
    structure: &CovStructure,
    alpha_k: &[F],
    k: usize,
    i: usize,
) -> Result<()> {
    if i >= dataset.n() || dataset.group_of(i) != k {
        return Err(PglmmError::Dimension(format!("row {i} does not belong to group {k}")));
    }
    if theta.beta.len() != dataset.p() + 1 {
        return Err(PglmmError::Dimension(format!(
            "beta has length {} but p + 1 = {}",
            theta.beta.len(),
            dataset.p() + 1
        )));
    }
    if alpha_k.len() != structure.q || structure.q != dataset.q() {
        return Err(PglmmError::Dimension(format!(
            "alpha has length {}, structure q = {}, data q = {}",
            alpha_k.len(),
            structure.q,
            dataset.q()
        )));
    }
    structure.check_gamma(&theta.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_group() -> Dataset<f64> {
        Dataset::new(vec![0.0, 1.0], array![[0.5, -1.0], [2.0, 0.25]], vec![1], &["g", "g"]).unwrap()
    }

    #[test]
    fn zero_gamma_or_alpha_gives_fixed_part() {
        let ds = one_group();
        let s = CovStructure::new(CovKind::Unstructured, 2);
        let th = Theta { beta: vec![0.1, 1.0, 2.0], gamma: vec![0.0; 3], tau: 1.0 };
        let fixed = 0.1 + 0.5 - 2.0;
        assert!((linear_predictor(&ds, &th, &s, &[3.0, -4.0], 0, 0).unwrap() - fixed).abs() < 1e-15);
        let th2 = Theta { gamma: vec![1.0, 0.3, 2.0], ..th };
        assert!((linear_predictor(&ds, &th2, &s, &[0.0, 0.0], 0, 0).unwrap() - fixed).abs() < 1e-15);
    }

    #[test]
    fn scalar_random_intercept() {
        let ds = Dataset::new(vec![0.0], ndarray::Array2::zeros((1, 0)), vec![], &["a"]).unwrap();
        let s = CovStructure::new(CovKind::Unstructured, 1);
        let th = Theta { beta: vec![0.0], gamma: vec![2.0], tau: 1.0 };
        assert_eq!(linear_predictor(&ds, &th, &s, &[0.5], 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn wrong_group_is_an_error() {
        let ds = one_group();
        let s = CovStructure::new(CovKind::Diagonal, 2);
        let th = Theta { beta: vec![0.0; 3], gamma: vec![1.0, 1.0], tau: 1.0 };
        assert!(linear_predictor(&ds, &th, &s, &[0.0, 0.0], 1, 0).is_err());
        assert!(linear_predictor(&ds, &th, &s, &[0.0], 0, 0).is_err());
    }

    #[test]
    fn sign_normalization_preserves_covariance() {
        let s = CovStructure::new(CovKind::Unstructured, 3);
        let mut th: Theta<f64> = Theta { beta: vec![0.0], gamma: vec![-1.0, 0.4, -2.0, 0.3, 0.7, -0.5], tau: 1.0 };
        let before = s.random_effect_cov(&th.gamma);
        let flipped = th.normalize_signs(&s);
        assert_eq!(flipped, vec![0, 1, 2]);
        let after = s.random_effect_cov(&th.gamma);
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        for t in 0..3 {
            assert!(th.gamma[s.diagonal_index(t)] >= 0.0);
        }
    }
}
