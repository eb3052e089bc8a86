//! Simulated logistic mixed-model datasets and selection scoring.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::model::{Dataset, Family};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Standard deviation of each nonzero random effect.
    pub sigma: f64,
    /// Intercept first; length `p + 1`.
    pub beta_true: Vec<f64>,
    pub seed: u64,
    pub family: Family,
}

impl SimScenario {
    /// Binomial scenario with `beta = (0, 1, 1, 0, ..., 0)`.
    pub fn moderate(n: usize, p: usize, k: usize, sigma: f64, seed: u64) -> Self {
        let mut beta_true = vec![0.0; p + 1];
        beta_true[1] = 1.0;
        if p >= 2 {
            beta_true[2] = 1.0;
        }
        SimScenario { n, p, k, sigma, beta_true, seed, family: Family::Binomial }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(PglmmError::Config("simulation needs p >= 2".into()));
        }
        if self.beta_true.len() != self.p + 1 {
            return Err(PglmmError::Config(format!(
                "beta_true has {} entries, expected {}",
                self.beta_true.len(),
                self.p + 1
            )));
        }
        if self.k < 2 || self.n < self.k {
            return Err(PglmmError::Config(format!("cannot split {} observations into {} groups", self.n, self.k)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(PglmmError::Config("sigma must be finite and nonnegative".into()));
        }
        if self.family != Family::Binomial {
            return Err(PglmmError::Config("only the binomial scenario is supported".into()));
        }
        Ok(())
    }
}

/// Group sizes: the first group gets `ceil(n/3)`, the rest split evenly with
/// the remainder going to the lowest indices.
pub fn group_sizes(n: usize, k: usize) -> Vec<usize> {
    let first = n.div_ceil(3).min(n - (k - 1));
    let rest = n - first;
    let others = k - 1;
    let mut sizes = vec![first];
    sizes.extend((0..others).map(|j| rest / others + usize::from(j < rest % others)));
    sizes
}

/// Generating truth of a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta: Vec<f64>,
    /// Covariate indices (0-based, intercept excluded) with nonzero effect.
    pub fixef_positions: Vec<usize>,
    /// Random-effect indices (0 = intercept, `j + 1` = covariate `j`).
    pub ranef_positions: Vec<usize>,
    pub sigma: f64,
    pub group_sizes: Vec<usize>,
    /// Realized random effects, `K x q`, on the raw covariate scale.
    pub alpha: Vec<Vec<f64>>,
}

pub struct Simulated<F> {
    pub dataset: Dataset<F>,
    /// Raw (unstandardized) covariates.
    pub x_raw: Array2<f64>,
    pub truth: Truth,
}

/// Draws a dataset: `x ~ N(0, 1)`, random effects on every covariate,
/// nonzero random effects on the intercept and the true fixed effects.
pub fn simulate<F: Real>(sc: &SimScenario) -> Result<Simulated<F>> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let sizes = group_sizes(sc.n, sc.k);
    let fixef_positions: Vec<usize> = (0..sc.p).filter(|&j| sc.beta_true[j + 1] != 0.0).collect();
    let ranef_positions: Vec<usize> = std::iter::once(0).chain(fixef_positions.iter().map(|j| j + 1)).collect();
    let q = sc.p + 1;
    let normal = Normal::new(0.0, sc.sigma).map_err(|e| PglmmError::Config(e.to_string()))?;
    let alpha: Vec<Vec<f64>> = (0..sc.k)
        .map(|_| {
            let mut a = vec![0.0; q];
            for &t in &ranef_positions {
                a[t] = normal.sample(&mut rng);
            }
            a
        })
        .collect();

    let mut x_raw = Array2::<f64>::zeros((sc.n, sc.p));
    let mut y = Vec::with_capacity(sc.n);
    let mut labels = Vec::with_capacity(sc.n);
    let mut i = 0;
    for (k, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            for j in 0..sc.p {
                x_raw[[i, j]] = rng.sample(StandardNormal);
            }
            let mut eta = sc.beta_true[0] + alpha[k][0];
            for j in 0..sc.p {
                eta += x_raw[[i, j]] * (sc.beta_true[j + 1] + alpha[k][j + 1]);
            }
            let prob = eta.logistic();
            y.push(F::lit(if rng.random::<f64>() < prob { 1.0 } else { 0.0 }));
            labels.push((k + 1).to_string());
            i += 1;
        }
    }
    let xf = x_raw.mapv(F::lit);
    let dataset = Dataset::from_raw(y, &xf, (0..sc.p).collect(), &labels)?;
    Ok(Simulated {
        dataset,
        x_raw,
        truth: Truth {
            beta: sc.beta_true.clone(),
            fixef_positions,
            ranef_positions,
            sigma: sc.sigma,
            group_sizes: sizes,
            alpha,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub tp_fixef: usize,
    pub fp_fixef: usize,
    pub tp_ranef: usize,
    pub fp_ranef: usize,
    /// Estimates at the true fixed-effect positions.
    pub beta_true_hat: Vec<f64>,
    pub seconds: Option<f64>,
}

/// Counts selected effects against the truth. `beta` has the intercept first;
/// `ranef_var` is the diagonal of the random-effect covariance. Intercepts are
/// excluded from both counts.
pub fn score(beta: &[f64], ranef_var: &[f64], truth: &Truth) -> Result<SelectionScore> {
    if beta.len() != truth.beta.len() || ranef_var.len() != truth.beta.len() {
        return Err(PglmmError::Dimension(format!(
            "scored model has {} fixed and {} random effects, truth has {}",
            beta.len(),
            ranef_var.len(),
            truth.beta.len()
        )));
    }
    let (mut tp_fixef, mut fp_fixef, mut tp_ranef, mut fp_ranef) = (0, 0, 0, 0);
    for j in 0..beta.len() - 1 {
        let truly = truth.fixef_positions.contains(&j);
        if beta[j + 1] != 0.0 {
            if truly {
                tp_fixef += 1;
            } else {
                fp_fixef += 1;
            }
        }
        if ranef_var[j + 1] != 0.0 {
            if truth.ranef_positions.contains(&(j + 1)) {
                tp_ranef += 1;
            } else {
                fp_ranef += 1;
            }
        }
    }
    Ok(SelectionScore {
        tp_fixef,
        fp_fixef,
        tp_ranef,
        fp_ranef,
        beta_true_hat: truth.fixef_positions.iter().map(|&j| beta[j + 1]).collect(),
        seconds: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalanced_group_sizes() {
        assert_eq!(group_sizes(500, 5), vec![167, 84, 83, 83, 83]);
        assert_eq!(group_sizes(9, 3), vec![3, 3, 3]);
        assert_eq!(group_sizes(10, 2), vec![4, 6]);
    }

    #[test]
    fn same_seed_same_data() {
        let sc = SimScenario::moderate(60, 3, 3, 1.0, 9);
        let a = simulate::<f64>(&sc).unwrap();
        let b = simulate::<f64>(&sc).unwrap();
        assert_eq!(a.x_raw, b.x_raw);
        assert_eq!(a.dataset.y(), b.dataset.y());
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.truth.fixef_positions, vec![0, 1]);
        assert_eq!(a.truth.ranef_positions, vec![0, 1, 2]);
    }

    #[test]
    fn score_examples() {
        let sc = SimScenario::moderate(30, 10, 3, 1.0, 1);
        let t = simulate::<f64>(&sc).unwrap().truth;
        let mut perfect = vec![0.0; 11];
        perfect[1] = 1.1;
        perfect[2] = 0.9;
        let mut var = vec![0.0; 11];
        var[0] = 1.0;
        var[1] = 0.5;
        var[2] = 0.5;
        let s = score(&perfect, &var, &t).unwrap();
        assert_eq!((s.tp_fixef, s.fp_fixef, s.tp_ranef, s.fp_ranef), (2, 0, 2, 0));
        assert_eq!(s.beta_true_hat, vec![1.1, 0.9]);
        let mut intercept_only = vec![0.0; 11];
        intercept_only[0] = 0.3;
        let mut intercept_var = vec![0.0; 11];
        intercept_var[0] = 1.0;
        let s = score(&intercept_only, &intercept_var, &t).unwrap();
        assert_eq!((s.tp_fixef, s.fp_fixef, s.tp_ranef, s.fp_ranef), (0, 0, 0, 0));
        let s = score(&[1.0; 11], &[1.0; 11], &t).unwrap();
        assert_eq!((s.tp_fixef, s.fp_fixef), (2, 8));
    }
}
