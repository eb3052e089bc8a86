//! Tuning-parameter selection: penalty sequences, information criteria, the
//! marginal log-likelihood and the grid searches.

mod came;
mod search;

pub use came::{
    came_group_log_estimate, came_marginal_loglik, CameEstimate, NormalProposal, DEFAULT_M_STAR, DEFAULT_THIN,
};
pub use search::{
    evaluate_criteria, fit_minimal_penalty_model, full_grid_search, load_minimal_penalty_posterior, two_stage_search,
    FitSummary, MinimalPenaltyPosterior, SearchConfig, SearchKind, SelectionResult, Stage,
};

use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::model::{Dataset, Family};
use crate::real::Real;
use crate::sampler::PosteriorDraws;

/// Smallest penalty that zeroes every penalized coefficient of the model
/// without random effects: `max_j |x_j' (y - ybar)| / (N alpha)`.
pub fn lambda_max<F: Real>(ds: &Dataset<F>, _family: Family, alpha_mix: f64) -> f64 {
    let n = ds.n();
    if n == 0 || ds.p() == 0 {
        return 0.0;
    }
    let ybar = ds.y().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n as f64;
    let mut best = 0.0f64;
    for col in ds.x().columns() {
        let s: f64 = col.iter().zip(ds.y()).map(|(x, y)| x.to_f64_lossy() * (y.to_f64_lossy() - ybar)).sum();
        best = best.max(s.abs());
    }
    best / (n as f64 * alpha_mix)
}

/// `nlambda` log-equispaced values from `ratio * lambda_max` to `lambda_max`,
/// ascending.
pub fn make_sequence(lambda_max: f64, ratio: f64, nlambda: usize) -> Result<Vec<f64>> {
    if nlambda == 0 {
        return Err(PglmmError::Config("nlambda must be positive".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(PglmmError::Config(format!("lambda_min_ratio must lie in (0, 1], got {ratio}")));
    }
    if lambda_max <= 0.0 {
        return Ok(vec![0.0]);
    }
    if nlambda == 1 {
        return Ok(vec![lambda_max]);
    }
    let lo = (ratio * lambda_max).ln();
    let hi = lambda_max.ln();
    let step = (hi - lo) / (nlambda - 1) as f64;
    let mut seq: Vec<f64> = (0..nlambda).map(|i| (lo + step * i as f64).exp()).collect();
    seq[0] = ratio * lambda_max;
    seq[nlambda - 1] = lambda_max;
    Ok(seq)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "BICq")]
    BicQ,
    #[serde(rename = "BICh")]
    BicH,
    #[serde(rename = "BIC")]
    Bic,
    #[serde(rename = "BICNgrp")]
    BicNgrp,
}

impl Criterion {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bicq" => Ok(Criterion::BicQ),
            "bich" => Ok(Criterion::BicH),
            "bic" => Ok(Criterion::Bic),
            "bicngrp" => Ok(Criterion::BicNgrp),
            _ => Err(PglmmError::UnknownName { kind: "criterion", name: s.to_string() }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::BicQ => "BICq",
            Criterion::BicH => "BICh",
            Criterion::Bic => "BIC",
            Criterion::BicNgrp => "BICNgrp",
        }
    }
}

/// Information criteria of one fit. Likelihood-based entries are absent when
/// the marginal log-likelihood was not computed; `bicq` is absent without a
/// minimal-penalty posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionSet {
    #[serde(rename = "BICq")]
    pub bicq: Option<f64>,
    #[serde(rename = "BICh")]
    pub bich: Option<f64>,
    #[serde(rename = "BIC")]
    pub bic: Option<f64>,
    #[serde(rename = "BICNgrp")]
    pub bic_ngrp: Option<f64>,
    pub d_lambda: usize,
    pub d_beta: usize,
    pub d_gamma: usize,
    /// Group-size weighted CAME log-likelihood used by BIC, BICh and BICNgrp.
    pub loglik: Option<f64>,
    /// Unweighted CAME log-likelihood `sum_k log f(y_k)`.
    pub loglik_total: Option<f64>,
}

impl CriterionSet {
    pub fn get(&self, c: Criterion) -> Option<f64> {
        match c {
            Criterion::BicQ => self.bicq,
            Criterion::BicH => self.bich,
            Criterion::Bic => self.bic,
            Criterion::BicNgrp => self.bic_ngrp,
        }
    }
}

/// `(BIC, BICh, BICNgrp)` from a log-likelihood and nonzero counts.
pub fn bic_family(loglik: f64, d_beta: usize, d_gamma: usize, n_obs: usize, n_grps: usize) -> (f64, f64, f64) {
    let d = (d_beta + d_gamma) as f64;
    let lo = (n_obs as f64).ln();
    let lg = (n_grps as f64).ln();
    let base = -2.0 * loglik;
    (base + d * lo, base + d_beta as f64 * lo + d_gamma as f64 * lg, base + d * lg)
}

/// BIC-ICQ: `-(2/M) sum_m sum_k [log f(y_k | alpha0_k^(m); theta) + log phi(alpha0_k^(m))]
/// + d log(N)` with `alpha0` drawn under the minimal-penalty model.
pub fn bic_icq<F: Real>(
    theta: &crate::model::Theta<F>,
    structure: &crate::model::CovStructure,
    minpen_draws: &PosteriorDraws<F>,
    ds: &Dataset<F>,
    family: Family,
) -> Result<f64> {
    let q = structure.q;
    if minpen_draws.q() != q || minpen_draws.k() != ds.n_groups() || ds.q() != q {
        return Err(PglmmError::Dimension(format!(
            "minimal-penalty draws have q = {}, K = {}; model q = {}, K = {}",
            minpen_draws.q(),
            minpen_draws.k(),
            q,
            ds.n_groups()
        )));
    }
    structure.check_gamma(&theta.gamma)?;
    let m = minpen_draws.m();
    if m == 0 {
        return Err(PglmmError::Dimension("minimal-penalty draws are empty".into()));
    }
    let gm = structure.gamma_matrix(&theta.gamma);
    let tau = theta.tau.to_f64_lossy();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let data = minpen_draws.data();
    let mut total = 0.0;
    let mut coef = vec![0.0; q];
    for k in 0..ds.n_groups() {
        for &i in ds.group_rows(k) {
            let z = ds.z().row(i);
            for h in 0..q {
                let mut s = 0.0;
                for t in h..q {
                    s += (z[t] * gm[[t, h]]).to_f64_lossy();
                }
                coef[h] = s;
            }
            let fixed = ds.fixed_predictor(&theta.beta, i).to_f64_lossy();
            let y = ds.y()[i].to_f64_lossy();
            for r in 0..m {
                let mut eta = fixed;
                for (h, &c) in coef.iter().enumerate() {
                    if c != 0.0 {
                        eta += c * data[[r, k * q + h]].to_f64_lossy();
                    }
                }
                total += family.log_density(y, eta, tau);
            }
        }
        for r in 0..m {
            let sq: f64 = (0..q).map(|h| data[[r, k * q + h]].to_f64_lossy().powi(2)).sum();
            total += -0.5 * q as f64 * ln_2pi - 0.5 * sq;
        }
    }
    let d = theta.nonzero_beta() + theta.nonzero_gamma();
    Ok(-2.0 * total / m as f64 + d as f64 * (ds.n() as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_examples() {
        let s = make_sequence(1.0, 0.01, 3).unwrap();
        assert!((s[0] - 0.01).abs() < 1e-15 && (s[1] - 0.1).abs() < 1e-12 && s[2] == 1.0);
        assert_eq!(make_sequence(2.0, 0.01, 1).unwrap(), vec![2.0]);
        assert!(make_sequence(2.0, 1.0, 4).unwrap().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert_eq!(make_sequence(0.0, 0.01, 5).unwrap(), vec![0.0]);
    }

    #[test]
    fn lambda_max_hand_example() {
        let x = ndarray::array![
            [-1.341_640_786_499_874],
            [-0.447_213_595_499_958],
            [0.447_213_595_499_958],
            [1.341_640_786_499_874]
        ];
        let ds = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], x.clone(), vec![], &["a", "a", "b", "b"]).unwrap();
        assert!((lambda_max(&ds, Family::Gaussian, 1.0) - 1.118_033_988_749_895).abs() < 1e-12);
        let flat = Dataset::new(vec![2.0; 4], x, vec![], &["a", "a", "b", "b"]).unwrap();
        assert_eq!(lambda_max(&flat, Family::Gaussian, 1.0), 0.0);
    }

    #[test]
    fn bic_arithmetic() {
        let (bic, bich, ngrp) = bic_family(-100.0, 3, 2, 100, 5);
        assert!((bic - 223.025_850_929_940_5).abs() < 1e-9);
        assert!((bich - 217.034_386_382_832_5).abs() < 1e-9);
        assert!((ngrp - (200.0 + 5.0 * 5f64.ln())).abs() < 1e-12);
        assert_eq!(bic_family(-7.5, 0, 0, 50, 4), (15.0, 15.0, 15.0));
    }
}
