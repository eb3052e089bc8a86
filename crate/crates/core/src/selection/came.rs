//! Marginal log-likelihood by the corrected arithmetic mean estimator.
//!
//! For each group the integral of `f(y_k | alpha) phi(alpha)` is estimated by
//! importance sampling from a normal fitted to the posterior draws, keeping
//! only proposals inside the axis-aligned bounding box of those draws.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::linalg::cholesky;
use crate::model::{CovStructure, Dataset, Family, Theta};
use crate::real::{log_sum_exp, Real};
use crate::sampler::PosteriorDraws;

pub const DEFAULT_M_STAR: usize = 5000;
pub const DEFAULT_THIN: usize = 10;
const RIDGE: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameEstimate {
    /// `sum_k log f(y_k)`.
    pub total: f64,
    /// `sum_k (1/n_k) log f(y_k)`.
    pub weighted: f64,
    pub per_group: Vec<f64>,
}

/// Log-likelihood of group `k` given the standardized random effects, with
/// only the coordinates in `active` nonzero.
fn group_loglik<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    tau: F,
    fixed: &[F],
    coef: &Array2<F>,
    rows: &[usize],
    alpha_active: &[f64],
) -> f64 {
    let mut s = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        let mut eta = fixed[r].to_f64_lossy();
        for (a, &av) in alpha_active.iter().enumerate() {
            eta += coef[[r, a]].to_f64_lossy() * av;
        }
        s += family.log_density(ds.y()[i].to_f64_lossy(), eta, tau.to_f64_lossy());
    }
    s
}

/// CAME estimate of the marginal log-likelihood at `theta`.
///
/// `draws` are posterior draws of the standardized random effects at
/// `theta`; every `thin`-th draw feeds the proposal covariance, which is
/// ridge-regularized when singular. Coordinates whose column of `Gamma` is
/// zero integrate out exactly and are skipped.
#[allow(clippy::too_many_arguments)]
pub fn came_marginal_loglik<F: Real>(
    ds: &Dataset<F>,
    theta: &Theta<F>,
    structure: &CovStructure,
    family: Family,
    draws: &PosteriorDraws<F>,
    m_star: usize,
    thin: usize,
    seed: u64,
) -> Result<CameEstimate> {
    let q = structure.q;
    if draws.q() != q || draws.k() != ds.n_groups() || ds.q() != q {
        return Err(PglmmError::Dimension(format!(
            "draws have q = {}, K = {}; model q = {}, K = {}",
            draws.q(),
            draws.k(),
            q,
            ds.n_groups()
        )));
    }
    structure.check_gamma(&theta.gamma)?;
    if m_star == 0 || thin == 0 {
        return Err(PglmmError::Config("M_star and thin must be positive".into()));
    }
    let gm = structure.gamma_matrix(&theta.gamma);
    let active: Vec<usize> = (0..q).filter(|&h| gm.column(h).iter().any(|v| *v != F::zero())).collect();
    let d = active.len();
    if d > 0 && draws.m() == 0 {
        return Err(PglmmError::Dimension("posterior draws are empty".into()));
    }

    let mut per_group = Vec::with_capacity(ds.n_groups());
    for k in 0..ds.n_groups() {
        let rows = ds.group_rows(k);
        let fixed: Vec<F> = rows.iter().map(|&i| ds.fixed_predictor(&theta.beta, i)).collect();
        let mut coef = Array2::<F>::zeros((rows.len(), d));
        for (r, &i) in rows.iter().enumerate() {
            let z = ds.z().row(i);
            for (a, &h) in active.iter().enumerate() {
                let mut s = F::zero();
                for t in h..q {
                    s = s + z[t] * gm[[t, h]];
                }
                coef[[r, a]] = s;
            }
        }
        if d == 0 {
            per_group.push(group_loglik(ds, family, theta.tau, &fixed, &coef, rows, &[]));
            continue;
        }

        let block = draws.group_block(k);
        let m = block.nrows();
        let sample: Vec<Vec<f64>> =
            (0..m).map(|r| active.iter().map(|&h| block[[r, h]].to_f64_lossy()).collect()).collect();
        let mean: Vec<f64> = (0..d).map(|a| sample.iter().map(|s| s[a]).sum::<f64>() / m as f64).collect();
        let lower: Vec<f64> = (0..d).map(|a| sample.iter().map(|s| s[a]).fold(f64::INFINITY, f64::min)).collect();
        let upper: Vec<f64> = (0..d).map(|a| sample.iter().map(|s| s[a]).fold(f64::NEG_INFINITY, f64::max)).collect();
        let thinned: Vec<&Vec<f64>> = sample.iter().step_by(thin).collect();
        let tm: Vec<f64> = (0..d).map(|a| thinned.iter().map(|s| s[a]).sum::<f64>() / thinned.len() as f64).collect();
        let denom = (thinned.len().max(2) - 1) as f64;
        let mut cov = Array2::<f64>::zeros((d, d));
        for s in &thinned {
            for a in 0..d {
                for b in 0..=a {
                    cov[[a, b]] += (s[a] - tm[a]) * (s[b] - tm[b]) / denom;
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[[b, a]] = cov[[a, b]];
            }
        }
        let chol = match cholesky(&cov).filter(|l| l.diag().iter().all(|&v| v > 1e-12)) {
            Some(l) => l,
            None => {
                log::warn!("group {k}: singular proposal covariance, adding a {RIDGE:e} ridge");
                for a in 0..d {
                    cov[[a, a]] += RIDGE;
                }
                cholesky(&cov).ok_or(PglmmError::NonFiniteDensity { group: k })?
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ds.group_key(k));
        let proposal = NormalProposal { mean, chol };
        let ll = |point: &[f64]| group_loglik(ds, family, theta.tau, &fixed, &coef, rows, point);
        per_group.push(came_group_log_estimate(ll, &proposal, Some((&lower, &upper)), m_star, &mut rng));
    }
    let total = per_group.iter().sum();
    let weighted = per_group.iter().enumerate().map(|(k, v)| v / ds.group_rows(k).len() as f64).sum();
    Ok(CameEstimate { total, weighted, per_group })
}

/// Multivariate normal importance density given by its mean and lower
/// Cholesky factor.
pub struct NormalProposal {
    pub mean: Vec<f64>,
    pub chol: Array2<f64>,
}

impl NormalProposal {
    pub fn standard(d: usize) -> Self {
        NormalProposal { mean: vec![0.0; d], chol: Array2::eye(d) }
    }
}

/// `log( (1/M*) sum_j f(y | a_j) phi(a_j) 1{a_j in box} / s(a_j) )` with
/// `a_j` drawn from `proposal`; `bounds = None` accepts every draw.
pub fn came_group_log_estimate<R: Rng + ?Sized>(
    loglik: impl Fn(&[f64]) -> f64,
    proposal: &NormalProposal,
    bounds: Option<(&[f64], &[f64])>,
    m_star: usize,
    rng: &mut R,
) -> f64 {
    let d = proposal.mean.len();
    let log_det_half: f64 = proposal.chol.diag().iter().map(|v| v.ln()).sum();
    let mut log_w = Vec::with_capacity(m_star);
    let mut eps = vec![0.0; d];
    let mut point = vec![0.0; d];
    for _ in 0..m_star {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for a in 0..d {
            let mut v = proposal.mean[a];
            for b in 0..=a {
                v += proposal.chol[[a, b]] * eps[b];
            }
            point[a] = v;
        }
        if let Some((lower, upper)) = bounds {
            if (0..d).any(|a| point[a] < lower[a] || point[a] > upper[a]) {
                log_w.push(f64::NEG_INFINITY);
                continue;
            }
        }
        let log_s = -0.5 * d as f64 * LN_2PI - log_det_half - 0.5 * eps.iter().map(|e| e * e).sum::<f64>();
        let log_prior = -0.5 * d as f64 * LN_2PI - 0.5 * point.iter().map(|e| e * e).sum::<f64>();
        log_w.push(loglik(&point) + log_prior - log_s);
    }
    log_sum_exp(&log_w) - (m_star as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovKind;

    #[test]
    fn zero_gamma_gives_fixed_effect_loglik() {
        let ds = Dataset::new(
            vec![1.0, 0.0, 1.0, 1.0],
            ndarray::array![[0.3], [-0.2], [1.0], [0.1]],
            vec![],
            &["a", "a", "b", "b"],
        )
        .unwrap();
        let s = CovStructure::new(CovKind::Unstructured, 1);
        let th = Theta { beta: vec![0.2, -0.5], gamma: vec![0.0], tau: 1.0 };
        let draws =
            PosteriorDraws::new(Array2::from_elem((7, 2), 0.3), ds.levels().to_vec(), vec!["(Intercept)".into()])
                .unwrap();
        let est = came_marginal_loglik(&ds, &th, &s, Family::Binomial, &draws, 10, 2, 0).unwrap();
        let direct: f64 =
            (0..4).map(|i| Family::Binomial.log_density(ds.y()[i], ds.fixed_predictor(&th.beta, i), 1.0)).sum();
        assert!((est.total - direct).abs() < 1e-12);
        assert!((est.weighted - direct / 2.0).abs() < 1e-12);
    }

    #[test]
    fn prior_proposal_without_box_is_arithmetic_mean() {
        // two observations y = (1, 0) sharing a random intercept a
        let ll =
            |a: &[f64]| Family::Binomial.log_density(1.0, a[0], 1.0) + Family::Binomial.log_density(0.0, a[0], 1.0);
        let prop = NormalProposal::standard(1);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let est = came_group_log_estimate(ll, &prop, None, 400, &mut r1);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let mean: f64 = (0..400).map(|_| ll(&[r2.sample::<f64, _>(StandardNormal)]).exp()).sum::<f64>() / 400.0;
        assert!((est - mean.ln()).abs() < 1e-12);
    }
}
