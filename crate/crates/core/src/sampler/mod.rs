//! Monte Carlo E-step: Metropolis-within-Gibbs draws from the posterior of
//! each group's standardized random effects `alpha_k ~ N_q(0, I)`.

mod draws;

pub use draws::{sidecar_path, PosteriorDraws, PosteriorMeta, POSTERIOR_MAGIC};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::model::{CovStructure, Dataset, Family, Theta};
use crate::real::Real;

/// Sweeps per adaptation batch of the random-walk scales.
pub const ADAPT_BATCH: usize = 50;
/// Per-coordinate acceptance rate targeted by the random-walk adaptation.
pub const TARGET_ACCEPT: f64 = 0.44;
const MAX_ADAPT_STEP: f64 = 0.1;
const LOG_SCALE_BOUND: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    AdaptiveRandomWalk,
    Independence,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "adaptiverandomwalk" | "randomwalk" | "rw" => Ok(SamplerKind::AdaptiveRandomWalk),
            "independence" => Ok(SamplerKind::Independence),
            _ => Err(PglmmError::UnknownName { kind: "sampler", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Sweeps discarded at the start of every E-step.
    pub nmc_burnin: usize,
    /// Draws retained in the first EM iteration.
    pub nmc_start: usize,
    /// Cap on the draws retained per E-step.
    pub nmc_max: usize,
    /// Draws retained by the final E-step after convergence.
    pub nmc_report: usize,
    pub seed: u64,
    /// Sample groups on the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
}

impl SamplerConfig {
    /// Defaults for a random-effect dimension `q` (intercept included).
    pub fn for_dimension(q: usize) -> Self {
        SamplerConfig {
            kind: SamplerKind::AdaptiveRandomWalk,
            nmc_burnin: 250,
            nmc_start: default_nmc_start(q),
            nmc_max: default_nmc_max(q),
            nmc_report: 5000,
            seed: 2024,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nmc_start == 0 || self.nmc_max == 0 || self.nmc_report == 0 {
            return Err(PglmmError::Config("MCMC sample sizes must be positive".into()));
        }
        if self.nmc_start > self.nmc_max {
            return Err(PglmmError::Config(format!(
                "nmc_start ({}) exceeds nmc_max ({})",
                self.nmc_start, self.nmc_max
            )));
        }
        Ok(())
    }
}

pub fn default_nmc_start(q: usize) -> usize {
    if q <= 10 {
        250
    } else {
        100
    }
}

pub fn default_nmc_max(q: usize) -> usize {
    if q <= 10 {
        2500
    } else {
        1000
    }
}

/// Number of retained draws in EM iteration `s` (1-based).
///
/// The first iteration uses `nmc_start`; afterwards the previous size grows by
/// 1.1 through iteration 15 and by 1.2 after that, rounded up and capped at
/// `nmc_max`.
pub fn sample_size_schedule(s: usize, m_prev: usize, nmc_start: usize, nmc_max: usize) -> usize {
    if s <= 1 {
        return nmc_start.min(nmc_max);
    }
    // exact integer ceil(f * m_prev) for f = 11/10 or 12/10
    let num = if s <= 15 { 11 } else { 12 };
    let grown = (num * m_prev + 9) / 10;
    grown.min(nmc_max)
}

/// Metropolis-Hastings decision: accept with probability
/// `min(1, exp(log_post_prop - log_post_cur + log_q_ratio))`.
pub fn mh_accept<R: Rng + ?Sized>(log_post_prop: f64, log_post_cur: f64, log_q_ratio: f64, rng: &mut R) -> bool {
    let log_ratio = log_post_prop - log_post_cur + log_q_ratio;
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

/// Per-group Markov chain state carried across E-steps and across fits.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState<F> {
    /// Last draw of every group (K x q).
    pub current: Array2<F>,
    /// Random-walk proposal log-scales (K x q).
    pub log_scales: Array2<F>,
    /// Cumulative accepted / proposed Metropolis moves (K x q).
    pub accepted: Array2<u64>,
    pub proposed: Array2<u64>,
    /// Adaptation batches completed per group.
    pub batches: Vec<u64>,
    /// E-steps run so far; keys the RNG streams.
    pub epoch: u64,
}

impl<F: Real> ChainState<F> {
    /// Chains started from independent standard normal draws.
    pub fn standard_normal(k: usize, q: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, u64::MAX));
        let current = Array2::from_shape_simple_fn((k, q), || F::lit(rng.sample::<f64, _>(StandardNormal)));
        ChainState {
            current,
            log_scales: Array2::zeros((k, q)),
            accepted: Array2::zeros((k, q)),
            proposed: Array2::zeros((k, q)),
            batches: vec![0; k],
            epoch: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.current.nrows()
    }

    pub fn q(&self) -> usize {
        self.current.ncols()
    }

    /// Moves each log-scale of group `k` toward the target acceptance rate.
    ///
    /// The step is `min(0.1, n^{-1/2})` for the `n`-th batch of that group, so
    /// adaptation diminishes over the run; a rate equal to the target leaves
    /// the scale unchanged.
    pub fn adapt_scales(&mut self, k: usize, batch_accept_rates: &[f64]) {
        let mut row = self.log_scales.row(k).to_vec();
        adapt_log_scales(&mut row, &mut self.batches[k], batch_accept_rates);
        for (h, v) in row.into_iter().enumerate() {
            self.log_scales[[k, h]] = v;
        }
    }

    /// Negates coordinate `h` of every chain, matching a sign flip of column
    /// `h` of `Gamma`.
    pub fn flip_coordinate(&mut self, h: usize) {
        self.current.column_mut(h).mapv_inplace(|v| -v);
    }
}

struct GroupOutcome<F> {
    draws: Vec<F>,
    state: Vec<F>,
    log_scales: Vec<F>,
    accepted: Vec<u64>,
    proposed: Vec<u64>,
    batches: u64,
}

/// Runs `burnin + m` Metropolis-within-Gibbs sweeps for every group, keeps the
/// last `m`, and leaves each chain at its final draw.
///
/// Coordinates whose column of `Gamma` is zero do not enter the likelihood;
/// they are drawn exactly from the N(0, 1) prior.
#[allow(clippy::too_many_arguments)]
pub fn estep_sample<F: Real>(
    dataset: &Dataset<F>,
    theta: &Theta<F>,
    structure: &CovStructure,
    family: Family,
    chain: &mut ChainState<F>,
    m: usize,
    burnin: usize,
    config: &SamplerConfig,
) -> Result<PosteriorDraws<F>> {
    let k_groups = dataset.n_groups();
    let q = structure.q;
    if chain.k() != k_groups || chain.q() != q || dataset.q() != q {
        return Err(PglmmError::Dimension(format!(
            "chain is {}x{}, data has K = {} and q = {}",
            chain.k(),
            chain.q(),
            k_groups,
            dataset.q()
        )));
    }
    structure.check_gamma(&theta.gamma)?;
    if theta.beta.iter().chain(theta.gamma.iter()).any(|v| !v.is_finite()) || !theta.tau.is_finite() {
        return Err(PglmmError::NonFiniteResiduals);
    }

    let gamma_mat = structure.gamma_matrix(&theta.gamma);
    let active: Vec<bool> = (0..q).map(|h| gamma_mat.column(h).iter().any(|v| *v != F::zero())).collect();
    let epoch_seed = mix(config.seed, chain.epoch);

    let run = |k: usize| -> Result<GroupOutcome<F>> {
        let rows = dataset.group_rows(k);
        let n_k = rows.len();
        let mut coef = Array2::<F>::zeros((n_k, q));
        let mut y = Vec::with_capacity(n_k);
        let mut fixed = Vec::with_capacity(n_k);
        for (r, &i) in rows.iter().enumerate() {
            y.push(dataset.y()[i]);
            fixed.push(dataset.fixed_predictor(&theta.beta, i));
            let z = dataset.z().row(i);
            for h in 0..q {
                if active[h] {
                    let mut s = F::zero();
                    for t in h..q {
                        s = s + z[t] * gamma_mat[[t, h]];
                    }
                    coef[[r, h]] = s;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        rng.set_stream(dataset.group_key(k));
        sample_group(
            family,
            theta.tau,
            &y,
            &fixed,
            &coef,
            &active,
            chain.current.row(k).to_vec(),
            chain.log_scales.row(k).to_vec(),
            chain.batches[k],
            m,
            burnin,
            config.kind,
            &mut rng,
        )
        .map_err(|()| PglmmError::NonFiniteDensity { group: k })
    };

    let outcomes: Vec<GroupOutcome<F>> = if config.parallel {
        (0..k_groups).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..k_groups).map(run).collect::<Result<_>>()?
    };

    let mut data = Array2::<F>::zeros((m, k_groups * q));
    for (k, out) in outcomes.into_iter().enumerate() {
        for row in 0..m {
            for h in 0..q {
                data[[row, k * q + h]] = out.draws[row * q + h];
            }
        }
        for h in 0..q {
            chain.current[[k, h]] = out.state[h];
            chain.log_scales[[k, h]] = out.log_scales[h];
            chain.accepted[[k, h]] += out.accepted[h];
            chain.proposed[[k, h]] += out.proposed[h];
        }
        chain.batches[k] = out.batches;
    }
    chain.epoch += 1;

    PosteriorDraws::new(data, dataset.levels().to_vec(), dataset.random_effect_names())
}

#[allow(clippy::too_many_arguments)]
fn sample_group<F: Real>(
    family: Family,
    tau: F,
    y: &[F],
    fixed: &[F],
    coef: &Array2<F>,
    active: &[bool],
    mut alpha: Vec<F>,
    mut log_scales: Vec<F>,
    mut batches: u64,
    m: usize,
    burnin: usize,
    kind: SamplerKind,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<GroupOutcome<F>, ()> {
    let q = alpha.len();
    let n_k = y.len();
    let half = F::lit(0.5);
    let mut eta: Vec<F> = (0..n_k)
        .map(|r| {
            let mut e = fixed[r];
            for h in 0..q {
                e = e + coef[[r, h]] * alpha[h];
            }
            e
        })
        .collect();
    let mut loglik: F = (0..n_k).map(|r| family.log_kernel(y[r], eta[r], tau)).sum();
    if !loglik.is_finite() || alpha.iter().any(|a| !a.is_finite()) {
        return Err(());
    }
    let mut proposal_eta = vec![F::zero(); n_k];
    let mut draws = vec![F::zero(); m * q];
    let mut accepted = vec![0u64; q];
    let mut proposed = vec![0u64; q];
    let mut batch_accepts = vec![0usize; q];

    for sweep in 0..burnin + m {
        for h in 0..q {
            let normal: f64 = rng.sample(StandardNormal);
            if !active[h] {
                alpha[h] = F::lit(normal);
                continue;
            }
            let cur = alpha[h];
            let (prop, log_q_ratio) = match kind {
                SamplerKind::AdaptiveRandomWalk => (cur + log_scales[h].exp() * F::lit(normal), F::zero()),
                SamplerKind::Independence => {
                    let p = F::lit(normal);
                    (p, half * (p * p - cur * cur))
                }
            };
            let delta = prop - cur;
            let mut ll_prop = F::zero();
            for r in 0..n_k {
                let e = eta[r] + coef[[r, h]] * delta;
                proposal_eta[r] = e;
                ll_prop = ll_prop + family.log_kernel(y[r], e, tau);
            }
            let lp_prop = ll_prop - half * prop * prop;
            let lp_cur = loglik - half * cur * cur;
            proposed[h] += 1;
            if mh_accept(lp_prop.to_f64_lossy(), lp_cur.to_f64_lossy(), log_q_ratio.to_f64_lossy(), rng) {
                alpha[h] = prop;
                loglik = ll_prop;
                std::mem::swap(&mut eta, &mut proposal_eta);
                accepted[h] += 1;
                batch_accepts[h] += 1;
            }
        }
        if sweep < burnin && kind == SamplerKind::AdaptiveRandomWalk && (sweep + 1) % ADAPT_BATCH == 0 {
            let batch_rates: Vec<f64> = (0..q)
                .map(|h| if active[h] { batch_accepts[h] as f64 / ADAPT_BATCH as f64 } else { TARGET_ACCEPT })
                .collect();
            adapt_log_scales(&mut log_scales, &mut batches, &batch_rates);
            batch_accepts.iter_mut().for_each(|c| *c = 0);
        }
        if sweep >= burnin {
            draws[(sweep - burnin) * q..(sweep - burnin + 1) * q].copy_from_slice(&alpha);
        }
    }
    Ok(GroupOutcome { draws, state: alpha, log_scales, accepted, proposed, batches })
}

/// One adaptation batch: each log-scale moves by `min(0.1, n^{-1/2})` toward
/// the target acceptance rate, where `n` counts batches so far. A rate equal to
/// the target leaves the scale unchanged.
pub fn adapt_log_scales<F: Real>(log_scales: &mut [F], batches: &mut u64, batch_accept_rates: &[f64]) {
    *batches += 1;
    let step = MAX_ADAPT_STEP.min((*batches as f64).powf(-0.5));
    for (ls, &rate) in log_scales.iter_mut().zip(batch_accept_rates) {
        let cur = ls.to_f64_lossy();
        let next = if rate > TARGET_ACCEPT {
            cur + step
        } else if rate < TARGET_ACCEPT {
            cur - step
        } else {
            cur
        };
        *ls = F::lit(next.clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND));
    }
}

/// SplitMix64 finalizer used to derive per-E-step seeds.
pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CovKind;
    use ndarray::array;

    #[test]
    fn schedule_examples() {
        assert_eq!(sample_size_schedule(1, 0, 250, 2500), 250);
        assert_eq!(sample_size_schedule(2, 250, 250, 2500), 275);
        assert_eq!(sample_size_schedule(15, 100, 250, 2500), 110);
        assert_eq!(sample_size_schedule(16, 100, 250, 2500), 120);
        assert_eq!(sample_size_schedule(16, 2500, 250, 2500), 2500);
        assert_eq!(default_nmc_start(5), 250);
        assert_eq!(default_nmc_start(11), 100);
    }

    #[test]
    fn accept_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(mh_accept(1.0, 0.0, 0.0, &mut rng));
            assert!(mh_accept(0.3, 0.3, 0.0, &mut rng));
            assert!(!mh_accept(f64::NEG_INFINITY, 0.0, 0.0, &mut rng));
        }
        let hits = (0..20_000).filter(|_| mh_accept(-(2f64.ln()), 0.0, 0.0, &mut rng)).count();
        assert!((hits as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn adaptation_direction() {
        let mut chain = ChainState::<f64>::standard_normal(1, 3, 0);
        chain.adapt_scales(0, &[1.0, 0.0, TARGET_ACCEPT]);
        assert!(chain.log_scales[[0, 0]] > 0.0);
        assert!(chain.log_scales[[0, 1]] < 0.0);
        assert_eq!(chain.log_scales[[0, 2]], 0.0);
    }

    fn toy() -> Dataset<f64> {
        let x = array![[0.5], [-1.0], [1.5], [0.0], [2.0], [-0.5]];
        Dataset::new(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0], x, vec![0], &["a", "a", "a", "b", "b", "b"]).unwrap()
    }

    #[test]
    fn zero_draws_advance_chain() {
        let ds = toy();
        let s = CovStructure::new(CovKind::Unstructured, 2);
        let th = Theta { beta: vec![0.0, 0.3], gamma: vec![1.0, 0.2, 0.5], tau: 1.0 };
        let mut chain = ChainState::standard_normal(2, 2, 3);
        let before = chain.current.clone();
        let cfg = SamplerConfig::for_dimension(2);
        let d = estep_sample(&ds, &th, &s, Family::Binomial, &mut chain, 0, 20, &cfg).unwrap();
        assert_eq!(d.m(), 0);
        assert_eq!(d.data().ncols(), 4);
        assert_ne!(chain.current, before);
        assert_eq!(chain.epoch, 1);
    }

    #[test]
    fn deterministic_and_parallel_invariant() {
        let ds = toy();
        let s = CovStructure::new(CovKind::Unstructured, 2);
        let th = Theta { beta: vec![0.0, 0.3], gamma: vec![1.0, 0.2, 0.5], tau: 1.0 };
        let mut cfg = SamplerConfig::for_dimension(2);
        let run = |cfg: &SamplerConfig| {
            let mut chain = ChainState::standard_normal(2, 2, 3);
            estep_sample(&ds, &th, &s, Family::Binomial, &mut chain, 200, 100, cfg).unwrap()
        };
        let a = run(&cfg);
        cfg.parallel = true;
        let b = run(&cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn independence_sampler_targets_conjugate_posterior() {
        // y_i = alpha + e_i, e ~ N(0, 1), alpha ~ N(0, 1): posterior N(sum y / (n + 1), 1 / (n + 1))
        let y = vec![0.8, 1.4, 0.3, 1.1];
        let ds = Dataset::new(y.clone(), ndarray::Array2::zeros((4, 0)), vec![], &["g"; 4]).unwrap();
        let s = CovStructure::new(CovKind::Unstructured, 1);
        let th = Theta { beta: vec![0.0], gamma: vec![1.0], tau: 1.0 };
        let mut cfg = SamplerConfig::for_dimension(1);
        cfg.kind = SamplerKind::Independence;
        let mut chain = ChainState::standard_normal(1, 1, 9);
        let d = estep_sample(&ds, &th, &s, Family::Gaussian, &mut chain, 20_000, 200, &cfg).unwrap();
        let col = d.data().column(0);
        let mean = col.sum() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!((mean - 3.6 / 5.0).abs() < 0.03, "mean {mean}");
        assert!((var - 0.2).abs() < 0.02, "var {var}");
    }
}
