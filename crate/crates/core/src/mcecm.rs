//! The Monte Carlo ECM loop: initialization, alternating E- and M-steps,
//! convergence detection, the final posterior sample and random-effect
//! pre-screening.

use serde::{Deserialize, Serialize};

use crate::error::{PglmmError, Result};
use crate::model::{CovKind, CovStructure, Dataset, Family, Theta};
use crate::mstep::{m_step, MStepConfig, PenaltyConfig};
use crate::real::Real;
use crate::sampler::{estep_sample, sample_size_schedule, ChainState, PosteriorDraws, SamplerConfig};
use crate::selection::lambda_max;

/// Random effects whose estimated variance falls below this are dropped by
/// pre-screening.
pub const PRESCREEN_VARIANCE_FLOOR: f64 = 1e-2;
/// Lower bound on the recommended starting variance.
pub const VAR_START_FLOOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarStart {
    Recommend,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarChoice {
    Unstructured,
    Diagonal,
    Auto,
}

impl CovarChoice {
    /// `Auto` becomes diagonal from ten random effects on.
    pub fn resolve(self, q: usize) -> CovKind {
        match self {
            CovarChoice::Unstructured => CovKind::Unstructured,
            CovarChoice::Diagonal => CovKind::Diagonal,
            CovarChoice::Auto if q >= 10 => CovKind::Diagonal,
            CovarChoice::Auto => CovKind::Unstructured,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unstructured" => Ok(CovarChoice::Unstructured),
            "diagonal" | "independent" => Ok(CovarChoice::Diagonal),
            "auto" => Ok(CovarChoice::Auto),
            _ => Err(PglmmError::UnknownName { kind: "covariance structure", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Tolerance on the scaled squared coefficient change.
    pub conv_em: f64,
    /// Lag between the compared iterations.
    pub t_lag: usize,
    /// Consecutive passes required.
    pub mcc: usize,
    /// EM iteration cap; `None` uses the family default.
    pub maxit_em: Option<usize>,
    pub var_start: VarStart,
    pub covar: CovarChoice,
    pub mstep: MStepConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            conv_em: 0.0015,
            t_lag: 2,
            mcc: 2,
            maxit_em: None,
            var_start: VarStart::Recommend,
            covar: CovarChoice::Auto,
            mstep: MStepConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.conv_em > 0.0) {
            return Err(PglmmError::Config(format!("conv_em must be positive, got {}", self.conv_em)));
        }
        if self.t_lag < 1 {
            return Err(PglmmError::Config("t_lag must be at least 1".into()));
        }
        if self.mcc < 2 {
            return Err(PglmmError::Config(format!("mcc must be at least 2, got {}", self.mcc)));
        }
        if let VarStart::Fixed(v) = self.var_start {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PglmmError::Config(format!("var_start must be positive, got {v}")));
            }
        }
        if !(self.mstep.delta > 0.0) {
            return Err(PglmmError::Config("M-step delta must be positive".into()));
        }
        Ok(())
    }

    pub fn maxit_for(&self, family: Family) -> usize {
        self.maxit_em.unwrap_or_else(|| family.default_maxit_em())
    }

    /// Settings for the single screening fit: ten times the tolerance and
    /// half the iterations.
    pub fn lax(&self, family: Family) -> FitConfig {
        FitConfig { conv_em: self.conv_em * 10.0, maxit_em: Some((self.maxit_for(family) / 2).max(1)), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Scaled squared distance to the lagged iterate, once available.
    pub distance: Option<f64>,
    pub counter: usize,
    pub mc_size: usize,
    pub mstep_iterations: usize,
    pub mstep_hit_cap: bool,
}

/// Outcome of one penalized fit.
#[derive(Clone, Debug)]
pub struct FitResult<F> {
    pub theta: Theta<F>,
    pub structure: CovStructure,
    pub family: Family,
    pub penalty: PenaltyConfig,
    pub converged: bool,
    pub reason: StopReason,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Chain state after the final posterior sample; warm-starts the next fit.
    pub chain: ChainState<F>,
    /// Final posterior sample drawn at `theta`.
    pub draws: PosteriorDraws<F>,
    /// Random effects the fit was allowed to keep.
    pub allowed: Vec<bool>,
}

impl<F: Real> FitResult<F> {
    /// Random effects with a nonzero variance.
    pub fn active_random_effects(&self) -> Vec<bool> {
        self.theta.active_random_effects(&self.structure)
    }

    /// Random-effect variances, the diagonal of `Gamma Gamma'`.
    pub fn random_effect_variances(&self) -> Vec<F> {
        (0..self.structure.q).map(|t| self.structure.row_variance(&self.theta.gamma, t)).collect()
    }
}

/// Scaled squared change `||c_s - c_lag||^2 / d` with `d` the number of
/// nonzero coefficients of the lagged iterate; 0 when `d = 0`.
pub fn em_distance<F: Real>(theta_s: &Theta<F>, theta_lag: &Theta<F>) -> f64 {
    let now = theta_s.coefficients();
    let lag = theta_lag.coefficients();
    let d = lag.iter().filter(|v| **v != F::zero()).count();
    if d == 0 {
        return 0.0;
    }
    let sq: f64 = now.iter().zip(&lag).map(|(a, b)| (*a - *b).to_f64_lossy().powi(2)).sum();
    sq / d as f64
}

/// Updates the consecutive-pass counter; returns `(converged, counter)`.
pub fn em_converged<F: Real>(
    theta_s: &Theta<F>,
    theta_lag: &Theta<F>,
    eps: f64,
    counter: usize,
    mcc: usize,
) -> (bool, usize) {
    let counter = if em_distance(theta_s, theta_lag) < eps { counter + 1 } else { 0 };
    (counter >= mcc, counter)
}

fn check_fit_inputs<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    structure: &CovStructure,
    allowed: &[bool],
) -> Result<()> {
    ds.validate_for(family)?;
    if ds.n_groups() < 2 {
        return Err(PglmmError::InsufficientGroups(ds.n_groups()));
    }
    if structure.q != ds.q() || allowed.len() != ds.q() {
        return Err(PglmmError::Dimension(format!(
            "structure q = {}, mask length {}, data q = {}",
            structure.q,
            allowed.len(),
            ds.q()
        )));
    }
    Ok(())
}

/// Penalized GLM without random effects, solved to tight tolerance.
pub fn fit_naive_glm<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    penalty: &PenaltyConfig,
    beta_start: Option<&[F]>,
) -> Result<Theta<F>> {
    let structure = CovStructure::new(CovKind::Diagonal, ds.q());
    let mut theta = Theta::zeros(ds.p(), &structure);
    if let Some(b) = beta_start {
        theta.beta.copy_from_slice(b);
    }
    let draws = PosteriorDraws::zeros(1, ds.levels().to_vec(), ds.random_effect_names());
    let cfg = MStepConfig { delta: 1e-9, maxit_cd: 10_000 };
    let none = vec![false; ds.q()];
    let (fitted, _) = m_step(&theta, ds, &draws, family, penalty, &cfg, &structure, &none)?;
    Ok(fitted)
}

/// Starting values: `beta` from the naive penalized GLM, `Gamma` diagonal
/// with entries `sqrt(var_start)` on the allowed effects, and the naive
/// residual variance as the Gaussian dispersion.
pub fn initialize_theta<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    var_start: f64,
    penalty: &PenaltyConfig,
    structure: &CovStructure,
    allowed: &[bool],
) -> Result<Theta<F>> {
    let naive = fit_naive_glm(ds, family, penalty, None)?;
    let mut theta = Theta::zeros(ds.p(), structure);
    theta.beta = naive.beta;
    theta.tau = if family.has_dispersion() { naive.tau } else { F::one() };
    let sd = F::lit(var_start.sqrt());
    for t in 0..structure.q {
        if allowed[t] {
            theta.gamma[structure.diagonal_index(t)] = sd;
        }
    }
    Ok(theta)
}

/// Twice the random-intercept variance of a short unpenalized
/// random-intercept fit, floored at 0.1.
pub fn var_start_recommend<F: Real>(ds: &Dataset<F>, family: Family, sampler: &SamplerConfig) -> Result<f64> {
    if ds.n_groups() < 2 {
        return Err(PglmmError::InsufficientGroups(ds.n_groups()));
    }
    let small = ds.intercept_only();
    let structure = CovStructure::new(CovKind::Unstructured, 1);
    let penalty = PenaltyConfig::unpenalized();
    let cfg = FitConfig { var_start: VarStart::Fixed(1.0), maxit_em: Some(25), ..FitConfig::default() };
    let scfg =
        SamplerConfig { nmc_start: 100, nmc_max: 500, nmc_report: 500, parallel: sampler.parallel, ..sampler.clone() };
    let theta0 = initialize_theta(&small, family, 1.0, &penalty, &structure, &[true])?;
    let fit = fit_single(&small, family, &penalty, &cfg, &scfg, &structure, theta0, None, &[true])?;
    let variance = fit.random_effect_variances()[0].to_f64_lossy();
    Ok((2.0 * variance).max(VAR_START_FLOOR))
}

/// Runs the MCECM loop from `theta_init` and draws the final posterior sample.
///
/// Without `chain_init` the chains start from standard normal draws. Random
/// effects with `allowed[t] == false` keep a zero row of `Gamma` throughout.
#[allow(clippy::too_many_arguments)]
pub fn fit_single<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    penalty: &PenaltyConfig,
    cfg: &FitConfig,
    sampler: &SamplerConfig,
    structure: &CovStructure,
    theta_init: Theta<F>,
    chain_init: Option<ChainState<F>>,
    allowed: &[bool],
) -> Result<FitResult<F>> {
    cfg.validate()?;
    sampler.validate()?;
    penalty.validate()?;
    check_fit_inputs(ds, family, structure, allowed)?;
    structure.check_gamma(&theta_init.gamma)?;

    let mut theta = theta_init;
    for t in 0..structure.q {
        if !allowed[t] {
            theta.gamma[structure.group_range(t)].iter_mut().for_each(|g| *g = F::zero());
        }
    }
    let flipped = theta.normalize_signs(structure);
    let mut chain = chain_init.unwrap_or_else(|| ChainState::standard_normal(ds.n_groups(), structure.q, sampler.seed));
    for h in flipped {
        chain.flip_coordinate(h);
    }

    let maxit = cfg.maxit_for(family);
    let mut history = vec![theta.clone()];
    let mut trace = Vec::new();
    let mut counter = 0;
    let mut m_prev = 0;
    let mut converged = false;
    for s in 1..=maxit {
        let m = sample_size_schedule(s, m_prev, sampler.nmc_start, sampler.nmc_max);
        m_prev = m;
        let draws = estep_sample(ds, &theta, structure, family, &mut chain, m, sampler.nmc_burnin, sampler)?;
        let (next, outcome) = m_step(&theta, ds, &draws, family, penalty, &cfg.mstep, structure, allowed)?;
        for &h in &outcome.flipped {
            chain.flip_coordinate(h);
        }
        theta = next;
        history.push(theta.clone());
        let mut distance = None;
        if s >= cfg.t_lag {
            let lag = &history[s - cfg.t_lag];
            distance = Some(em_distance(&theta, lag));
            let (done, c) = em_converged(&theta, lag, cfg.conv_em, counter, cfg.mcc);
            counter = c;
            converged = done;
        }
        trace.push(IterationRecord {
            iteration: s,
            distance,
            counter,
            mc_size: m,
            mstep_iterations: outcome.iterations,
            mstep_hit_cap: outcome.hit_cap,
        });
        log::trace!("EM iteration {s}: M = {m}, distance {distance:?}, counter {counter}");
        if converged {
            break;
        }
    }
    if !converged {
        log::debug!("MCECM stopped at the {maxit}-iteration cap without converging");
    }
    let draws =
        estep_sample(ds, &theta, structure, family, &mut chain, sampler.nmc_report, sampler.nmc_burnin, sampler)?;
    Ok(FitResult {
        theta,
        structure: *structure,
        family,
        penalty: penalty.clone(),
        converged,
        reason: if converged { StopReason::Converged } else { StopReason::IterationCap },
        iterations: trace.len(),
        trace,
        chain,
        draws,
        allowed: allowed.to_vec(),
    })
}

/// One lightly penalized screening fit that keeps random effects whose
/// variance reaches 0.01. Returns the surviving mask (intercept always kept);
/// with fewer than five random effects nothing is fitted.
#[allow(clippy::too_many_arguments)]
pub fn prescreen<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    cfg: &FitConfig,
    sampler: &SamplerConfig,
    penalty_base: &PenaltyConfig,
    lambda_min_presc: f64,
    lambda0_min: f64,
    var_start: f64,
) -> Result<Vec<bool>> {
    let q = ds.q();
    if q < 5 {
        return Ok(vec![true; q]);
    }
    let structure = CovStructure::new(cfg.covar.resolve(q), q);
    let penalty =
        penalty_base.with_lambdas(lambda0_min, lambda_min_presc * lambda_max(ds, family, penalty_base.alpha_mix));
    let lax = cfg.lax(family);
    let allowed = vec![true; q];
    let theta0 = initialize_theta(ds, family, var_start, &penalty, &structure, &allowed)?;
    let fit = fit_single(ds, family, &penalty, &lax, sampler, &structure, theta0, None, &allowed)?;
    let variances = fit.random_effect_variances();
    Ok(variances.iter().enumerate().map(|(t, v)| t == 0 || v.to_f64_lossy() >= PRESCREEN_VARIANCE_FLOOR).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th(beta: Vec<f64>, gamma: Vec<f64>) -> Theta<f64> {
        Theta { beta, gamma, tau: 1.0 }
    }

    #[test]
    fn counter_semantics() {
        let a = th(vec![1.0, 0.5], vec![1.0]);
        let (done, c) = em_converged(&a, &a, 0.0015, 0, 2);
        assert!(!done && c == 1);
        let (done, c) = em_converged(&a, &a, 0.0015, c, 2);
        assert!(done && c == 2);
        // d = 3 nonzero coefficients; a change just above sqrt(eps * d) resets
        let step = (0.0015f64 * 3.0).sqrt() + 1e-9;
        let b = th(vec![1.0 + step, 0.5], vec![1.0]);
        let (done, c) = em_converged(&b, &a, 0.0015, 1, 2);
        assert!(!done && c == 0);
    }

    #[test]
    fn null_lag_has_zero_distance() {
        let z = th(vec![0.0, 0.0], vec![0.0]);
        let b = th(vec![3.0, 0.0], vec![0.0]);
        assert_eq!(em_distance(&b, &z), 0.0);
    }

    #[test]
    fn auto_covariance_rule() {
        assert_eq!(CovarChoice::Auto.resolve(9), CovKind::Unstructured);
        assert_eq!(CovarChoice::Auto.resolve(10), CovKind::Diagonal);
        assert_eq!(CovarChoice::Unstructured.resolve(20), CovKind::Unstructured);
    }

    #[test]
    fn lax_settings() {
        let c = FitConfig::default().lax(Family::Binomial);
        assert_eq!(c.maxit_em, Some(25));
        assert!((c.conv_em - 0.015).abs() < 1e-15);
    }
}
