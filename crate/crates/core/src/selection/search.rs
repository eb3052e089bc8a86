//! Warm-started searches over the `(lambda0, lambda1)` grid.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{bic_family, bic_icq, came_marginal_loglik, lambda_max, make_sequence, Criterion, CriterionSet};
use crate::error::{PglmmError, Result};
use crate::mcecm::{fit_single, initialize_theta, prescreen, var_start_recommend, FitConfig, FitResult, VarStart};
use crate::model::{CovStructure, Dataset, Family};
use crate::mstep::PenaltyConfig;
use crate::real::Real;
use crate::sampler::{PosteriorDraws, SamplerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Abbrev,
    FullGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub kind: SearchKind,
    pub criterion: Criterion,
    pub nlambda: usize,
    pub lambda_min_ratio: f64,
    /// Explicit ascending sequences; generated from `lambda_max` when absent.
    pub lambda0_seq: Option<Vec<f64>>,
    pub lambda1_seq: Option<Vec<f64>>,
    pub prescreen: bool,
    pub lambda_min_presc: f64,
    /// Estimate the marginal log-likelihood of every fit (needed by BIC,
    /// BICh and BICNgrp).
    pub loglik: bool,
    pub m_star: usize,
    pub thin: usize,
    /// Location of the minimal-penalty posterior; reused when it exists.
    pub bicq_posterior: Option<PathBuf>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            kind: SearchKind::Abbrev,
            criterion: Criterion::BicQ,
            nlambda: 10,
            lambda_min_ratio: 0.01,
            lambda0_seq: None,
            lambda1_seq: None,
            prescreen: true,
            lambda_min_presc: 0.01,
            loglik: true,
            m_star: super::DEFAULT_M_STAR,
            thin: super::DEFAULT_THIN,
            bicq_posterior: None,
        }
    }
}

/// Where a fit sits in the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    One,
    Two,
    /// The stage-1 winner, reused as the first stage-2 model.
    Both,
    Grid {
        lambda0_index: usize,
        lambda1_index: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub index: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    pub stage: Stage,
    /// Fit whose coefficients and chains initialized this one.
    pub init_from: Option<usize>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub tau: f64,
    pub converged: bool,
    pub iterations: usize,
    pub active_ranef: Vec<bool>,
    pub criteria: CriterionSet,
}

/// Posterior draws of the lightly penalized reference model used by BIC-ICQ.
#[derive(Clone, Debug)]
pub struct MinimalPenaltyPosterior<F> {
    pub draws: PosteriorDraws<F>,
    /// Penalty pair of the reference fit; unknown when loaded from disk.
    pub lambdas: Option<(f64, f64)>,
    pub seed: u64,
    pub path: Option<PathBuf>,
}

pub struct SelectionResult<F> {
    pub fits: Vec<FitSummary>,
    pub criterion: Criterion,
    /// Index into `fits` of the selected model.
    pub best: usize,
    pub lambda_max: f64,
    pub lambda0_seq: Vec<f64>,
    pub lambda1_seq: Vec<f64>,
    /// Random effects that survived pre-screening.
    pub prescreen_mask: Vec<bool>,
    pub var_start: f64,
    /// True when no fit met the EM convergence rule.
    pub all_nonconverged: bool,
    pub best_fit: FitResult<F>,
    pub minpen: Option<MinimalPenaltyPosterior<F>>,
    /// True when the minimal-penalty posterior was read from disk.
    pub reused_posterior: bool,
}

/// Fits the minimal-penalty model: unpenalized with fewer than five random
/// effects, otherwise `lambda0 = lambda0_min` and
/// `lambda1 = lambda_min_presc * lambda_max`. Persists the draws when `persist`
/// is given.
#[allow(clippy::too_many_arguments)]
pub fn fit_minimal_penalty_model<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    penalty_base: &PenaltyConfig,
    fit_cfg: &FitConfig,
    sampler: &SamplerConfig,
    lambda0_min: f64,
    lambda_min_presc: f64,
    allowed: &[bool],
    var_start: f64,
    persist: Option<&Path>,
) -> Result<MinimalPenaltyPosterior<F>> {
    let q = ds.q();
    let structure = CovStructure::new(fit_cfg.covar.resolve(q), q);
    let (l0, l1) = if q < 5 {
        (0.0, 0.0)
    } else {
        (lambda0_min, lambda_min_presc * lambda_max(ds, family, penalty_base.alpha_mix))
    };
    let penalty = penalty_base.with_lambdas(l0, l1);
    let theta0 = initialize_theta(ds, family, var_start, &penalty, &structure, allowed)?;
    let fit = fit_single(ds, family, &penalty, fit_cfg, sampler, &structure, theta0, None, allowed)?;
    if let Some(path) = persist {
        fit.draws.save(path, sampler.seed)?;
    }
    Ok(MinimalPenaltyPosterior {
        draws: fit.draws,
        lambdas: Some((l0, l1)),
        seed: sampler.seed,
        path: persist.map(Path::to_path_buf),
    })
}

pub fn load_minimal_penalty_posterior<F: Real>(path: &Path) -> Result<MinimalPenaltyPosterior<F>> {
    let (draws, meta) = PosteriorDraws::load(path)?;
    Ok(MinimalPenaltyPosterior { draws, lambdas: None, seed: meta.seed, path: Some(path.to_path_buf()) })
}

/// Shared state of one search.
struct Searcher<'a, F> {
    ds: &'a Dataset<F>,
    family: Family,
    penalty: &'a PenaltyConfig,
    cfg: &'a SearchConfig,
    fit_cfg: &'a FitConfig,
    sampler: &'a SamplerConfig,
    structure: CovStructure,
    var_start: f64,
    prescreen_mask: Vec<bool>,
    lambda_max: f64,
    lambda0_seq: Vec<f64>,
    lambda1_seq: Vec<f64>,
    minpen: Option<MinimalPenaltyPosterior<F>>,
    reused_posterior: bool,
    fits: Vec<FitSummary>,
}

impl<'a, F: Real> Searcher<'a, F> {
    fn prepare(
        ds: &'a Dataset<F>,
        family: Family,
        penalty: &'a PenaltyConfig,
        cfg: &'a SearchConfig,
        fit_cfg: &'a FitConfig,
        sampler: &'a SamplerConfig,
    ) -> Result<Self> {
        penalty.validate()?;
        fit_cfg.validate()?;
        sampler.validate()?;
        ds.validate_for(family)?;
        if ds.n_groups() < 2 {
            return Err(PglmmError::InsufficientGroups(ds.n_groups()));
        }
        if cfg.criterion != Criterion::BicQ && !cfg.loglik {
            return Err(PglmmError::Config(format!(
                "criterion {} needs the marginal log-likelihood; enable loglik",
                cfg.criterion.name()
            )));
        }
        let q = ds.q();
        let structure = CovStructure::new(fit_cfg.covar.resolve(q), q);
        let lmax = lambda_max(ds, family, penalty.alpha_mix);
        let lambda0_seq = match &cfg.lambda0_seq {
            Some(s) => checked_sequence(s)?,
            None => make_sequence(lmax, cfg.lambda_min_ratio, cfg.nlambda)?,
        };
        let lambda1_seq = match &cfg.lambda1_seq {
            Some(s) => checked_sequence(s)?,
            None => make_sequence(lmax, cfg.lambda_min_ratio, cfg.nlambda)?,
        };
        let var_start = match fit_cfg.var_start {
            VarStart::Fixed(v) => v,
            VarStart::Recommend => var_start_recommend(ds, family, sampler)?,
        };
        log::info!("lambda_max = {lmax:.6}, starting variance {var_start:.4}");
        let prescreen_mask = if cfg.prescreen {
            prescreen(ds, family, fit_cfg, sampler, penalty, cfg.lambda_min_presc, lambda0_seq[0], var_start)?
        } else {
            vec![true; q]
        };
        if cfg.prescreen {
            log::info!("pre-screening kept {} of {} random effects", prescreen_mask.iter().filter(|b| **b).count(), q);
        }

        let mut reused_posterior = false;
        let minpen = if cfg.criterion == Criterion::BicQ {
            match &cfg.bicq_posterior {
                Some(path) if path.exists() => {
                    log::info!("reusing BICq posterior from {}", path.display());
                    reused_posterior = true;
                    let mp = load_minimal_penalty_posterior(path)?;
                    if mp.draws.q() != q || mp.draws.k() != ds.n_groups() {
                        return Err(PglmmError::format(path, "posterior dimensions do not match the data"));
                    }
                    Some(mp)
                }
                other => Some(fit_minimal_penalty_model(
                    ds,
                    family,
                    penalty,
                    fit_cfg,
                    sampler,
                    lambda0_seq[0],
                    cfg.lambda_min_presc,
                    &prescreen_mask,
                    var_start,
                    other.as_deref(),
                )?),
            }
        } else {
            None
        };
        Ok(Searcher {
            ds,
            family,
            penalty,
            cfg,
            fit_cfg,
            sampler,
            structure,
            var_start,
            prescreen_mask,
            lambda_max: lmax,
            lambda0_seq,
            lambda1_seq,
            minpen,
            reused_posterior,
            fits: Vec::new(),
        })
    }

    /// Fits `(lambda0, lambda1)` warm-started from `from` (or from the naive
    /// initialization) and records its summary.
    fn fit(
        &mut self,
        lambda0: f64,
        lambda1: f64,
        stage: Stage,
        from: Option<(usize, &FitResult<F>)>,
        allowed: &[bool],
    ) -> Result<FitResult<F>> {
        let penalty = self.penalty.with_lambdas(lambda0, lambda1);
        let (theta0, chain) = match from {
            Some((_, prev)) => (prev.theta.clone(), Some(prev.chain.clone())),
            None => (initialize_theta(self.ds, self.family, self.var_start, &penalty, &self.structure, allowed)?, None),
        };
        let fit = fit_single(
            self.ds,
            self.family,
            &penalty,
            self.fit_cfg,
            self.sampler,
            &self.structure,
            theta0,
            chain,
            allowed,
        )?;
        let criteria = self.evaluate(&fit)?;
        let index = self.fits.len();
        log::info!(
            "fit {index}: lambda0 = {lambda0:.5}, lambda1 = {lambda1:.5}, {} EM iterations, {}converged, {} = {:?}",
            fit.iterations,
            if fit.converged { "" } else { "not " },
            self.cfg.criterion.name(),
            criteria.get(self.cfg.criterion)
        );
        self.fits.push(FitSummary {
            index,
            lambda0,
            lambda1,
            stage,
            init_from: from.map(|(i, _)| i),
            beta: fit.theta.beta.iter().map(|v| v.to_f64_lossy()).collect(),
            gamma: fit.theta.gamma.iter().map(|v| v.to_f64_lossy()).collect(),
            tau: fit.theta.tau.to_f64_lossy(),
            converged: fit.converged,
            iterations: fit.iterations,
            active_ranef: fit.active_random_effects(),
            criteria,
        });
        Ok(fit)
    }

    fn evaluate(&self, fit: &FitResult<F>) -> Result<CriterionSet> {
        let loglik = self.cfg.loglik.then_some((self.cfg.m_star, self.cfg.thin));
        evaluate_criteria(self.ds, fit, self.minpen.as_ref().map(|m| &m.draws), loglik, self.sampler.seed)
    }

    /// Index among `candidates` minimizing the criterion; ties go to the
    /// larger `lambda0`, then the larger `lambda1`.
    fn argmin(&self, candidates: &[usize]) -> usize {
        let key =
            |i: usize| self.fits[i].criteria.get(self.cfg.criterion).filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
        *candidates
            .iter()
            .min_by(|&&a, &&b| {
                key(a)
                    .partial_cmp(&key(b))
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| self.fits[b].lambda0.total_cmp(&self.fits[a].lambda0))
                    .then_with(|| self.fits[b].lambda1.total_cmp(&self.fits[a].lambda1))
            })
            .expect("at least one candidate")
    }

    fn finish(self, best: usize, best_fit: FitResult<F>) -> SelectionResult<F> {
        let all_nonconverged = self.fits.iter().all(|f| !f.converged);
        if all_nonconverged {
            log::warn!("no fit in the search met the convergence rule");
        }
        SelectionResult {
            criterion: self.cfg.criterion,
            best,
            lambda_max: self.lambda_max,
            lambda0_seq: self.lambda0_seq,
            lambda1_seq: self.lambda1_seq,
            prescreen_mask: self.prescreen_mask,
            var_start: self.var_start,
            all_nonconverged,
            best_fit,
            minpen: self.minpen,
            reused_posterior: self.reused_posterior,
            fits: self.fits,
        }
    }
}

/// Criteria of a fit. BICq needs the minimal-penalty draws; the
/// likelihood-based criteria need `loglik = Some((m_star, thin))`.
pub fn evaluate_criteria<F: Real>(
    ds: &Dataset<F>,
    fit: &FitResult<F>,
    minpen_draws: Option<&PosteriorDraws<F>>,
    loglik: Option<(usize, usize)>,
    seed: u64,
) -> Result<CriterionSet> {
    let d_beta = fit.theta.nonzero_beta();
    let d_gamma = fit.theta.nonzero_gamma();
    let bicq = match minpen_draws {
        Some(d) => Some(bic_icq(&fit.theta, &fit.structure, d, ds, fit.family)?),
        None => None,
    };
    let mut set = CriterionSet {
        bicq,
        bich: None,
        bic: None,
        bic_ngrp: None,
        d_lambda: d_beta + d_gamma,
        d_beta,
        d_gamma,
        loglik: None,
        loglik_total: None,
    };
    if let Some((m_star, thin)) = loglik {
        let came = came_marginal_loglik(ds, &fit.theta, &fit.structure, fit.family, &fit.draws, m_star, thin, seed)?;
        let (bic, bich, ngrp) = bic_family(came.weighted, d_beta, d_gamma, ds.n(), ds.n_groups());
        set.bic = Some(bic);
        set.bich = Some(bich);
        set.bic_ngrp = Some(ngrp);
        set.loglik = Some(came.weighted);
        set.loglik_total = Some(came.total);
    }
    Ok(set)
}

fn checked_sequence(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() || s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || s.windows(2).any(|w| w[0] > w[1]) {
        return Err(PglmmError::Config("penalty sequences must be nonempty, nonnegative and ascending".into()));
    }
    Ok(s.to_vec())
}

/// Two-stage search. Stage 1 fixes `lambda0` at its minimum and sweeps
/// `lambda1` upward, dropping random effects for good once they are zeroed.
/// Stage 2 fixes `lambda1` at the stage-1 optimum and sweeps `lambda0` upward
/// over the stage-1 winner's random effects; the best stage-2 model is
/// returned.
pub fn two_stage_search<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    penalty: &PenaltyConfig,
    cfg: &SearchConfig,
    fit_cfg: &FitConfig,
    sampler: &SamplerConfig,
) -> Result<SelectionResult<F>> {
    let mut s = Searcher::prepare(ds, family, penalty, cfg, fit_cfg, sampler)?;
    let l0_min = s.lambda0_seq[0];
    let lambda1_seq = s.lambda1_seq.clone();
    let mut stage1: Vec<FitResult<F>> = Vec::with_capacity(lambda1_seq.len());
    let mut allowed = s.prescreen_mask.clone();
    for (h, &l1) in lambda1_seq.iter().enumerate() {
        let from = if h == 0 { None } else { Some((s.fits.len() - 1, &stage1[h - 1])) };
        if let Some((_, prev)) = from {
            let active = prev.active_random_effects();
            allowed.iter_mut().zip(active).for_each(|(a, b)| *a = *a && b);
        }
        let fit = s.fit(l0_min, l1, Stage::One, from, &allowed.clone())?;
        stage1.push(fit);
    }
    let stage1_idx: Vec<usize> = (0..stage1.len()).collect();
    let b1 = s.argmin(&stage1_idx);
    let lambda1_opt = s.fits[b1].lambda1;
    s.fits[b1].stage = Stage::Both;
    let winner = stage1.swap_remove(b1);
    drop(stage1);
    let allowed2 = winner.active_random_effects();

    let mut candidates = vec![b1];
    let mut best_fit: Option<FitResult<F>> = None;
    let mut prev: (usize, FitResult<F>) = (b1, winner);
    let lambda0_seq = s.lambda0_seq.clone();
    for &l0 in lambda0_seq.iter().skip(1) {
        let fit = s.fit(l0, lambda1_opt, Stage::Two, Some((prev.0, &prev.1)), &allowed2)?;
        let idx = s.fits.len() - 1;
        candidates.push(idx);
        let old = std::mem::replace(&mut prev, (idx, fit));
        if s.argmin(&candidates) == old.0 {
            best_fit = Some(old.1);
        }
    }
    let best = s.argmin(&candidates);
    let best_fit = if best == prev.0 { prev.1 } else { best_fit.expect("best fit retained") };
    Ok(s.finish(best, best_fit))
}

/// Full grid: for each `lambda1` (ascending) sweep `lambda0` (ascending).
/// `(lambda0_min, lambda1_{h+1})` starts from `(lambda0_min, lambda1_h)` and
/// `(lambda0_{j+1}, lambda1_h)` from `(lambda0_j, lambda1_h)`.
pub fn full_grid_search<F: Real>(
    ds: &Dataset<F>,
    family: Family,
    penalty: &PenaltyConfig,
    cfg: &SearchConfig,
    fit_cfg: &FitConfig,
    sampler: &SamplerConfig,
) -> Result<SelectionResult<F>> {
    let mut s = Searcher::prepare(ds, family, penalty, cfg, fit_cfg, sampler)?;
    let allowed = s.prescreen_mask.clone();
    let lambda0_seq = s.lambda0_seq.clone();
    let lambda1_seq = s.lambda1_seq.clone();
    let mut row_head: Option<(usize, FitResult<F>)> = None;
    let mut best: Option<(usize, FitResult<F>)> = None;
    for (h, &l1) in lambda1_seq.iter().enumerate() {
        let mut prev: Option<(usize, FitResult<F>)> = None;
        for (j, &l0) in lambda0_seq.iter().enumerate() {
            let stage = Stage::Grid { lambda0_index: j, lambda1_index: h };
            let from = if j == 0 { row_head.as_ref() } else { prev.as_ref() };
            let fit = s.fit(l0, l1, stage, from.map(|(i, f)| (*i, f)), &allowed)?;
            let idx = s.fits.len() - 1;
            let is_best = match &best {
                None => true,
                Some((b, _)) => s.argmin(&[*b, idx]) == idx,
            };
            if is_best {
                best = Some((idx, fit.clone()));
            }
            if j == 0 {
                row_head = Some((idx, fit.clone()));
            }
            prev = Some((idx, fit));
        }
    }
    let (best_idx, best_fit) = best.expect("grid has at least one fit");
    Ok(s.finish(best_idx, best_fit))
}
