//! JSON reports written by the `fit` and `select` verbs.

use pglmm::inference::{fit_residuals, five_number_summary, ranef_estimate, RanefSummary, ResidualType};
use pglmm::mcecm::{FitResult, IterationRecord, StopReason};
use pglmm::mstep::Penalty;
use pglmm::selection::{CriterionSet, FitSummary, SelectionResult};
use pglmm::{CovKind, Dataset, Family};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    /// On the raw covariate scale.
    pub estimate: f64,
    /// On the standardized covariate scale used by the fit.
    pub estimate_standardized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RanefVariance {
    pub name: String,
    pub variance: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub reason: StopReason,
    pub iterations: usize,
    pub final_distance: Option<f64>,
    pub final_mc_size: usize,
    pub trace: Vec<IterationRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub kind: ResidualType,
    /// Minimum, quartiles and maximum.
    pub five_number: Option<[f64; 5]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: Family,
    pub link: String,
    pub penalty: Penalty,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Absent for LASSO.
    pub gamma_scale: Option<f64>,
    pub alpha_mix: f64,
    pub covariance: CovKind,
    pub n_obs: usize,
    pub n_groups: usize,
    pub covariate_names: Vec<String>,
    pub random_effect_names: Vec<String>,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
    pub fixef: Vec<Coefficient>,
    /// Variances on the standardized covariate scale.
    pub ranef: Vec<RanefVariance>,
    /// Random-effect covariance `Gamma Gamma'`.
    pub ranef_cov: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub tau: f64,
    /// Residual standard error (Gaussian only).
    pub sigma: Option<f64>,
    pub group_ranef: RanefSummary,
    pub criteria: Option<CriterionSet>,
    pub convergence: Convergence,
    pub residuals: ResidualSummary,
    /// Posterior draws file, relative to the report's directory.
    pub posterior_file: Option<String>,
    pub seed: u64,
}

impl FitReport {
    pub fn build(
        ds: &Dataset<f64>,
        fit: &FitResult<f64>,
        criteria: Option<CriterionSet>,
        posterior_file: Option<String>,
        seed: u64,
    ) -> Result<Self, CliError> {
        let st = ds.standardization();
        let raw = st.destandardize(&fit.theta.beta);
        let names: Vec<String> =
            std::iter::once("(Intercept)".to_string()).chain(ds.covariate_names().iter().cloned()).collect();
        let fixef = names
            .iter()
            .zip(raw.iter().zip(&fit.theta.beta))
            .map(|(n, (r, s))| Coefficient { name: n.clone(), estimate: *r, estimate_standardized: *s })
            .collect();
        let re_names = ds.random_effect_names();
        let ranef = re_names
            .iter()
            .zip(fit.random_effect_variances())
            .map(|(n, v)| RanefVariance { name: n.clone(), variance: v, sd: v.sqrt() })
            .collect();
        let cov = fit.structure.random_effect_cov(&fit.theta.gamma);
        let kind = ResidualType::default_for(fit.family);
        let res = fit_residuals(fit, ds, kind, true)?;
        let last = fit.trace.last();
        Ok(FitReport {
            family: fit.family,
            link: fit.family.link_name().to_string(),
            penalty: fit.penalty.penalty,
            lambda0: fit.penalty.lambda0,
            lambda1: fit.penalty.lambda1,
            gamma_scale: fit.penalty.gamma_scale.is_finite().then_some(fit.penalty.gamma_scale),
            alpha_mix: fit.penalty.alpha_mix,
            covariance: fit.structure.kind,
            n_obs: ds.n(),
            n_groups: ds.n_groups(),
            covariate_names: ds.covariate_names().to_vec(),
            random_effect_names: re_names,
            centers: st.centers.clone(),
            scales: st.scales.clone(),
            fixef,
            ranef,
            ranef_cov: cov.rows().into_iter().map(|r| r.to_vec()).collect(),
            gamma: fit.theta.gamma.clone(),
            tau: fit.theta.tau,
            sigma: fit.family.has_dispersion().then(|| fit.theta.tau.sqrt()),
            group_ranef: ranef_estimate(&fit.theta, &fit.structure, &fit.draws)?,
            criteria,
            convergence: Convergence {
                converged: fit.converged,
                reason: fit.reason,
                iterations: fit.iterations,
                final_distance: last.and_then(|r| r.distance),
                final_mc_size: last.map_or(0, |r| r.mc_size),
                trace: fit.trace.clone(),
            },
            residuals: ResidualSummary { kind, five_number: five_number_summary(&res) },
            posterior_file,
            seed,
        })
    }

    /// Fixed effects on the standardized scale, intercept first.
    pub fn beta_standardized(&self) -> Vec<f64> {
        self.fixef.iter().map(|c| c.estimate_standardized).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalPenaltyInfo {
    pub lambda0: Option<f64>,
    pub lambda1: Option<f64>,
    pub posterior_file: Option<String>,
    pub reused: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub criterion: String,
    pub best: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda_max: f64,
    pub lambda0_seq: Vec<f64>,
    pub lambda1_seq: Vec<f64>,
    /// Random effects kept by pre-screening.
    pub prescreen_kept: Vec<String>,
    pub var_start: f64,
    pub all_nonconverged: bool,
    pub minimal_penalty: Option<MinimalPenaltyInfo>,
    pub fits: Vec<FitSummary>,
}

impl SelectionReport {
    pub fn build(ds: &Dataset<f64>, res: &SelectionResult<f64>) -> Self {
        let names = ds.random_effect_names();
        let best = &res.fits[res.best];
        SelectionReport {
            criterion: res.criterion.name().to_string(),
            best: res.best,
            lambda0: best.lambda0,
            lambda1: best.lambda1,
            lambda_max: res.lambda_max,
            lambda0_seq: res.lambda0_seq.clone(),
            lambda1_seq: res.lambda1_seq.clone(),
            prescreen_kept: names
                .iter()
                .zip(&res.prescreen_mask)
                .filter(|(_, k)| **k)
                .map(|(n, _)| n.clone())
                .collect(),
            var_start: res.var_start,
            all_nonconverged: res.all_nonconverged,
            minimal_penalty: res.minpen.as_ref().map(|m| MinimalPenaltyInfo {
                lambda0: m.lambdas.map(|l| l.0),
                lambda1: m.lambdas.map(|l| l.1),
                posterior_file: m.path.as_ref().map(|p| p.display().to_string()),
                reused: res.reused_posterior,
            }),
            fits: res.fits.clone(),
        }
    }
}
