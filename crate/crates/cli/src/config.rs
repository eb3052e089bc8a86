//! Run configuration: a JSON document whose fields are all optional, with
//! command-line flags applied on top.

use std::path::{Path, PathBuf};

use pglmm::io::{ColumnRoles, RandomEffects};
use pglmm::mcecm::{CovarChoice, FitConfig, VarStart};
use pglmm::mstep::{MStepConfig, Penalty, PenaltyConfig};
use pglmm::sampler::{SamplerConfig, SamplerKind};
use pglmm::selection::{Criterion, SearchConfig, SearchKind};
use pglmm::Family;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub columns: ColumnRoles,
    pub family: Family,
    pub penalty: Penalty,
    /// Concavity of MCP/SCAD; the penalty's default when absent.
    pub gamma_scale: Option<f64>,
    pub alpha_mix: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub covar: CovarChoice,
    pub search: SearchKind,
    pub criterion: Criterion,
    pub prescreen: bool,
    pub lambda_min_presc: f64,
    pub nlambda: usize,
    pub lambda_min_ratio: f64,
    pub lambda0_seq: Option<Vec<f64>>,
    pub lambda1_seq: Option<Vec<f64>>,
    pub loglik: bool,
    pub m_star: usize,
    pub thin: usize,
    pub bicq_posterior: Option<PathBuf>,
    pub sampler: SamplerKind,
    pub nmc_burnin: usize,
    pub nmc_start: Option<usize>,
    pub nmc_max: Option<usize>,
    pub nmc_report: usize,
    pub conv_em: f64,
    pub maxit_em: Option<usize>,
    pub t_lag: usize,
    pub mcc: usize,
    /// Starting random-effect variance; recommended from the data when absent.
    pub var_start: Option<f64>,
    pub mstep_delta: f64,
    pub mstep_maxit: usize,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub simulate: SimulateConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub sigma: f64,
    /// Intercept first; `(0, 1, 1, 0, ..., 0)` when absent.
    pub beta: Option<Vec<f64>>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n: 500, p: 10, k: 5, sigma: 1.0, beta: None }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        let fit = FitConfig::default();
        let sampler = SamplerConfig::for_dimension(1);
        RunConfig {
            data: None,
            columns: ColumnRoles::default(),
            family: Family::Binomial,
            penalty: Penalty::Mcp,
            gamma_scale: None,
            alpha_mix: 1.0,
            lambda0: 0.0,
            lambda1: 0.0,
            covar: fit.covar,
            search: search.kind,
            criterion: search.criterion,
            prescreen: search.prescreen,
            lambda_min_presc: search.lambda_min_presc,
            nlambda: search.nlambda,
            lambda_min_ratio: search.lambda_min_ratio,
            lambda0_seq: None,
            lambda1_seq: None,
            loglik: search.loglik,
            m_star: search.m_star,
            thin: search.thin,
            bicq_posterior: None,
            sampler: sampler.kind,
            nmc_burnin: sampler.nmc_burnin,
            nmc_start: None,
            nmc_max: None,
            nmc_report: sampler.nmc_report,
            conv_em: fit.conv_em,
            maxit_em: None,
            t_lag: fit.t_lag,
            mcc: fit.mcc,
            var_start: None,
            mstep_delta: fit.mstep.delta,
            mstep_maxit: fit.mstep.maxit_cd,
            seed: sampler.seed,
            threads: 1,
            out: PathBuf::from("."),
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::Input("no data file given (--data)".into()))
    }

    pub fn penalty_config(&self) -> PenaltyConfig {
        let mut p = PenaltyConfig::new(self.penalty, self.lambda0, self.lambda1);
        if let Some(g) = self.gamma_scale {
            p.gamma_scale = g;
        }
        p.alpha_mix = self.alpha_mix;
        p
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            conv_em: self.conv_em,
            t_lag: self.t_lag,
            mcc: self.mcc,
            maxit_em: self.maxit_em,
            var_start: self.var_start.map_or(VarStart::Recommend, VarStart::Fixed),
            covar: self.covar,
            mstep: MStepConfig { delta: self.mstep_delta, maxit_cd: self.mstep_maxit },
        }
    }

    pub fn sampler_config(&self, q: usize) -> SamplerConfig {
        let base = SamplerConfig::for_dimension(q);
        SamplerConfig {
            kind: self.sampler,
            nmc_burnin: self.nmc_burnin,
            nmc_start: self.nmc_start.unwrap_or(base.nmc_start),
            nmc_max: self.nmc_max.unwrap_or(base.nmc_max),
            nmc_report: self.nmc_report,
            seed: self.seed,
            parallel: self.threads > 1,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            kind: self.search,
            criterion: self.criterion,
            nlambda: self.nlambda,
            lambda_min_ratio: self.lambda_min_ratio,
            lambda0_seq: self.lambda0_seq.clone(),
            lambda1_seq: self.lambda1_seq.clone(),
            prescreen: self.prescreen,
            lambda_min_presc: self.lambda_min_presc,
            loglik: self.loglik,
            m_star: self.m_star,
            thin: self.thin,
            bicq_posterior: self.bicq_posterior.clone(),
        }
    }
}

/// Parses the `--random` flag: `all`, `none` or a comma-separated list.
pub fn parse_random_effects(s: &str) -> RandomEffects {
    match s.trim() {
        "all" => RandomEffects::All,
        "none" => RandomEffects::None,
        list => RandomEffects::Named(split_list(list)),
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty()).map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.prescreen);
        assert_eq!(c.lambda_min_presc, 0.01);
        assert_eq!(c.criterion, Criterion::BicQ);
    }

    #[test]
    fn partial_document_overrides() {
        let c: RunConfig = serde_json::from_str(
            r#"{"family": "gaussian", "criterion": "BICh", "columns": {"response": "r", "group": "g"}}"#,
        )
        .unwrap();
        assert_eq!(c.family, Family::Gaussian);
        assert_eq!(c.criterion, Criterion::BicH);
        assert_eq!(c.columns.response, "r");
        assert!(serde_json::from_str::<RunConfig>(r#"{"famly": "gaussian"}"#).is_err());
    }

    #[test]
    fn random_effect_lists() {
        assert_eq!(parse_random_effects("all"), RandomEffects::All);
        assert_eq!(parse_random_effects("a, b"), RandomEffects::Named(vec!["a".into(), "b".into()]));
    }
}
