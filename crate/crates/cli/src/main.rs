//! `pglmm`: fit and select penalized GLMMs from CSV data.

mod config;
mod report;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pglmm::inference::{
    fit_residuals, mcmc_diagnostics, predict_new, transformed_draws, write_diagnostics_csv, write_residuals_csv,
    PredictType, ResidualType, DEFAULT_BINS, DEFAULT_MAX_LAG,
};
use pglmm::io::{read_dataset, write_dataset, Table};
use pglmm::mcecm::{fit_single, initialize_theta, var_start_recommend, CovarChoice, FitResult, VarStart};
use pglmm::model::Standardization;
use pglmm::mstep::Penalty;
use pglmm::sampler::{PosteriorDraws, SamplerKind};
use pglmm::selection::{evaluate_criteria, full_grid_search, two_stage_search, Criterion, SearchKind};
use pglmm::simgen::{simulate, SimScenario};
use pglmm::{CovStructure, Dataset, Family, PglmmError, Theta};
use serde::Serialize;
use thiserror::Error;

use config::{parse_random_effects, split_list, RunConfig};
use report::{FitReport, SelectionReport};

const FIT_REPORT: &str = "fit_report.json";
const SELECTION_REPORT: &str = "selection.json";
const POSTERIOR: &str = "posterior.pglmpost";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] PglmmError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "pglmm", version, about = "Penalized generalized linear mixed models")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the per-group E-step.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model at a fixed penalty pair (unpenalized by default).
    Fit(FitArgs),
    /// Select fixed and random effects over a penalty grid.
    Select(SelectArgs),
    /// Write a simulated logistic mixed-model dataset.
    Simulate(SimulateArgs),
    /// Write MCMC diagnostic series of a saved fit.
    Diagnose(DiagnoseArgs),
    /// Fixed-effect predictions for new data from a saved fit.
    Predict(PredictArgs),
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    group: Option<String>,
    /// Comma-separated covariate columns (default: all other columns).
    #[arg(long)]
    covariates: Option<String>,
    /// Random effects: `all`, `none` or a comma-separated list.
    #[arg(long)]
    random: Option<String>,
    #[arg(long)]
    family: Option<String>,
    /// mcp, scad or lasso.
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    gamma_scale: Option<f64>,
    #[arg(long)]
    alpha_mix: Option<f64>,
    /// auto, unstructured or independent.
    #[arg(long)]
    covar: Option<String>,
    /// adaptive-random-walk or independence.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    nmc_burnin: Option<usize>,
    #[arg(long)]
    nmc_start: Option<usize>,
    #[arg(long)]
    nmc_max: Option<usize>,
    #[arg(long)]
    nmc_report: Option<usize>,
    #[arg(long)]
    conv_em: Option<f64>,
    #[arg(long)]
    maxit_em: Option<usize>,
    #[arg(long)]
    var_start: Option<f64>,
    /// Skip the marginal log-likelihood (and the criteria built on it).
    #[arg(long)]
    no_loglik: bool,
    #[arg(long)]
    m_star: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// abbrev or full-grid.
    #[arg(long)]
    search: Option<String>,
    /// BICq, BICh, BIC or BICNgrp.
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long)]
    no_prescreen: bool,
    #[arg(long)]
    lambda_min_presc: Option<f64>,
    #[arg(long)]
    nlambda: Option<usize>,
    #[arg(long)]
    lambda_min_ratio: Option<f64>,
    /// Minimal-penalty posterior file; reused when it exists.
    #[arg(long)]
    bicq_posterior: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Fit report (default: <out>/fit_report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Comma-separated group labels (default: all).
    #[arg(long)]
    groups: Option<String>,
    /// Comma-separated random-effect names (default: all).
    #[arg(long)]
    vars: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_LAG)]
    max_lag: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Diagnose the standardized draws instead of `Gamma alpha`.
    #[arg(long)]
    standardized: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Fit report (default: <out>/fit_report.json).
    #[arg(long)]
    report: Option<PathBuf>,
    /// CSV file with the model's covariate columns.
    #[arg(long)]
    data: PathBuf,
    /// link or response.
    #[arg(long = "type", default_value = "response")]
    kind: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::new();
    logger.filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info });
    logger.parse_default_env();
    logger.format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t.max(1);
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if cfg.threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot start {} threads: {e}", cfg.threads)))?;
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Output(format!("{}: {e}", cfg.out.display())))?;
    let start = Instant::now();
    let verb = match cli.command {
        Command::Fit(a) => {
            apply_model_args(&mut cfg, a.model)?;
            if let Some(l) = a.lambda0 {
                cfg.lambda0 = l;
            }
            if let Some(l) = a.lambda1 {
                cfg.lambda1 = l;
            }
            cmd_fit(&cfg)?;
            "fit"
        }
        Command::Select(a) => {
            apply_model_args(&mut cfg, a.model)?;
            if let Some(s) = a.search {
                cfg.search = match s.to_ascii_lowercase().replace('-', "_").as_str() {
                    "abbrev" => SearchKind::Abbrev,
                    "full_grid" => SearchKind::FullGrid,
                    _ => return Err(CliError::Input(format!("unknown search '{s}'"))),
                };
            }
            if let Some(c) = a.criterion {
                cfg.criterion = Criterion::parse(&c)?;
            }
            if a.no_prescreen {
                cfg.prescreen = false;
            }
            set(&mut cfg.lambda_min_presc, a.lambda_min_presc);
            set(&mut cfg.nlambda, a.nlambda);
            set(&mut cfg.lambda_min_ratio, a.lambda_min_ratio);
            if a.bicq_posterior.is_some() {
                cfg.bicq_posterior = a.bicq_posterior;
            }
            cmd_select(&cfg)?;
            "select"
        }
        Command::Simulate(a) => {
            set(&mut cfg.simulate.n, a.n);
            set(&mut cfg.simulate.p, a.p);
            set(&mut cfg.simulate.k, a.k);
            set(&mut cfg.simulate.sigma, a.sigma);
            cmd_simulate(&cfg)?;
            "simulate"
        }
        Command::Diagnose(a) => {
            cmd_diagnose(&cfg, &a)?;
            "diagnose"
        }
        Command::Predict(a) => {
            cmd_predict(&cfg, &a)?;
            "predict"
        }
    };
    #[derive(Serialize)]
    struct Timing<'a> {
        verb: &'a str,
        seconds: f64,
    }
    write_json(&cfg.out.join("timing.json"), &Timing { verb, seconds: start.elapsed().as_secs_f64() })
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_model_args(cfg: &mut RunConfig, a: ModelArgs) -> Result<(), CliError> {
    if a.data.is_some() {
        cfg.data = a.data;
    }
    set(&mut cfg.columns.response, a.response);
    set(&mut cfg.columns.group, a.group);
    if let Some(c) = a.covariates {
        cfg.columns.covariates = Some(split_list(&c));
    }
    if let Some(r) = a.random {
        cfg.columns.random_effects = parse_random_effects(&r);
    }
    if let Some(f) = a.family {
        cfg.family = Family::parse(&f)?;
    }
    if let Some(p) = a.penalty {
        cfg.penalty = Penalty::parse(&p)?;
    }
    if a.gamma_scale.is_some() {
        cfg.gamma_scale = a.gamma_scale;
    }
    set(&mut cfg.alpha_mix, a.alpha_mix);
    if let Some(c) = a.covar {
        cfg.covar = CovarChoice::parse(&c)?;
    }
    if let Some(s) = a.sampler {
        cfg.sampler = SamplerKind::parse(&s)?;
    }
    set(&mut cfg.nmc_burnin, a.nmc_burnin);
    if a.nmc_start.is_some() {
        cfg.nmc_start = a.nmc_start;
    }
    if a.nmc_max.is_some() {
        cfg.nmc_max = a.nmc_max;
    }
    set(&mut cfg.nmc_report, a.nmc_report);
    set(&mut cfg.conv_em, a.conv_em);
    if a.maxit_em.is_some() {
        cfg.maxit_em = a.maxit_em;
    }
    if a.var_start.is_some() {
        cfg.var_start = a.var_start;
    }
    if a.no_loglik {
        cfg.loglik = false;
    }
    set(&mut cfg.m_star, a.m_star);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn load_data(cfg: &RunConfig) -> Result<Dataset<f64>, CliError> {
    let path = cfg.data_path()?;
    let ds = read_dataset::<f64>(path, &cfg.columns)?;
    ds.validate_for(cfg.family)?;
    log::info!(
        "{}: {} observations, {} groups, {} covariates, {} random effects",
        path.display(),
        ds.n(),
        ds.n_groups(),
        ds.p(),
        ds.q()
    );
    Ok(ds)
}

/// Writes the report, posterior draws and residuals of a final model.
fn write_fit_outputs(
    cfg: &RunConfig,
    ds: &Dataset<f64>,
    fit: &FitResult<f64>,
    report: &FitReport,
) -> Result<(), CliError> {
    fit.draws.save(&cfg.out.join(POSTERIOR), cfg.seed)?;
    write_json(&cfg.out.join(FIT_REPORT), report)?;
    let kind = ResidualType::default_for(fit.family);
    let res = fit_residuals(fit, ds, kind, true)?;
    let labels: Vec<&str> = (0..ds.n()).map(|i| ds.levels()[ds.group_of(i)].as_str()).collect();
    write_residuals_csv(kind, &labels, &res, create(&cfg.out.join("residuals.csv"))?)
        .map_err(|e| CliError::Output(e.to_string()))
}

fn cmd_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_data(cfg)?;
    let q = ds.q();
    let structure = CovStructure::new(cfg.covar.resolve(q), q);
    let penalty = cfg.penalty_config();
    let fit_cfg = cfg.fit_config();
    let sampler = cfg.sampler_config(q);
    let var_start = match fit_cfg.var_start {
        VarStart::Fixed(v) => v,
        VarStart::Recommend => var_start_recommend(&ds, cfg.family, &sampler)?,
    };
    let allowed = vec![true; q];
    let theta0 = initialize_theta(&ds, cfg.family, var_start, &penalty, &structure, &allowed)?;
    let fit = fit_single(&ds, cfg.family, &penalty, &fit_cfg, &sampler, &structure, theta0, None, &allowed)?;
    log::info!(
        "fit finished after {} EM iterations ({})",
        fit.iterations,
        if fit.converged { "converged" } else { "iteration cap" }
    );
    let loglik = cfg.loglik.then_some((cfg.m_star, cfg.thin));
    let criteria = evaluate_criteria(&ds, &fit, None, loglik, cfg.seed)?;
    let report = FitReport::build(&ds, &fit, Some(criteria), Some(POSTERIOR.to_string()), cfg.seed)?;
    write_fit_outputs(cfg, &ds, &fit, &report)
}

fn cmd_select(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_data(cfg)?;
    let penalty = cfg.penalty_config();
    let fit_cfg = cfg.fit_config();
    let sampler = cfg.sampler_config(ds.q());
    let search = cfg.search_config();
    let res = match search.kind {
        SearchKind::Abbrev => two_stage_search(&ds, cfg.family, &penalty, &search, &fit_cfg, &sampler)?,
        SearchKind::FullGrid => full_grid_search(&ds, cfg.family, &penalty, &search, &fit_cfg, &sampler)?,
    };
    let best = &res.fits[res.best];
    log::info!("selected fit {}: lambda0 = {:.6}, lambda1 = {:.6}", res.best, best.lambda0, best.lambda1);
    write_json(&cfg.out.join(SELECTION_REPORT), &SelectionReport::build(&ds, &res))?;
    let report =
        FitReport::build(&ds, &res.best_fit, Some(best.criteria.clone()), Some(POSTERIOR.to_string()), cfg.seed)?;
    write_fit_outputs(cfg, &ds, &res.best_fit, &report)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let s = &cfg.simulate;
    let mut scenario = SimScenario::moderate(s.n, s.p, s.k, s.sigma, cfg.seed);
    if let Some(b) = &s.beta {
        scenario.beta_true = b.clone();
    }
    let sim = simulate::<f64>(&scenario)?;
    let y: Vec<f64> = sim.dataset.y().to_vec();
    let labels: Vec<String> = (0..y.len()).map(|i| sim.dataset.levels()[sim.dataset.group_of(i)].clone()).collect();
    write_dataset(create(&cfg.out.join("data.csv"))?, &labels, &y, &sim.x_raw, sim.dataset.covariate_names())
        .map_err(|e| CliError::Output(e.to_string()))?;
    write_json(&cfg.out.join("truth.json"), &sim.truth)?;
    log::info!("wrote {} observations in {} groups to {}", s.n, s.k, cfg.out.display());
    Ok(())
}

fn read_report(path: &Path) -> Result<FitReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_diagnose(cfg: &RunConfig, a: &DiagnoseArgs) -> Result<(), CliError> {
    let report_path = a.report.clone().unwrap_or_else(|| cfg.out.join(FIT_REPORT));
    let report = read_report(&report_path)?;
    let file =
        report.posterior_file.as_deref().ok_or_else(|| CliError::Input("report names no posterior file".into()))?;
    let post_path = report_path.parent().unwrap_or(Path::new(".")).join(file);
    let (draws, _) = PosteriorDraws::<f64>::load(&post_path)?;
    let draws = if a.standardized {
        draws
    } else {
        let q = report.random_effect_names.len();
        let structure = CovStructure::new(report.covariance, q);
        let theta = Theta { beta: report.beta_standardized(), gamma: report.gamma.clone(), tau: report.tau };
        transformed_draws(&theta, &structure, &draws)?
    };
    let groups = a.groups.as_deref().map(split_list);
    let vars = a.vars.as_deref().map(split_list);
    let series = mcmc_diagnostics(&draws, groups.as_deref(), vars.as_deref(), a.max_lag, a.bins)?;
    write_diagnostics_csv(&series, create(&cfg.out.join("diagnostics.csv"))?)
        .map_err(|e| CliError::Output(e.to_string()))?;
    log::info!("wrote {} diagnostic series", series.len());
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, a: &PredictArgs) -> Result<(), CliError> {
    let report = read_report(&a.report.clone().unwrap_or_else(|| cfg.out.join(FIT_REPORT)))?;
    let kind = PredictType::parse(&a.kind)?;
    let table = Table::read(&a.data)?;
    let x = table.matrix::<f64>(&report.covariate_names, &a.data)?;
    let st = Standardization { centers: report.centers.clone(), scales: report.scales.clone() };
    let pred = predict_new(&report.beta_standardized(), report.family, &st, &x, kind, true)?;
    let mut w = csv::Writer::from_writer(create(&cfg.out.join("predictions.csv"))?);
    let out_err = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(["index", "prediction"]).map_err(out_err)?;
    for (i, v) in pred.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()]).map_err(out_err)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))?;
    Ok(())
}
