//! One simulated selection replicate:
//! `cargo run --release --example replicate -- <seed> [p] [abbrev|full]`.

use std::time::Instant;

use pglmm::mcecm::FitConfig;
use pglmm::mstep::{Penalty, PenaltyConfig};
use pglmm::sampler::SamplerConfig;
use pglmm::selection::{full_grid_search, two_stage_search, SearchConfig};
use pglmm::simgen::{score, simulate, SimScenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let p: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let full = args.next().is_some_and(|s| s == "full");
    let sim = simulate::<f64>(&SimScenario::moderate(500, p, 5, 1.0, seed))?;
    let start = Instant::now();
    let ds = &sim.dataset;
    let search = if full { full_grid_search } else { two_stage_search };
    let res = search(
        ds,
        pglmm::Family::Binomial,
        &PenaltyConfig::new(Penalty::Mcp, 0.0, 0.0),
        &SearchConfig::default(),
        &FitConfig::default(),
        &SamplerConfig::for_dimension(ds.q()),
    )?;
    let fit = &res.fits[res.best];
    let var: Vec<f64> = res.best_fit.random_effect_variances();
    let mut s = score(&ds.standardization().destandardize(&res.best_fit.theta.beta), &var, &sim.truth)?;
    s.seconds = Some(start.elapsed().as_secs_f64());
    println!("{}", serde_json::to_string(&s)?);
    println!("lambda0 = {}, lambda1 = {}, prescreen = {:?}", fit.lambda0, fit.lambda1, res.prescreen_mask);
    Ok(())
}
