//! High-dimensional selection runs; slow, so opt-in:
//! `cargo test --release -p pglmm --test long_suite -- --ignored --nocapture`.
//! `PGLMM_LONG_REPLICATES` sets the replicate count (default 20).

use std::io::Write;

use pglmm::mcecm::FitConfig;
use pglmm::mstep::{Penalty, PenaltyConfig};
use pglmm::sampler::SamplerConfig;
use pglmm::selection::{two_stage_search, SearchConfig};
use pglmm::simgen::{score, simulate, SelectionScore, SimScenario};
use pglmm::Family;

fn replicate(seed: u64, k: usize, sigma: f64) -> SelectionScore {
    let sim = simulate::<f64>(&SimScenario::moderate(500, 50, k, sigma, seed)).unwrap();
    let ds = &sim.dataset;
    let search = SearchConfig { lambda_min_presc: 0.05, ..SearchConfig::default() };
    let start = std::time::Instant::now();
    let res = two_stage_search(
        ds,
        Family::Binomial,
        &PenaltyConfig::new(Penalty::Mcp, 0.0, 0.0),
        &search,
        &FitConfig::default(),
        &SamplerConfig::for_dimension(ds.q()),
    )
    .unwrap();
    let beta = ds.standardization().destandardize(&res.best_fit.theta.beta);
    let mut s = score(&beta, &res.best_fit.random_effect_variances(), &sim.truth).unwrap();
    s.seconds = Some(start.elapsed().as_secs_f64());
    s
}

fn run(k: usize, sigma: f64) -> [f64; 6] {
    let n: u64 = std::env::var("PGLMM_LONG_REPLICATES").ok().and_then(|v| v.parse().ok()).unwrap_or(20);
    let mut acc = [0.0; 6];
    for seed in 1..=n {
        let s = replicate(seed, k, sigma);
        writeln!(std::io::stdout(), "seed {seed}: {}", serde_json::to_string(&s).unwrap()).unwrap();
        let v = [
            s.beta_true_hat[0],
            s.beta_true_hat[1],
            s.tp_fixef as f64,
            s.fp_fixef as f64,
            s.tp_ranef as f64,
            s.fp_ranef as f64,
        ];
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x / n as f64;
        }
    }
    writeln!(
        std::io::stdout(),
        "p = 50, K = {k}, sigma = {sigma:.3}: beta_hat ({:.2}, {:.2}), TP fixef {:.2}, FP fixef {:.2}, TP ranef {:.2}, FP ranef {:.2}",
        acc[0], acc[1], acc[2], acc[3], acc[4], acc[5]
    )
    .unwrap();
    acc
}

#[test]
#[ignore = "hours of CPU time"]
fn p50_five_groups_unit_variance() {
    let m = run(5, 1.0);
    assert!(m[2] >= 1.4 && m[4] >= 1.4, "true positives {m:?}");
    assert!(m[3] <= 1.2 && m[5] <= 2.0, "false positives {m:?}");
}
