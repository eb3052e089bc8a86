use pglmm::mcecm::{fit_single, initialize_theta, FitConfig, VarStart};
use pglmm::mstep::{Penalty, PenaltyConfig};
use pglmm::sampler::SamplerConfig;
use pglmm::simgen::{simulate, SimScenario};
use pglmm::{CovKind, CovStructure, Family, FitResult32, FitResult64, Real};

fn fit<F: Real>() -> pglmm::mcecm::FitResult<F> {
    let sim = simulate::<F>(&SimScenario::moderate(200, 3, 4, 1.0, 17)).unwrap();
    let ds = &sim.dataset;
    let structure = CovStructure::new(CovKind::Diagonal, ds.q());
    let penalty = PenaltyConfig::new(Penalty::Mcp, 0.02, 0.02);
    let cfg = FitConfig { var_start: VarStart::Fixed(1.0), maxit_em: Some(20), ..FitConfig::default() };
    let sampler = SamplerConfig { nmc_report: 500, ..SamplerConfig::for_dimension(ds.q()) };
    let allowed = vec![true; ds.q()];
    let theta = initialize_theta(ds, Family::Binomial, 1.0, &penalty, &structure, &allowed).unwrap();
    fit_single(ds, Family::Binomial, &penalty, &cfg, &sampler, &structure, theta, None, &allowed).unwrap()
}

#[test]
fn single_and_double_precision_fits_agree() {
    let single: FitResult32 = fit();
    let double: FitResult64 = fit();
    assert_eq!(single.draws.m(), double.draws.m());
    for (a, b) in single.theta.beta.iter().zip(&double.theta.beta) {
        assert!(a.is_finite());
        assert!((f64::from(*a) - b).abs() < 0.25, "{a} vs {b}");
    }
    let zero_single: Vec<bool> = single.theta.beta.iter().map(|b| *b == 0.0).collect();
    let zero_double: Vec<bool> = double.theta.beta.iter().map(|b| *b == 0.0).collect();
    assert_eq!(zero_single, zero_double);
}
