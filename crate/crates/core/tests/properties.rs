use ndarray::Array2;
use pglmm::mcecm::{em_converged, em_distance};
use pglmm::model::{linear_predictor, linear_predictor_kron, standardize};
use pglmm::mstep::{group_threshold, scalar_threshold, Penalty};
use pglmm::sampler::{estep_sample, sample_size_schedule, ChainState, PosteriorDraws, SamplerConfig};
use pglmm::selection::bic_family;
use pglmm::{CovKind, CovStructure, Dataset, Family, Theta};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn penalty() -> impl Strategy<Value = Penalty> {
    prop_oneof![Just(Penalty::Lasso), Just(Penalty::Mcp), Just(Penalty::Scad)]
}

fn threshold(p: Penalty, z: f64, lambda: f64, v: f64) -> f64 {
    scalar_threshold(p, z, lambda, p.default_gamma_scale(), v, 1.0).unwrap()
}

/// Random dataset with `q - 1` random slopes drawn from the covariates.
fn random_dataset(seed: u64, n: usize, p: usize, q: usize, k: usize) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let groups: Vec<String> = (0..n).map(|i| format!("g{}", i % k)).collect();
    Dataset::from_raw(y, &x, (0..q - 1).collect(), &groups).unwrap()
}

proptest! {
    #[test]
    fn threshold_keeps_sign_and_shrinks(p in penalty(), z in -10.0..10.0f64, lambda in 0.0..3.0f64, v in 1.0..2.0f64) {
        let b = threshold(p, z, lambda, v);
        prop_assert!(b == 0.0 || b.signum() == z.signum());
        prop_assert!(b.abs() <= z.abs() / v + 1e-12);
    }

    #[test]
    fn threshold_kills_small_inputs(p in penalty(), lambda in 0.01..3.0f64, frac in 0.0..1.0f64, neg in any::<bool>()) {
        let z = if neg { -frac * lambda } else { frac * lambda };
        prop_assert_eq!(threshold(p, z, lambda, 1.0), 0.0);
    }

    #[test]
    fn threshold_limits(p in penalty(), z in -10.0..10.0f64, lambda in 0.01..1.0f64, v in 1.0..2.0f64) {
        prop_assert!((threshold(p, z, 0.0, v) - z / v).abs() < 1e-12);
        let big = z.signum() * (z.abs() + 10.0 * v * 4.0 * lambda);
        let b = threshold(p, big, lambda, v);
        let expected = match p {
            Penalty::Lasso => (big.abs() - lambda).copysign(big) / v,
            Penalty::Mcp | Penalty::Scad => big / v,
        };
        prop_assert!((b - expected).abs() < 1e-12, "{:?}: {} vs {}", p, b, expected);
    }

    #[test]
    fn threshold_is_monotone(p in penalty(), a in -10.0..10.0f64, b in -10.0..10.0f64, lambda in 0.0..3.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(threshold(p, lo, lambda, 1.0) <= threshold(p, hi, lambda, 1.0) + 1e-12);
    }

    #[test]
    fn group_threshold_scales_along_input(p in penalty(), z in prop::collection::vec(-5.0..5.0f64, 1..6), lambda in 0.0..3.0f64) {
        let g = group_threshold(p, &z, lambda, p.default_gamma_scale(), 1.0, 1.0).unwrap();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((gnorm - threshold(p, norm, lambda, 1.0)).abs() < 1e-10);
        if gnorm > 0.0 {
            for (a, b) in z.iter().zip(&g) {
                prop_assert!((a / norm - b / gnorm).abs() < 1e-10);
            }
        } else {
            prop_assert!(g.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn predictor_forms_agree(seed in any::<u64>(), q in 1usize..5, diag in any::<bool>()) {
        let ds = random_dataset(seed, 24, 4, q, 3);
        let structure = CovStructure::new(if diag { CovKind::Diagonal } else { CovKind::Unstructured }, q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut theta = Theta::zeros(ds.p(), &structure);
        theta.beta.iter_mut().for_each(|b| *b = rng.random_range(-2.0..2.0));
        theta.gamma.iter_mut().for_each(|g| *g = rng.random_range(-2.0..2.0));
        for i in 0..ds.n() {
            let k = ds.group_of(i);
            let alpha: Vec<f64> = (0..q).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = linear_predictor(&ds, &theta, &structure, &alpha, k, i).unwrap();
            let b = linear_predictor_kron(&ds, &theta, &structure, &alpha, k, i).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn jq_rebuilds_gamma(seed in any::<u64>(), q in 1usize..7, diag in any::<bool>()) {
        let structure = CovStructure::new(if diag { CovKind::Diagonal } else { CovKind::Unstructured }, q);
        let jq = structure.build_jq();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma: Vec<f64> = (0..structure.gamma_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gm = structure.gamma_matrix(&gamma);
        let vec_gamma = jq.apply(&gamma);
        let dense = jq.to_dense::<f64>();
        prop_assert_eq!(dense.dim(), (q * q, gamma.len()));
        for col in dense.columns() {
            prop_assert_eq!(col.iter().filter(|v| **v == 1.0).count(), 1);
            prop_assert_eq!(col.iter().filter(|v| **v == 0.0).count(), q * q - 1);
        }
        for h in 0..q {
            for t in 0..q {
                // column-major vec
                prop_assert_eq!(vec_gamma[h * q + t], gm[[t, h]]);
                let via_dense: f64 = dense.row(h * q + t).iter().zip(&gamma).map(|(a, b)| a * b).sum();
                prop_assert_eq!(via_dense, gm[[t, h]]);
            }
        }
        let v: Vec<f64> = (0..q * q).map(|_| rng.random_range(-1.0..1.0)).collect();
        let projected = jq.project_row(&v);
        for (c, col) in dense.columns().into_iter().enumerate() {
            let expected: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
            prop_assert_eq!(projected[c], expected);
        }
    }

    #[test]
    fn standardized_columns_have_unit_moments(seed in any::<u64>(), n in 5usize..60, p in 1usize..6, shift in -1e3..1e3f64, spread in 0.01..100.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| shift + spread * rng.random_range(-1.0..1.0));
        let (xs, st) = standardize(&x).unwrap();
        for col in xs.columns() {
            let mean = col.sum() / n as f64;
            let ms = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-10, "mean {}", mean);
            prop_assert!((ms - 1.0).abs() < 1e-10, "mean square {}", ms);
        }
        let back = st.apply(&x).unwrap();
        prop_assert_eq!(back, xs);
    }

    #[test]
    fn schedule_grows_then_caps(start in 1usize..400, extra in 0usize..5000) {
        let max = start + extra;
        prop_assert_eq!(sample_size_schedule(1, 0, start, max), start);
        let mut m = start;
        for s in 2..40 {
            let next = sample_size_schedule(s, m, start, max);
            let f = if s <= 15 { 1.1 } else { 1.2 };
            let want = ((f * m as f64) - 1e-9).ceil() as usize;
            prop_assert_eq!(next, want.min(max), "s = {}, m = {}", s, m);
            m = next;
        }
    }

    #[test]
    fn bic_family_arithmetic(ll in -1e4..0.0f64, db in 0usize..20, dg in 0usize..20, n in 2usize..5000, k in 2usize..100) {
        let (bic, bich, ngrp) = bic_family(ll, db, dg, n, k);
        let d = (db + dg) as f64;
        prop_assert!((bic - (-2.0 * ll + d * (n as f64).ln())).abs() < 1e-9);
        prop_assert!((ngrp - (-2.0 * ll + d * (k as f64).ln())).abs() < 1e-9);
        prop_assert!((bich - (-2.0 * ll + db as f64 * (n as f64).ln() + dg as f64 * (k as f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn posterior_file_round_trip(seed in any::<u64>(), m in 0usize..30, k in 1usize..4, q in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specials = [0.0, -0.0, f64::MIN_POSITIVE / 4.0, 1e300, -1e-300, f64::MAX];
        let data = Array2::from_shape_fn((m, k * q), |_| {
            if rng.random_bool(0.2) { specials[rng.random_range(0..specials.len())] } else { rng.random_range(-5.0..5.0) }
        });
        let groups = (0..k).map(|g| format!("grp{g}")).collect();
        let vars = (0..q).map(|t| format!("v{t}")).collect();
        let draws = PosteriorDraws::new(data, groups, vars).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pglmpost");
        draws.save(&path, seed).unwrap();
        let (back, meta) = PosteriorDraws::<f64>::load(&path).unwrap();
        prop_assert_eq!(meta.seed, seed);
        prop_assert_eq!(back.group_names(), draws.group_names());
        prop_assert_eq!(back.var_names(), draws.var_names());
        prop_assert_eq!(back.data().dim(), draws.data().dim());
        for (a, b) in back.data().iter().zip(draws.data().iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn bic_reference_values() {
    let (bic, bich, ngrp) = bic_family(-100.0, 3, 2, 500, 5);
    assert!((bic - (200.0 + 5.0 * 500f64.ln())).abs() < 1e-12);
    assert!((bich - (200.0 + 3.0 * 500f64.ln() + 2.0 * 5f64.ln())).abs() < 1e-12);
    assert!((ngrp - (200.0 + 5.0 * 5f64.ln())).abs() < 1e-12);
    assert_eq!(bic_family(-7.5, 0, 0, 100, 10), (15.0, 15.0, 15.0));
}

#[test]
fn schedule_switches_factor_after_fifteen() {
    assert_eq!(sample_size_schedule(15, 100, 100, 10_000), 110);
    assert_eq!(sample_size_schedule(16, 100, 100, 10_000), 120);
    assert_eq!(sample_size_schedule(2, 1000, 250, 1000), 1000);
}

#[test]
fn convergence_needs_consecutive_passes() {
    let s = CovStructure::new(CovKind::Unstructured, 1);
    let mut a = Theta::zeros(2, &s);
    a.beta = vec![1.0, 2.0];
    a.gamma = vec![1.0];
    let mut far = a.clone();
    far.beta[1] = 3.0;
    let near = a.clone();
    assert_eq!(em_distance(&far, &a), 1.0 / 3.0);
    let (done, c) = em_converged(&near, &a, 1e-3, 0, 2);
    assert!(!done && c == 1);
    // a miss resets the counter
    let (done, c) = em_converged(&far, &a, 1e-3, c, 2);
    assert!(!done && c == 0);
    let (_, c) = em_converged(&near, &a, 1e-3, c, 2);
    let (done, c) = em_converged(&near, &a, 1e-3, c, 2);
    assert!(done && c == 2);
}

/// Kolmogorov-Smirnov statistic of `x` against N(0, 1).
fn ks_statistic(x: &mut [f64]) -> f64 {
    let normal = Normal::standard();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = normal.cdf(v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn zero_gamma_draws_follow_the_prior() {
    let ds = random_dataset(11, 60, 2, 2, 4);
    let structure = CovStructure::new(CovKind::Unstructured, 2);
    let mut theta = Theta::zeros(ds.p(), &structure);
    theta.beta = vec![0.3, -0.5, 0.8];
    let config = SamplerConfig { seed: 99, ..SamplerConfig::for_dimension(2) };
    let mut chain = ChainState::standard_normal(ds.n_groups(), 2, 99);
    let draws = estep_sample(&ds, &theta, &structure, Family::Gaussian, &mut chain, 2000, 50, &config).unwrap();
    // 1% critical value for n = 2000
    let crit = 1.628 / 2000f64.sqrt();
    for col in draws.data().columns() {
        let mut v = col.to_vec();
        let d = ks_statistic(&mut v);
        assert!(d < crit, "KS statistic {d} exceeds {crit}");
    }
}
