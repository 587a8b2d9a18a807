mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use paleo_bhm::baseline::{attenuation_factor, fit_direct, predict_direct};
use paleo_bhm::dist::normal_logpdf;
use paleo_bhm::evaluation::{central_interval, correlation, interval_coverage, rmse};
use paleo_bhm::gibbs::expected_draws;
use paleo_bhm::model::{
    log_joint, nh_mean_step, proxy_loglik, validate_config, validate_dataset, var_step, AStructure, Calibration, LatentStates,
};
use paleo_bhm::pseudoproxy::{
    simulate_experiment, simulate_latents, staircase_mask, Footprint, ForcingSource, ProxySpec, PseudoproxyDesign, TruthSpec,
};
use paleo_bhm::ssm::{build_ssm, ffbs_draw, kalman_filter, observation_vectors, smoother_moments};
use paleo_bhm::{run_chain, Error, GridSpec, ModelConfig, ProxyPanel};

fn series(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, len)
}

fn triple(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (series(len), series(len), series(len))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn var_step_is_linear(
        seed in any::<u64>(),
        g in 1usize..4,
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(g, g, |_, _| rng.random_range(-1.0..1.0));
        let vec = |rng: &mut ChaCha8Rng| DVector::from_fn(g, |_, _| rng.random_range(-5.0..5.0));
        let (v1, v2, e1, e2) = (vec(&mut rng), vec(&mut rng), vec(&mut rng), vec(&mut rng));
        let lhs = var_step(&a, &(&v1 * alpha + &v2 * beta), &(&e1 * alpha + &e2 * beta)).unwrap();
        let rhs = var_step(&a, &v1, &e1).unwrap() * alpha + var_step(&a, &v2, &e2).unwrap() * beta;
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn nh_mean_step_is_linear_in_level_coefficients_and_residual(
        p in prop::array::uniform5(-3.0..3.0f64),
        q in prop::array::uniform5(-3.0..3.0f64),
        f in prop::array::uniform3(-2.0..2.0f64),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
    ) {
        let step = |x: [f64; 5]| nh_mean_step(x[0], [x[1], x[2], x[3]], f, x[4]);
        let mix: Vec<f64> = (0..5).map(|k| alpha * p[k] + beta * q[k]).collect();
        let lhs = step(mix.try_into().unwrap());
        prop_assert!((lhs - (alpha * step(p) + beta * step(q))).abs() < 1e-10);
    }

    #[test]
    fn log_joint_is_finite_and_gamma_terms_separate(
        seed in any::<u64>(),
        g in 1usize..3,
        ar in any::<bool>(),
        delta in -2.0..2.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, cfg, data) = common::random_case(&mut rng, g, 3, 12, ar, AStructure::Diagonal);
        let latents = simulate_latents(&params, &data.forcings, &mut rng).unwrap();
        let base = log_joint(&params, &latents, &data, &cfg).unwrap();
        prop_assert!(base.is_finite());
        let mut moved = params.clone();
        moved.gamma[1] += delta;
        let lj = log_joint(&moved, &latents, &data, &cfg).unwrap();
        let local = |p: &paleo_bhm::Params| {
            normal_logpdf(p.gamma[1], p.gamma_mean, p.gamma_var) + proxy_loglik(p, &latents, &data.panel, 1, ar)
        };
        let expected = local(&moved) - local(&params);
        prop_assert!((lj - base - expected).abs() < 1e-8 * (1.0 + base.abs()));
    }

    #[test]
    fn log_joint_errors_rather_than_minus_infinity(seed in any::<u64>(), scale in 1.0..3.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut params, cfg, data) = common::random_case(&mut rng, 2, 2, 6, false, AStructure::Full);
        let latents = LatentStates::zeros(6, 2, &params, &data.forcings);
        params.a = DMatrix::identity(2, 2) * scale;
        prop_assert!(matches!(log_joint(&params, &latents, &data, &cfg), Err(Error::NonStationary(_))));
    }

    #[test]
    fn latent_y_is_reconstructed_exactly(seed in any::<u64>(), g in 1usize..4, t in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, _, data) = common::random_case(&mut rng, g, 2, t, false, AStructure::Diagonal);
        let latents = simulate_latents(&params, &data.forcings, &mut rng).unwrap();
        prop_assert!(latents.y_reconstruction_error(&params, &data.forcings) < 1e-12);
    }

    #[test]
    fn filter_and_ffbs_outputs_are_well_formed(
        seed in any::<u64>(),
        g in 1usize..4,
        t in 1usize..15,
        ar in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, cfg, data) = common::random_case(&mut rng, g, 4, t, ar, AStructure::Full);
        let ssm = build_ssm(&params, &cfg, &data).unwrap();
        let filt = kalman_filter(&ssm, &observation_vectors(&ssm, &data)).unwrap();
        prop_assert!(filt.log_likelihood.is_finite());
        let (_, sc) = smoother_moments(&filt, &ssm).unwrap();
        for c in filt.filtered_covs.iter().chain(filt.predicted_covs.iter()).chain(sc.iter()) {
            prop_assert!((c - c.transpose()).amax() < 1e-10);
            let sym = (c + c.transpose()) * 0.5;
            prop_assert!(sym.symmetric_eigenvalues().min() > -1e-9 * (1.0 + c.amax()));
        }
        let draw = |s: u64| ffbs_draw(&filt, &ssm, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
        let (a, b) = (draw(seed), draw(seed));
        prop_assert_eq!(a.v.as_slice(), b.v.as_slice());
        prop_assert_eq!(a.w, b.w);
    }

    #[test]
    fn mcmc_draws_keep_invariants_and_count(
        seed in any::<u64>(),
        n_iter in 11usize..40,
        burn_in in 0usize..10,
        thin in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, mut cfg, data) = common::random_case(&mut rng, 2, 3, 10, true, AStructure::Full);
        cfg.sampler.n_iter = n_iter;
        cfg.sampler.burn_in = burn_in;
        cfg.sampler.thin = thin;
        cfg.sampler.seed = seed;
        let chain = run_chain(&cfg, &data, 0).unwrap();
        prop_assert_eq!(chain.draws.len(), expected_draws(n_iter, burn_in, thin));
        prop_assert_eq!(chain.draws.len(), (n_iter - burn_in) / thin);
        let w = cfg.grid.weights();
        for d in &chain.draws {
            prop_assert!(d.params.check_invariants().is_ok());
            prop_assert!(d.latents.y_reconstruction_error(&d.params, &data.forcings) < 1e-12);
            let nh = d.latents.nh_series(&w);
            prop_assert!(nh.iter().zip(&d.nh).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn masked_cells_never_reach_the_draws(seed in any::<u64>(), junk in -1e6..1e6f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, mut cfg, data) = common::random_case(&mut rng, 2, 3, 12, true, AStructure::Diagonal);
        cfg.sampler.n_iter = 15;
        cfg.sampler.burn_in = 5;
        cfg.sampler.thin = 1;
        let mut scrubbed = data.clone();
        for (value, observed) in scrubbed.panel.values.iter_mut().zip(data.panel.mask.iter()) {
            if !observed {
                *value = junk;
            }
        }
        let a = run_chain(&cfg, &data, 0).unwrap();
        let b = run_chain(&cfg, &scrubbed, 0).unwrap();
        let bits = |c: &paleo_bhm::gibbs::ChainDraws| -> Vec<u64> {
            c.draws.iter().flat_map(|d| d.nh.iter().chain(d.params.gamma.iter()).map(|x| x.to_bits())).collect()
        };
        prop_assert_eq!(bits(&a), bits(&b));
    }
}

fn random_design(seed: u64) -> PseudoproxyDesign {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = rng.random_range(1..4usize);
    let p = rng.random_range(1..7usize);
    let n_years = rng.random_range(30..90usize);
    let first_year = 1500;
    let last = first_year + n_years as i32 - 1;
    let weights: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let grid = GridSpec { area_weights: weights.iter().map(|w| w / total).collect() };
    let calibration = Calibration { start_year: last - 9, end_year: last, instrumental_sd: 0.2, allow_instrumental_outside: false };
    let proxies = (0..p)
        .map(|i| ProxySpec {
            footprint: if i % 2 == 0 || g == 1 {
                Footprint::Cell { cell: i % g }
            } else {
                Footprint::LocalAverage { cells: (0..g).collect() }
            },
            snr: Some(rng.random_range(0.2..5.0)),
            start_year: first_year + rng.random_range(0..n_years as i32 / 2),
        })
        .collect();
    let diag = |v: f64| (0..g).map(|i| (0..g).map(|j| if i == j { v } else { 0.0 }).collect()).collect();
    PseudoproxyDesign {
        grid,
        first_year,
        n_years,
        calibration,
        proxies,
        truth: TruthSpec {
            gamma: (0..p).map(|_| rng.random_range(0.3..1.5)).collect(),
            proxy_ar: Some((0..p).map(|_| rng.random_range(-0.5..0.5)).collect()),
            mu: rng.random_range(-0.5..0.5),
            omega: [0.2, -0.3, 0.4],
            nh_ar: rng.random_range(-0.8..0.8),
            nh_var: rng.random_range(0.05..0.5),
            a: diag(rng.random_range(-0.8..0.8)),
            sigma: diag(rng.random_range(0.1..0.5)),
        },
        forcings: ForcingSource::Synthetic { persistence: [0.9, 0.1, 0.95], sd: [0.5, 0.5, 0.5] },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn simulated_experiments_pass_validation(seed in any::<u64>(), sim_seed in any::<u64>()) {
        let design = random_design(seed);
        let (truth, data) = simulate_experiment(&design, &mut ChaCha8Rng::seed_from_u64(sim_seed)).unwrap();
        prop_assert!(truth.params.check_invariants().is_ok());
        let mut cfg = ModelConfig::new(design.grid.clone(), design.calibration.clone());
        cfg.structure.proxy_ar_enabled = true;
        let report = validate_config(&cfg, &data.panel, &data.forcings);
        prop_assert!(report.is_pass(), "{}", report);
        let report = validate_dataset(&cfg, &data);
        prop_assert!(report.is_pass(), "{}", report);
        let (_, again) = simulate_experiment(&design, &mut ChaCha8Rng::seed_from_u64(sim_seed)).unwrap();
        let bits = |d: &paleo_bhm::Dataset| -> Vec<u64> { d.panel.values.iter().map(|x| x.to_bits()).collect() };
        prop_assert_eq!(bits(&data), bits(&again));
        prop_assert_eq!(data.instrumental.obs.as_slice(), again.instrumental.obs.as_slice());
    }

    #[test]
    fn staircase_masks_only_gain_proxies_forward(
        starts in prop::collection::vec(1800..1900i32, 1..8),
        first in 1780..1820i32,
        len in 1usize..150,
    ) {
        let years: Vec<i32> = (first..first + len as i32).collect();
        let mask = staircase_mask(&starts, &years);
        for i in 0..starts.len() {
            for t in 1..len {
                prop_assert!(!mask[(t - 1, i)] || mask[(t, i)]);
            }
        }
    }

    #[test]
    fn attenuation_factor_is_monotone_and_bounded(
        gamma in prop_oneof![-3.0..-0.05f64, 0.05..3.0f64],
        s in 0.01..10.0f64,
        n in 0.01..10.0f64,
        ds in 0.01..5.0f64,
        dn in 0.01..5.0f64,
    ) {
        let l = attenuation_factor(gamma, s, n).unwrap();
        prop_assert!(l > 0.0 && l <= 1.0);
        prop_assert!(attenuation_factor(gamma, s + ds, n).unwrap() > l);
        prop_assert!(attenuation_factor(gamma, s, n + dn).unwrap() < l);
        prop_assert_eq!(attenuation_factor(gamma, s, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn collinear_ols_designs_error(seed in any::<u64>(), k in 0.5..2.0f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let years: Vec<i32> = (0..n as i32).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = DMatrix::from_fn(n, 3, |t, i| match i {
            0 => x[t],
            1 => z[t],
            _ => k * x[t] - 0.5 * z[t] + 2.0,
        });
        let panel = ProxyPanel { ids: vec!["a".into(), "b".into(), "c".into()], values, mask: DMatrix::from_element(n, 3, true), footprints: DMatrix::from_element(3, 1, 1.0) };
        let target: Vec<f64> = (0..n).map(|t| x[t] + rng.random_range(-0.1..0.1)).collect();
        let err = fit_direct(&panel, &years, &target, (0, n as i32 - 1), &[0, 1, 2], 0.0);
        prop_assert!(matches!(err, Err(Error::SingularDesign(_))), "{:?}", err);
        prop_assert!(fit_direct(&panel, &years, &target, (0, n as i32 - 1), &[0, 1, 2], 0.1).is_ok());
    }

    #[test]
    fn univariate_direct_fit_shrinks_variance(seed in any::<u64>(), noise in 0.0..3.0f64) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let years: Vec<i32> = (0..n as i32).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = DMatrix::from_fn(n, 1, |t, _| 0.7 * target[t] + noise * rng.random_range(-1.0..1.0));
        let panel = ProxyPanel { ids: vec!["a".into()], values, mask: DMatrix::from_element(n, 1, true), footprints: DMatrix::from_element(1, 1, 1.0) };
        let model = fit_direct(&panel, &years, &target, (0, n as i32 - 1), &[0], 0.0).unwrap();
        let pred = predict_direct(&model, &panel, &years, &years).unwrap();
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        prop_assert!(var(&pred) <= var(&target) * (1.0 + 1e-12));
    }

    #[test]
    fn rmse_obeys_the_triangle_inequality((a, b, c) in (1usize..60).prop_flat_map(triple)) {
        let (ab, bc, ac) = (rmse(&a, &b).unwrap(), rmse(&b, &c).unwrap(), rmse(&a, &c).unwrap());
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - rmse(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn correlation_ignores_positive_affine_maps(
        (a, b) in (3usize..60).prop_flat_map(|n| (series(n), series(n))),
        scale in 0.01..100.0f64,
        shift in -100.0..100.0f64,
    ) {
        if let Some(r) = correlation(&a, &b) {
            let mapped: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            let r2 = correlation(&mapped, &b).unwrap();
            prop_assert!((r - r2).abs() < 1e-12, "{} vs {}", r, r2);
            let r3 = correlation(&b, &mapped).unwrap();
            prop_assert!((r - r3).abs() < 1e-12);
            prop_assert!(r.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn coverage_is_monotone_in_level(
        seed in any::<u64>(),
        n_draws in 1usize..80,
        l1 in 0.01..0.99f64,
        l2 in 0.01..0.99f64,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let draws: Vec<Vec<f64>> = (0..n_draws).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-1.2..1.2)).collect();
        let store = common::store_of(draws);
        let window: Vec<usize> = (0..n).collect();
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = interval_coverage(&store, &truth, &window, lo).unwrap();
        let b = interval_coverage(&store, &truth, &window, hi).unwrap();
        prop_assert!(a.rate <= b.rate);
        for (x, y) in a.covered.iter().zip(&b.covered) {
            prop_assert!(!x.1 || y.1);
        }
        let sample = store.nh_at(0);
        let (ilo, ihi) = central_interval(sample.clone(), lo);
        let (olo, ohi) = central_interval(sample, hi);
        prop_assert!(olo <= ilo && ihi <= ohi);
    }
}
