mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vcdown::inference::{FitMethod, TemporalKind};
use vcdown::*;

fn brute_nearest(domain: &SpatialDomain, p: [f64; 2]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, q) in domain.locations().iter().enumerate() {
        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn plugin(model: ModelSpec, params: ParamVector) -> FitResult {
    FitResult {
        model,
        estimates: params,
        loglik: 0.0,
        iterations: 0,
        converged: true,
        elapsed_seconds: 0.0,
        method: FitMethod::MlExact,
        backend: Backend::Exact,
        jitter: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coarse_cells_partition_the_fine_grid(coarse in 2usize..8, k in 1usize..4, width in 0.5f64..50.0) {
        let pair = build_grids(&GridSpec::new(Extent::square(0.0, width), coarse * k, coarse)).unwrap();
        let mut seen = vec![0; pair.fine.len()];
        for (s, members) in pair.map.coarse_to_fine.iter().enumerate() {
            prop_assert_eq!(members.len(), k * k);
            for &w in members {
                seen[w] += 1;
                prop_assert_eq!(pair.map.fine_to_coarse[w], s);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn nearest_node_matches_brute_force(nx in 1usize..12, ny in 1usize..12, x in -1.0f64..11.0, y in -1.0f64..11.0) {
        let d = SpatialDomain::lattice(Extent::square(0.0, 10.0), nx, ny).unwrap();
        let got = nearest_in(&d, [x, y]);
        let want = brute_nearest(&d, [x, y]);
        let dist = |i: usize| (d.location(i)[0] - x).hypot(d.location(i)[1] - y);
        prop_assert!((dist(got) - dist(want)).abs() < 1e-12);
    }

    #[test]
    fn kernels_decrease_with_distance(range in 0.01f64..10.0, sd in 0.1f64..3.0, nu in 0.2f64..3.0, a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        for k in [KernelParams::matern(range, sd, nu), KernelParams::exponential(range, sd)] {
            let c0 = kernel_eval(&k, 0.0).unwrap();
            prop_assert!((c0 - sd * sd).abs() <= 1e-12 * sd * sd);
            let cn = kernel_eval(&k, near).unwrap();
            let cf = kernel_eval(&k, far).unwrap();
            prop_assert!(cf <= cn * (1.0 + 1e-12) + 1e-300);
            prop_assert!(cf >= 0.0);
        }
    }

    #[test]
    fn half_integer_matern_matches_closed_form(range in 0.05f64..5.0, d in 0.0f64..10.0, pick in 0usize..3) {
        let nu = [0.5, 1.5, 2.5][pick];
        let k = KernelParams::matern(range, 1.0, nu);
        let got = kernel_eval(&k, d).unwrap();
        prop_assert!((got - common::correlation(&k, d)).abs() <= 1e-12);
    }

    #[test]
    fn tapered_is_dense_times_taper(side in 2usize..9, range in 0.05f64..3.0, taper in 0.1f64..6.0) {
        let d = SpatialDomain::lattice(Extent::square(0.0, 5.0), side, side).unwrap();
        let k = KernelParams::matern(range, 1.3, 1.0);
        let t = TaperSpec::wendland1(taper);
        let dense = cov_matrix(&d, &k).unwrap();
        let sparse = cov_tapered(&d, &k, &t).unwrap();
        for i in 0..d.len() {
            for j in 0..d.len() {
                let want = dense.get(i, j) * taper_eval(&t, d.distance(i, j)).unwrap();
                prop_assert!((sparse.get(i, j) - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn hadamard_rank1_scales_entries(side in 2usize..6, xs in prop::collection::vec(-3.0f64..3.0, 36)) {
        let d = SpatialDomain::lattice(Extent::square(0.0, 1.0), side, side).unwrap();
        let n = d.len();
        let base = cov_matrix(&d, &KernelParams::exponential(0.3, 1.0)).unwrap();
        let x = &xs[..n];
        let h = hadamard_rank1(&base, x).unwrap();
        // Permuting locations permutes the product the same way.
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((h.get(i, j) - base.get(i, j) * x[i] * x[j]).abs() <= 1e-14);
                let permuted = base.get(perm[i], perm[j]) * xp[i] * xp[j];
                prop_assert!((h.get(perm[i], perm[j]) - permuted).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn ar1_at_zero_is_iid(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = common::random_domain(&mut rng, 40);
        let times = common::random_times(&mut rng, 3);
        let response = common::random_field(&mut rng, &times, domain.len());
        let data = ModelData::new(domain.clone(), response, vec![]).unwrap();
        let k = common::random_kernel(&mut rng, domain.diameter());
        let iid = ParamVector { beta0: 0.3, beta1: vec![], theta0: Some(k), theta1: None, tau_sq: 0.2, rho_ar: None };
        let ar = ParamVector { rho_ar: Some(0.0), ..iid.clone() };
        let m1 = ModelSpec::m1().with_kernel(k.family, k.smoothness);
        let m2 = ModelSpec::m2().with_kernel(k.family, k.smoothness);
        let a = loglik_exact(&m1, &iid, &data).unwrap();
        let b = loglik_exact(&m2, &ar, &data).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn back_transform_keeps_interval_order(values in prop::collection::vec((-5.0f64..5.0, 0.0f64..2.0), 1..20)) {
        let mean: Vec<f64> = values.iter().map(|v| v.0).collect();
        let pred = PredictionResult {
            times: vec![1],
            locations: (0..mean.len()).collect(),
            coords: vec![[0.0, 0.0]; mean.len()],
            lower: values.iter().map(|v| v.0 - v.1).collect(),
            upper: values.iter().map(|v| v.0 + v.1).collect(),
            variance: values.iter().map(|v| v.1 * v.1).collect(),
            mean,
            level: 0.95,
            scale: Scale::Model,
        };
        let phys = back_transform(&pred).unwrap();
        prop_assert_eq!(phys.scale, Scale::Physical);
        for i in 0..phys.len() {
            prop_assert!(phys.lower[i] > 0.0);
            prop_assert!(phys.lower[i] <= phys.mean[i] && phys.mean[i] <= phys.upper[i]);
        }
        prop_assert!(back_transform(&phys).is_err());
    }

    #[test]
    fn interval_score_bounds(cases in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0), 1..30), pick in 0usize..4) {
        let level = [0.5, 0.8, 0.9, 0.95][pick];
        let y: Vec<f64> = cases.iter().map(|c| c.0).collect();
        let lo: Vec<f64> = cases.iter().map(|c| c.1).collect();
        let hi: Vec<f64> = cases.iter().map(|c| c.1 + c.2).collect();
        let width = hi.iter().zip(&lo).map(|(u, l)| u - l).sum::<f64>() / y.len() as f64;
        let is = interval_score(&y, &lo, &hi, level).unwrap();
        prop_assert!(is >= width - 1e-12);
        // Widening every interval to cover its observation cannot raise the score.
        let lo2: Vec<f64> = lo.iter().zip(&y).map(|(l, y)| l.min(*y)).collect();
        let hi2: Vec<f64> = hi.iter().zip(&y).map(|(u, y)| u.max(*y)).collect();
        let covered = interval_score(&y, &lo2, &hi2, level).unwrap();
        prop_assert!(covered <= is + 1e-12);
        let w2 = hi2.iter().zip(&lo2).map(|(u, l)| u - l).sum::<f64>() / y.len() as f64;
        prop_assert!((covered - w2).abs() <= 1e-12);
    }

    #[test]
    fn forecast_variance_exceeds_nugget(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = common::random_instance(&mut rng, 30, 90, false);
        let n = inst.data.n_locations();
        let last = *inst.data.times().last().unwrap();
        let t_star = vec![last + 1, last + 3];
        let covariates: Vec<SpaceTimeField> = (0..inst.model.q).map(|_| common::random_field(&mut rng, &t_star, n)).collect();
        let fit = plugin(inst.model, inst.params.clone());
        let targets = TargetSet::all_locations(n, t_star, covariates);
        let pred = predict_response(Predictor::Plugin(&fit), &inst.data, &targets, &PredictOptions::default()).unwrap();
        for i in 0..pred.len() {
            prop_assert!(pred.variance[i] >= inst.params.tau_sq * (1.0 - 1e-10));
            prop_assert!(pred.lower[i] < pred.mean[i] && pred.mean[i] < pred.upper[i]);
        }
    }
}

#[test]
fn ar1_model_shapes_are_checked() {
    let p = ParamVector {
        beta0: 0.0,
        beta1: vec![],
        theta0: Some(KernelParams::exponential(1.0, 1.0)),
        theta1: None,
        tau_sq: 0.1,
        rho_ar: None,
    };
    assert!(p.validate_for(&ModelSpec::m1()).is_ok());
    assert!(p.validate_for(&ModelSpec::m2()).is_err());
    assert_eq!(ModelSpec::m2().temporal, TemporalKind::Ar1);
}

/// Posterior-predictive intervals carry parameter uncertainty, so they are usually wider than plug-in ones.
#[test]
fn posterior_intervals_are_wider_than_plugin() {
    let domain = SpatialDomain::lattice(Extent::square(0.0, 1.0), 6, 6).unwrap();
    let kernel = KernelParams::exponential(0.3, 1.0);
    let mut wider = 0;
    for rep in 0..10u64 {
        let mut field = sample_gp(&domain, &kernel, &TemporalStructure::Iid, 3, 500 + rep).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(rep);
        let noise = common::random_field(&mut rng, field.times(), domain.len());
        for (v, e) in field.values_mut().iter_mut().zip(noise.values()) {
            *v += 0.3 * e;
        }
        let data = ModelData::new(domain.clone(), field, vec![]).unwrap();
        let model = ModelSpec::m1().with_kernel(KernelFamily::Exponential, 0.5);
        let ml = fit_ml(&model, &data, Backend::Exact, &Default::default()).unwrap();
        let chain = ChainConfig {
            draws: 2000,
            burn_in: 1000,
            seed: rep,
            start: Some(ml.estimates.clone()),
            ..ChainConfig::default()
        };
        // The default sd calibration (P(sigma > 0.32) = 0.01) would shrink this unit-variance field.
        let prior = PriorSpec {
            range_median: 0.5,
            sd_threshold: 5.0,
            ..PriorSpec::default()
        };
        let draws = mcmc_fit(&model, &data, &prior, Backend::Exact, &chain).unwrap();
        let targets = TargetSet::all_locations(data.n_locations(), vec![4], vec![]);
        let options = PredictOptions {
            posterior_draws: 50,
            ..PredictOptions::default()
        };
        let a = predict_response(Predictor::Plugin(&ml), &data, &targets, &options).unwrap();
        let b = predict_response(Predictor::Posterior(&draws), &data, &targets, &options).unwrap();
        let width = |p: &PredictionResult| p.upper.iter().zip(&p.lower).map(|(u, l)| u - l).sum::<f64>();
        if width(&b) > width(&a) {
            wider += 1;
        }
    }
    assert!(wider >= 8, "posterior wider in {wider}/10");
}
