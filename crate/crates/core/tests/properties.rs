use proptest::prelude::*;

use evkit::dist::{gev_cdf, gev_quantile, gpd_cdf, gpd_quantile, sample_gevr, sample_gpd};
use evkit::estimation::{fit_gevr_mle, fit_gpd_mle, Method};
use evkit::inference::{gev_return_level, profile_likelihood_ci, semiparametric_bootstrap, ProfileData, Target};
use evkit::rng::rng_from_seed;
use evkit::sequential::{
    decluster_top_r, forward_stop, forward_stop_path, strong_stop, strong_stop_path, unadjusted_stop, StoppingRule,
};
use evkit::simkit::{run_experiment, RfaTruth, SchemeSpec, Subject, SubjectTest};
use evkit::{GevParams, GpdParams};

fn shape() -> impl Strategy<Value = f64> {
    -0.8f64..0.8
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gevr_rows_strictly_decrease(n in 1usize..40, r in 1usize..8, mu in -5.0f64..5.0, sigma in 0.1f64..5.0, xi in shape(), seed: u64) {
        let p = GevParams::new(mu, sigma, xi).unwrap();
        let s = sample_gevr(n, r, &p, &mut rng_from_seed(seed)).unwrap();
        for row in s.rows() {
            prop_assert!(row.windows(2).all(|w| w[0] > w[1]), "{:?}", row);
        }
    }

    #[test]
    fn gev_quantile_round_trip(u in 1e-6f64..(1.0 - 1e-6), mu in -5.0f64..5.0, sigma in 0.1f64..5.0, xi in shape()) {
        let p = GevParams::new(mu, sigma, xi).unwrap();
        let y = gev_quantile(u, &p).unwrap();
        prop_assert!((gev_cdf(y, &p) - u).abs() < 1e-10);
    }

    #[test]
    fn gpd_quantile_round_trip(u in 1e-6f64..(1.0 - 1e-6), sigma in 0.1f64..5.0, xi in shape()) {
        let p = GpdParams::new(sigma, xi).unwrap();
        let y = gpd_quantile(u, &p).unwrap();
        prop_assert!((gpd_cdf(y, &p) - u).abs() < 1e-10);
    }

    #[test]
    fn return_level_is_the_quantile(t in 1.01f64..1e4, mu in -5.0f64..5.0, sigma in 0.1f64..5.0, xi in shape()) {
        let p = GevParams::new(mu, sigma, xi).unwrap();
        let a = gev_return_level(t, &p).unwrap();
        let b = gev_quantile(1.0 - 1.0 / t, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn stopping_rules_reject_a_prefix(p in prop::collection::vec(0.0f64..=1.0, 1..30), alpha in 0.001f64..0.5) {
        let m = p.len();
        let kf = forward_stop(&p, alpha).unwrap();
        let ks = strong_stop(&p, alpha).unwrap();
        let ku = unadjusted_stop(&p, alpha);
        prop_assert!(kf <= m && ks <= m && ku <= m);
        // k_hat is the last index meeting the rule, so no later index meets it
        let fs = forward_stop_path(&p);
        prop_assert!(fs.iter().skip(kf).all(|&v| v > alpha));
        if kf > 0 { prop_assert!(fs[kf - 1] <= alpha); }
        let ss = strong_stop_path(&p);
        for k in ks..m {
            prop_assert!(ss[k] > alpha * (k + 1) as f64 / m as f64 * (1.0 - 1e-12));
        }
        prop_assert!(p[..ku].iter().all(|&v| v <= alpha));
        for rule in [StoppingRule::ForwardStop, StoppingRule::StrongStop, StoppingRule::Unadjusted] {
            let k = rule.apply(&p, alpha).unwrap();
            prop_assert_eq!(k, match rule { StoppingRule::ForwardStop => kf, StoppingRule::StrongStop => ks, StoppingRule::Unadjusted => ku });
        }
    }

    #[test]
    fn forward_stop_grows_with_alpha(p in prop::collection::vec(0.0f64..=1.0, 1..30), a in 0.001f64..0.3, d in 0.0f64..0.3) {
        prop_assert!(forward_stop(&p, a).unwrap() <= forward_stop(&p, a + d).unwrap());
        prop_assert!(strong_stop(&p, a).unwrap() <= strong_stop(&p, a + d).unwrap());
    }

    #[test]
    fn declustered_rows_decrease(values in prop::collection::vec(0.0f64..100.0, 30..200), r in 1usize..4, tau in 0.0f64..6.0) {
        let labels: Vec<i64> = (0..values.len()).map(|i| (i / 30) as i64).collect();
        let d = decluster_top_r(&values, &labels, r, tau).unwrap();
        for row in &d.rows {
            prop_assert_eq!(row.len(), r);
            prop_assert!(row.windows(2).all(|w| w[0] > w[1]));
        }
    }
}

#[test]
fn profile_intervals_nest() {
    let fixtures: Vec<(GevParams, usize, u64)> = vec![
        (GevParams::new(0.0, 1.0, 0.1).unwrap(), 1, 1),
        (GevParams::new(10.0, 2.0, -0.2).unwrap(), 3, 2),
        (GevParams::new(0.0, 1.0, 0.3).unwrap(), 5, 3),
    ];
    for (p, r, seed) in fixtures {
        let s = sample_gevr(80, r, &p, &mut rng_from_seed(seed)).unwrap();
        let f = fit_gevr_mle(&s, None).unwrap();
        for target in [Target::Shape, Target::ReturnLevel { period: 50.0 }] {
            let a = profile_likelihood_ci(ProfileData::Gevr(&s), &f, &target, 0.90).unwrap();
            let b = profile_likelihood_ci(ProfileData::Gevr(&s), &f, &target, 0.95).unwrap();
            let (al, ah, bl, bh) = (a.ci_low.unwrap(), a.ci_high.unwrap(), b.ci_low.unwrap(), b.ci_high.unwrap());
            assert!(bl <= al && al <= a.estimate && a.estimate <= ah && ah <= bh, "{target:?}: [{bl}, {bh}] vs [{al}, {ah}]");
        }
    }
    for seed in 4..7 {
        let y = sample_gpd(150, &GpdParams::new(1.0, 0.15).unwrap(), &mut rng_from_seed(seed));
        let f = fit_gpd_mle(&y).unwrap();
        let rate = 0.1;
        let t = Target::GpdReturnLevel { period: 100.0, threshold: 2.0, obs_per_year: 365.0, rate };
        for target in [Target::Shape, t] {
            let a = profile_likelihood_ci(ProfileData::Excesses(&y), &f, &target, 0.90).unwrap();
            let b = profile_likelihood_ci(ProfileData::Excesses(&y), &f, &target, 0.95).unwrap();
            assert!(b.ci_low.unwrap() <= a.ci_low.unwrap() && a.ci_high.unwrap() <= b.ci_high.unwrap());
        }
    }
}

#[test]
fn bootstrap_is_deterministic() {
    let truth = RfaTruth::generate(4, 12, 41);
    let spec = truth.spec().unwrap();
    let y = truth.simulate(Some(6.0), 42).unwrap();
    let a = semiparametric_bootstrap(&y, &spec, Method::Mps, 12, 7).unwrap();
    let b = semiparametric_bootstrap(&y, &spec, Method::Mps, 12, 7).unwrap();
    assert_eq!(a.replicates, b.replicates);
    let c = semiparametric_bootstrap(&y, &spec, Method::Mps, 12, 8).unwrap();
    assert_ne!(a.replicates, c.replicates);
}

#[test]
fn experiments_do_not_depend_on_thread_count() {
    let scheme = SchemeSpec::PureGpd { n: 100, gpd: GpdParams::new(1.0, 0.25).unwrap() };
    let subject = Subject::Test { test: SubjectTest::Moran };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&scheme, &subject, 200, 0.05, 9).unwrap())
    };
    assert_eq!(run(1), run(3));
    let regional = SchemeSpec::GaussianCopulaSites { m: 4, n: 10, phi: Some(6.0) };
    let est = Subject::Estimators { methods: vec![Method::Mps] };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&regional, &est, 100, 0.05, 9).unwrap())
    };
    assert_eq!(run(1), run(2));
}
