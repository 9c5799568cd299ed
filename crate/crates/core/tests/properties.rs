mod common;

use localvar::adaptive::{detect, IntervalGrid};
use localvar::calibrate::{CalibrationConfig, Calibrator};
use localvar::crisis::{aggregate, crisis_indicator, global_mean_closed_form, Aggregation};
use localvar::fevd::gfevd;
use localvar::scenarios::{generate_scenario, table4_theta1, ScenarioSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gfevd_rows_are_stochastic(seed in 0u64..10_000, h in 1usize..30) {
        let p = common::random_stable_var1(&mut ChaCha8Rng::seed_from_u64(seed));
        let t = gfevd(&p, h).unwrap();
        for i in 0..2 {
            prop_assert!((t.normalized.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(t.normalized.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        prop_assert!((0.0..=100.0).contains(&t.total));
    }

    #[test]
    fn crisis_indicator_decreases_in_k(k_max in 2usize..12) {
        let v: Vec<f64> = (1..=k_max).map(|k| crisis_indicator(k, k_max).unwrap()).collect();
        prop_assert_eq!(v[0], 1.0);
        prop_assert_eq!(v[k_max - 1], 0.0);
        prop_assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn mean_matches_closed_form(ks in prop::collection::vec(1usize..=6, 1..40)) {
        let vals: Vec<_> = ks.iter().map(|&k| Some(crisis_indicator(k, 6).unwrap())).collect();
        let mean = aggregate(&vals, Aggregation::Mean).unwrap();
        prop_assert!((mean - global_mean_closed_form(&ks, 6).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&mean));
    }
}

#[test]
fn critical_values_shrink_as_rho_grows() {
    let cfg = CalibrationConfig::new(table4_theta1(), IntervalGrid::default_monthly(), 0.5, 0.5)
        .with_samples(2_000)
        .with_seed(17);
    let cal = Calibrator::new(&cfg).unwrap();
    let rhos = [0.02, 0.05, 0.088, 0.2, 0.5, 0.8, 1.0];
    let finals: Vec<f64> = rhos.iter().map(|&r| cal.solve(r).unwrap().zeta(7).unwrap()).collect();
    for w in finals.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{finals:?}");
    }
    let firsts: Vec<f64> = rhos.iter().map(|&r| cal.solve(r).unwrap().zeta(2).unwrap()).collect();
    for w in firsts.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{firsts:?}");
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = CalibrationConfig::new(table4_theta1(), IntervalGrid::default_monthly(), 0.5, 0.088)
                .with_samples(500)
                .with_seed(4);
            let cv = Calibrator::new(&cfg).unwrap().solve(0.088).unwrap();
            let panel = generate_scenario(&ScenarioSpec::standard(1, 2).unwrap(), 3).unwrap();
            let res = detect(&panel, &cfg.grid, &cv, 0.5, 1, true).unwrap();
            let ks: Vec<usize> = res.iter().map(|r| r.k_hat).collect();
            (cv.to_json().unwrap(), ks)
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
}
