mod common;

use localvar::fevd::{gfevd, gfevd_with, SigmaNormalizer};
use localvar::scenarios::table4_theta1;
use localvar::VarParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PATHS: usize = 100_000;
const TOL: f64 = 0.02;

fn max_gap(params: &VarParams, seed: u64) -> f64 {
    let analytic = gfevd(params, 12).unwrap().normalized;
    let mc = common::mc_gfevd(params, 12, PATHS, seed);
    (analytic - mc).abs().max()
}

#[test]
fn analytic_table_matches_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases: Vec<VarParams> = (0..5).map(|_| common::random_stable_var1(&mut rng)).collect();
    cases.push(table4_theta1());
    for (i, p) in cases.iter().enumerate() {
        let gap = max_gap(p, 100 + i as u64);
        assert!(gap < TOL, "case {i}: max deviation {gap}");
        let t = gfevd(p, 12).unwrap();
        for r in 0..2 {
            assert!((t.normalized.row(r).sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn standard_deviation_reading_disagrees_with_simulation() {
    // Σ with unequal variances separates the two normalizer readings.
    let p = VarParams::var1(&[0.0, 0.0], &[0.5, 0.2, 0.1, 0.4], &[9.0, 0.6, 0.6, 0.25]).unwrap();
    let mc = common::mc_gfevd(&p, 12, PATHS, 7);
    let var = gfevd_with(&p, 12, SigmaNormalizer::Variance).unwrap().normalized;
    let sd = gfevd_with(&p, 12, SigmaNormalizer::StdDev).unwrap().normalized;
    assert!((&var - &mc).abs().max() < TOL);
    assert!((&sd - &mc).abs().max() > 5.0 * TOL);
}

#[test]
fn cholesky_ordering_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = common::random_stable_var1(&mut rng);
    let t = gfevd(&p, 12).unwrap().normalized;
    let q = gfevd(&p.permuted(&[1, 0]).unwrap(), 12).unwrap().normalized;
    for i in 0..2 {
        for j in 0..2 {
            assert!((t[(i, j)] - q[(1 - i, 1 - j)]).abs() < 1e-12);
        }
    }
}
