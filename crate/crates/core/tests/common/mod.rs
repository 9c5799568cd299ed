#![allow(dead_code)]

use localvar::panel::{TimeLabel, TimeSeriesPanel};
use localvar::VarParams;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Generalized FEVD estimated by simulation: for every path draw H shocks, push them
/// through the VAR from a zero state and regress the H-step forecast error of series i
/// on each shock sequence of series j. Returns the row-normalized table.
pub fn mc_gfevd(params: &VarParams, horizon: usize, paths: usize, seed: u64) -> DMatrix<f64> {
    let d = params.dim();
    let p = params.order();
    let chol = params.sigma().clone().cholesky().expect("positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut s_fe = vec![0.0; d];
    let mut s_fe2 = vec![0.0; d];
    // indexed [h][j]
    let mut s_u = vec![vec![0.0; d]; horizon];
    let mut s_u2 = vec![vec![0.0; d]; horizon];
    // indexed [h][i][j]
    let mut s_fu = vec![vec![vec![0.0; d]; d]; horizon];

    let mut shocks = vec![DVector::zeros(d); horizon];
    for _ in 0..paths {
        let mut hist: Vec<DVector<f64>> = vec![DVector::zeros(d); p];
        for u in shocks.iter_mut() {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            *u = &chol * z;
            let mut y = u.clone();
            for (s, phi) in params.lags().iter().enumerate() {
                y += phi * &hist[s];
            }
            hist.insert(0, y);
            hist.truncate(p);
        }
        let fe = &hist[0];
        for i in 0..d {
            s_fe[i] += fe[i];
            s_fe2[i] += fe[i] * fe[i];
        }
        for (h, u) in shocks.iter().enumerate() {
            for j in 0..d {
                s_u[h][j] += u[j];
                s_u2[h][j] += u[j] * u[j];
                for i in 0..d {
                    s_fu[h][i][j] += fe[i] * u[j];
                }
            }
        }
    }
    let n = paths as f64;
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let var_fe = s_fe2[i] / n - (s_fe[i] / n).powi(2);
        for j in 0..d {
            let mut explained = 0.0;
            for h in 0..horizon {
                let cov = s_fu[h][i][j] / n - (s_fe[i] / n) * (s_u[h][j] / n);
                let var_u = s_u2[h][j] / n - (s_u[h][j] / n).powi(2);
                explained += cov * cov / var_u;
            }
            out[(i, j)] = explained / var_fe;
        }
        let row: f64 = out.row(i).sum();
        for j in 0..d {
            out[(i, j)] /= row;
        }
    }
    out
}

/// Random stable bivariate VAR(1) with a random positive-definite Σ.
pub fn random_stable_var1(rng: &mut ChaCha8Rng) -> VarParams {
    loop {
        let phi: Vec<f64> = (0..4).map(|_| rng.random_range(-0.8..0.8)).collect();
        let a: f64 = rng.random_range(0.3..3.0);
        let b = rng.random_range(0.3..3.0);
        let rho: f64 = rng.random_range(-0.7..0.7);
        let c = rho * (a * b).sqrt();
        let intercept = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        if let Ok(p) = VarParams::var1(&intercept, &phi, &[a, c, c, b]) {
            if p.spectral_radius() < 0.95 {
                return p;
            }
        }
    }
}

/// Relabels rows as consecutive months starting at `start`.
pub fn monthly(panel: &TimeSeriesPanel, start: TimeLabel, names: &[&str]) -> TimeSeriesPanel {
    let labels = (0..panel.len()).map(|t| start.advance(t as i64)).collect();
    TimeSeriesPanel::new(
        labels,
        panel.values().clone(),
        names.iter().map(|s| s.to_string()).collect(),
    )
    .unwrap()
}
