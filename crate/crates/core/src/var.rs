//! Gaussian VAR(p) models on sub-intervals of a panel: estimation, local
//! log-likelihood, likelihood-ratio statistics, simulation and stability.

use nalgebra::{Cholesky, DMatrix, DVector, Schur};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::TimeSeriesPanel;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SYMMETRY_TOL: f64 = 1e-10;
const STABILITY_MARGIN: f64 = 1e-10;

/// Parameter set of a VAR(p): intercept, lag matrices and noise covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VarParamsDoc", into = "VarParamsDoc")]
pub struct VarParams {
    intercept: DVector<f64>,
    lags: Vec<DMatrix<f64>>,
    sigma: DMatrix<f64>,
}

/// JSON layout: `{d, p, intercept, lags: [matrix…], sigma}` with row-major matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct VarParamsDoc {
    d: usize,
    p: usize,
    intercept: Vec<f64>,
    lags: Vec<Vec<Vec<f64>>>,
    sigma: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::BadDimension(format!("{what} must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl From<VarParams> for VarParamsDoc {
    fn from(p: VarParams) -> Self {
        VarParamsDoc {
            d: p.dim(),
            p: p.order(),
            intercept: p.intercept.iter().copied().collect(),
            lags: p.lags.iter().map(rows_of).collect(),
            sigma: rows_of(&p.sigma),
        }
    }
}

impl TryFrom<VarParamsDoc> for VarParams {
    type Error = Error;

    fn try_from(doc: VarParamsDoc) -> Result<Self> {
        if doc.lags.len() != doc.p {
            return Err(Error::BadDimension(format!(
                "p = {} but {} lag matrices given",
                doc.p,
                doc.lags.len()
            )));
        }
        if doc.intercept.len() != doc.d {
            return Err(Error::BadDimension(format!("intercept must have length {}", doc.d)));
        }
        let lags = doc
            .lags
            .iter()
            .map(|m| matrix_from_rows(m, doc.d, "lag matrix"))
            .collect::<Result<Vec<_>>>()?;
        let sigma = matrix_from_rows(&doc.sigma, doc.d, "sigma")?;
        VarParams::new(DVector::from_vec(doc.intercept), lags, sigma)
    }
}

impl VarParams {
    pub fn new(intercept: DVector<f64>, lags: Vec<DMatrix<f64>>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = intercept.len();
        if d == 0 {
            return Err(Error::BadDimension("dimension must be at least 1".into()));
        }
        if lags.is_empty() {
            return Err(Error::InvalidParams("lag order must be at least 1".into()));
        }
        if lags.iter().any(|m| m.shape() != (d, d)) || sigma.shape() != (d, d) {
            return Err(Error::BadDimension(format!("all matrices must be {d}x{d}")));
        }
        let all = intercept.iter().chain(sigma.iter()).chain(lags.iter().flat_map(|m| m.iter()));
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter value".into()));
        }
        if (&sigma - sigma.transpose()).amax() > SYMMETRY_TOL {
            return Err(Error::InvalidParams("sigma is not symmetric".into()));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(Error::NonPositiveDefiniteSigma);
        }
        Ok(VarParams {
            intercept,
            lags,
            sigma,
        })
    }

    /// Builds a VAR(1) from row-major slices; mostly a convenience for tests and defaults.
    pub fn var1(intercept: &[f64], phi: &[f64], sigma: &[f64]) -> Result<Self> {
        let d = intercept.len();
        if phi.len() != d * d || sigma.len() != d * d {
            return Err(Error::BadDimension(format!("expected {} matrix entries", d * d)));
        }
        VarParams::new(
            DVector::from_column_slice(intercept),
            vec![DMatrix::from_row_slice(d, d, phi)],
            DMatrix::from_row_slice(d, d, sigma),
        )
    }

    pub fn dim(&self) -> usize {
        self.intercept.len()
    }

    pub fn order(&self) -> usize {
        self.lags.len()
    }

    pub fn intercept(&self) -> &DVector<f64> {
        &self.intercept
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn with_sigma(&self, sigma: DMatrix<f64>) -> Result<Self> {
        VarParams::new(self.intercept.clone(), self.lags.clone(), sigma)
    }

    pub fn with_intercept(&self, intercept: DVector<f64>) -> Result<Self> {
        VarParams::new(intercept, self.lags.clone(), self.sigma.clone())
    }

    /// The (d·p)×(d·p) companion matrix.
    pub fn companion(&self) -> DMatrix<f64> {
        let d = self.dim();
        let p = self.order();
        let mut c = DMatrix::zeros(d * p, d * p);
        for (s, phi) in self.lags.iter().enumerate() {
            c.view_mut((0, s * d), (d, d)).copy_from(phi);
        }
        for i in d..d * p {
            c[(i, i - d)] = 1.0;
        }
        c
    }

    pub fn spectral_radius(&self) -> f64 {
        let c = self.companion();
        match Schur::try_new(c, f64::EPSILON, 10_000) {
            Some(schur) => schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max),
            None => f64::INFINITY,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0 - STABILITY_MARGIN
    }

    /// (I − Σφ_s)⁻¹ φ₀, when the inverse exists.
    pub fn unconditional_mean(&self) -> Option<DVector<f64>> {
        let d = self.dim();
        let mut a = DMatrix::identity(d, d);
        for phi in &self.lags {
            a -= phi;
        }
        a.lu().solve(&self.intercept)
    }

    /// One-step mean forecast given the most recent observations, newest first.
    pub fn forecast(&self, recent: &[DVector<f64>]) -> DVector<f64> {
        let mut y = self.intercept.clone();
        for (phi, x) in self.lags.iter().zip(recent) {
            y += phi * x;
        }
        y
    }

    /// Relabels the series: series `i` of the result is series `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.dim();
        if perm.len() != d {
            return Err(Error::BadDimension("permutation length".into()));
        }
        let pm = |m: &DMatrix<f64>| DMatrix::from_fn(d, d, |i, j| m[(perm[i], perm[j])]);
        VarParams::new(
            DVector::from_fn(d, |i, _| self.intercept[perm[i]]),
            self.lags.iter().map(pm).collect(),
            pm(&self.sigma),
        )
    }

    /// Elementwise (1 − w)·a + w·b over intercept, lags and sigma.
    pub fn interpolate(a: &VarParams, b: &VarParams, w: f64) -> Result<Self> {
        if a.dim() != b.dim() || a.order() != b.order() {
            return Err(Error::BadDimension("cannot interpolate between different shapes".into()));
        }
        let mix = |x: &DMatrix<f64>, y: &DMatrix<f64>| x * (1.0 - w) + y * w;
        VarParams::new(
            &a.intercept * (1.0 - w) + &b.intercept * w,
            a.lags.iter().zip(&b.lags).map(|(x, y)| mix(x, y)).collect(),
            mix(&a.sigma, &b.sigma),
        )
    }
}

/// A window of `length` fitted observations ending at (0-based) row `end`.
///
/// Fitting consumes `p` extra pre-sample rows before `start()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub end: usize,
    pub length: usize,
}

impl Interval {
    pub fn new(end: usize, length: usize) -> Self {
        Interval { end, length }
    }

    /// First fitted row. Only meaningful when `length <= end + 1`.
    pub fn start(&self) -> usize {
        self.end + 1 - self.length
    }

    fn check(&self, panel_len: usize, p: usize) -> Result<()> {
        if self.length == 0 {
            return Err(Error::IntervalTooShort { length: 0, min: 1 });
        }
        if self.end >= panel_len {
            return Err(Error::InsufficientHistory {
                end: self.end,
                length: self.length,
                needed: self.end + 1,
                available: panel_len,
            });
        }
        if self.end + 1 < self.length + p {
            return Err(Error::InsufficientHistory {
                end: self.end,
                length: self.length,
                needed: self.length + p,
                available: self.end + 1,
            });
        }
        Ok(())
    }
}

/// Shortest interval `fit_var` accepts: d·p + d + p + 2.
pub fn min_interval_length(d: usize, p: usize) -> usize {
    d * p + d + p + 2
}

#[derive(Debug, Clone)]
pub struct VarFit {
    pub params: VarParams,
    pub residuals: DMatrix<f64>,
    pub loglik: f64,
    pub interval: Interval,
}

fn response_and_design(values: &DMatrix<f64>, interval: Interval, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = values.ncols();
    let m = interval.length;
    let start = interval.start();
    let y = values.rows(start, m).into_owned();
    let mut x = DMatrix::zeros(m, 1 + d * p);
    for r in 0..m {
        let t = start + r;
        x[(r, 0)] = 1.0;
        for s in 1..=p {
            for c in 0..d {
                x[(r, 1 + (s - 1) * d + c)] = values[(t - s, c)];
            }
        }
    }
    (y, x)
}

/// Least-squares / Gaussian ML fit of a VAR(p) on `interval`.
pub fn fit_var(panel: &TimeSeriesPanel, interval: Interval, p: usize) -> Result<VarFit> {
    if p == 0 {
        return Err(Error::InvalidParams("lag order must be at least 1".into()));
    }
    let d = panel.dim();
    let min = min_interval_length(d, p);
    if interval.length < min {
        return Err(Error::IntervalTooShort {
            length: interval.length,
            min,
        });
    }
    interval.check(panel.len(), p)?;
    let (y, x) = response_and_design(panel.values(), interval, p);
    let m = interval.length;

    // a constant response column leaves nothing to estimate a variance from
    for c in 0..d {
        let col = y.column(c);
        let scale = col.amax().max(1.0);
        if col.max() - col.min() <= 1e-12 * scale {
            return Err(Error::DegenerateCovariance);
        }
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if rmax == 0.0 || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * rmax) {
        return Err(Error::SingularDesign);
    }
    let qty = qr.q().transpose() * &y;
    let b = r.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)?;
    let residuals = &y - &x * &b;
    let mut sigma = residuals.transpose() * &residuals / m as f64;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    if Cholesky::new(sigma.clone()).is_none() {
        return Err(Error::DegenerateCovariance);
    }

    let intercept = b.row(0).transpose();
    let lags = (0..p)
        .map(|s| b.rows(1 + s * d, d).transpose())
        .collect::<Vec<_>>();
    let params = VarParams::new(intercept, lags, sigma).map_err(|e| match e {
        Error::NonPositiveDefiniteSigma => Error::DegenerateCovariance,
        other => other,
    })?;
    let loglik = log_likelihood(panel, interval, &params)?;
    Ok(VarFit {
        params,
        residuals,
        loglik,
        interval,
    })
}

/// Residuals ε_v = y_v − φ₀ − Σ φ_s y_{v−s} over the interval (m×d).
pub fn residuals(panel: &TimeSeriesPanel, interval: Interval, params: &VarParams) -> Result<DMatrix<f64>> {
    if params.dim() != panel.dim() {
        return Err(Error::BadDimension(format!(
            "params have d={} but panel has d={}",
            params.dim(),
            panel.dim()
        )));
    }
    let p = params.order();
    interval.check(panel.len(), p)?;
    let values = panel.values();
    let d = panel.dim();
    let start = interval.start();
    let mut eps = DMatrix::zeros(interval.length, d);
    for r in 0..interval.length {
        let t = start + r;
        for i in 0..d {
            let mut e = values[(t, i)] - params.intercept[i];
            for (s, phi) in params.lags.iter().enumerate() {
                for j in 0..d {
                    e -= phi[(i, j)] * values[(t - s - 1, j)];
                }
            }
            eps[(r, i)] = e;
        }
    }
    Ok(eps)
}

/// Gaussian local log-likelihood over the interval:
/// −(m·d/2)·log 2π + (m/2)·log|Σ⁻¹| − ½ Σ_v ε_vᵀ Σ⁻¹ ε_v.
pub fn log_likelihood(panel: &TimeSeriesPanel, interval: Interval, params: &VarParams) -> Result<f64> {
    let eps = residuals(panel, interval, params)?;
    let chol = Cholesky::new(params.sigma.clone()).ok_or(Error::NonPositiveDefiniteSigma)?;
    let l = chol.l_dirty();
    let log_det: f64 = 2.0 * (0..params.dim()).map(|i| l[(i, i)].ln()).sum::<f64>();
    // L z = εᵀ, so Σ_v ε_vᵀ Σ⁻¹ ε_v = ‖z‖²
    let z = l
        .solve_lower_triangular(&eps.transpose())
        .ok_or(Error::NonPositiveDefiniteSigma)?;
    let quad = z.norm_squared();
    let m = interval.length as f64;
    let d = params.dim() as f64;
    Ok(-0.5 * m * d * LN_2PI - 0.5 * m * log_det - 0.5 * quad)
}

/// |ℓ(I, θ_local) − ℓ(I, θ_ref)|^r.
pub fn lr_statistic(
    panel: &TimeSeriesPanel,
    interval: Interval,
    theta_local: &VarParams,
    theta_ref: &VarParams,
    r: f64,
) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParams(format!("power r must be positive, got {r}")));
    }
    let a = log_likelihood(panel, interval, theta_local)?;
    let b = log_likelihood(panel, interval, theta_ref)?;
    Ok(powered(a - b, r))
}

#[inline]
pub(crate) fn powered(diff: f64, r: f64) -> f64 {
    diff.abs().powf(r)
}

pub fn is_stable(params: &VarParams) -> bool {
    params.is_stable()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOptions {
    /// Simulate even when the companion matrix has eigenvalues on or outside the unit circle.
    pub allow_unstable: bool,
}

/// Default number of discarded initial draws.
pub const DEFAULT_BURN_IN: usize = 100;

/// Simulates `n` observations after `burn_in` discarded draws, starting from the
/// unconditional mean. Identical seeds give bitwise identical panels.
pub fn simulate_var(params: &VarParams, n: usize, burn_in: usize, seed: u64) -> Result<TimeSeriesPanel> {
    simulate_var_with(params, n, burn_in, seed, SimulateOptions::default())
}

pub fn simulate_var_with(
    params: &VarParams,
    n: usize,
    burn_in: usize,
    seed: u64,
    opts: SimulateOptions,
) -> Result<TimeSeriesPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = simulate_segments(&[(params, n)], burn_in, opts, &mut rng)?;
    TimeSeriesPanel::from_matrix(values)
}

/// Simulates consecutive regimes without re-initialising the lagged state between them.
///
/// The burn-in runs under the first segment's parameters.
pub fn simulate_segments(
    segments: &[(&VarParams, usize)],
    burn_in: usize,
    opts: SimulateOptions,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidParams("no segments to simulate".into()))?
        .0;
    let d = first.dim();
    let p = first.order();
    let n: usize = segments.iter().map(|s| s.1).sum();
    if n == 0 {
        return Err(Error::InvalidParams("simulation length must be at least 1".into()));
    }
    for (params, _) in segments {
        if params.dim() != d || params.order() != p {
            return Err(Error::BadDimension("segments must share d and p".into()));
        }
        if !opts.allow_unstable && !params.is_stable() {
            return Err(Error::UnstableParams {
                spectral_radius: params.spectral_radius(),
            });
        }
    }
    let start = if first.is_stable() {
        first.unconditional_mean().unwrap_or_else(|| DVector::zeros(d))
    } else {
        DVector::zeros(d)
    };
    // newest first
    let mut recent: Vec<DVector<f64>> = vec![start; p];
    let mut out = DMatrix::zeros(n, d);

    let mut step = |params: &VarParams, chol_l: &DMatrix<f64>, rng: &mut ChaCha8Rng| {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let y = params.forecast(&recent) + chol_l * z;
        recent.rotate_right(1);
        recent[0] = y.clone();
        y
    };

    let factor = |params: &VarParams| -> Result<DMatrix<f64>> {
        Ok(Cholesky::new(params.sigma.clone())
            .ok_or(Error::NonPositiveDefiniteSigma)?
            .l())
    };

    let l0 = factor(first)?;
    for _ in 0..burn_in {
        step(first, &l0, rng);
    }
    let mut row = 0;
    for (params, len) in segments {
        let l = factor(params)?;
        for _ in 0..*len {
            let y = step(params, &l, rng);
            out.set_row(row, &y.transpose());
            row += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn theta1() -> VarParams {
        VarParams::var1(&[29.0, 132.0], &[0.71, 0.08, 0.13, 0.08], &[1.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(matches!(
            VarParams::var1(&[0.0], &[0.5], &[-1.0]),
            Err(Error::NonPositiveDefiniteSigma)
        ));
        assert!(matches!(
            VarParams::var1(&[0.0, 0.0], &[0.5, 0.0, 0.0, 0.5], &[1.0, 0.2, 0.1, 1.0]),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn stability_examples() {
        let half = VarParams::var1(&[0.0, 0.0], &[0.5, 0.0, 0.0, 0.5], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(half.is_stable());
        let unit = VarParams::var1(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(!unit.is_stable());
        // closed form for the 2x2 case: (tr ± sqrt(tr² − 4 det)) / 2
        let (tr, det): (f64, f64) = (0.71 + 0.08, 0.71 * 0.08 - 0.08 * 0.13);
        let oracle = (tr + (tr * tr - 4.0 * det).sqrt()) / 2.0;
        assert_abs_diff_eq!(oracle, 0.726, epsilon = 5e-4);
        assert_abs_diff_eq!(theta1().spectral_radius(), oracle, epsilon = 1e-12);
        assert!(is_stable(&theta1()));
    }

    #[test]
    fn companion_of_var2() {
        let p = VarParams::new(
            DVector::from_vec(vec![0.0]),
            vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.3)],
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let c = p.companion();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 1.0, 0.0]));
        // roots of z² − 0.5z − 0.3
        let oracle = (0.5 + (0.25f64 + 1.2).sqrt()) / 2.0;
        assert_abs_diff_eq!(p.spectral_radius(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn zero_residual_loglik_is_pure_constant() {
        // y_t = 1 + 0.5 y_{t-1} exactly; Σ = I
        let mut v = vec![2.0_f64];
        for _ in 0..12 {
            let last = *v.last().unwrap();
            v.push(1.0 + 0.5 * last);
        }
        let data = DMatrix::from_fn(13, 2, |r, _| v[r]);
        let panel = TimeSeriesPanel::from_matrix(data).unwrap();
        let params = VarParams::var1(&[1.0, 1.0], &[0.5, 0.0, 0.0, 0.5], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let ll = log_likelihood(&panel, Interval::new(12, 12), &params).unwrap();
        assert_abs_diff_eq!(ll, -12.0 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ll, -22.053, epsilon = 2e-3);
    }

    #[test]
    fn scalar_ar1_matches_standalone_formula() {
        let truth = VarParams::var1(&[0.3], &[0.6], &[2.0]).unwrap();
        let panel = simulate_var(&truth, 60, 10, 7).unwrap();
        let params = VarParams::var1(&[0.25], &[0.55], &[1.7]).unwrap();
        let iv = Interval::new(59, 40);
        let ll = log_likelihood(&panel, iv, &params).unwrap();
        // independent scalar oracle
        let y = panel.values().column(0);
        let (c, a, s2) = (0.25_f64, 0.55_f64, 1.7_f64);
        let mut oracle = 0.0;
        for t in iv.start()..=iv.end {
            let e = y[t] - c - a * y[t - 1];
            oracle += -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - e * e / (2.0 * s2);
        }
        assert_abs_diff_eq!(ll, oracle, epsilon = 1e-10);
    }

    #[test]
    fn constant_panel_is_degenerate() {
        let panel = TimeSeriesPanel::from_matrix(DMatrix::from_element(30, 2, 5.0)).unwrap();
        assert!(matches!(
            fit_var(&panel, Interval::new(29, 20), 1),
            Err(Error::DegenerateCovariance)
        ));
    }

    #[test]
    fn short_and_early_intervals_rejected() {
        let panel = simulate_var(&theta1(), 50, 10, 1).unwrap();
        assert!(matches!(
            fit_var(&panel, Interval::new(49, 6), 1),
            Err(Error::IntervalTooShort { min: 7, .. })
        ));
        assert!(matches!(
            fit_var(&panel, Interval::new(11, 12), 1),
            Err(Error::InsufficientHistory { .. })
        ));
        assert!(fit_var(&panel, Interval::new(12, 12), 1).is_ok());
    }

    #[test]
    fn collinear_series_is_singular_design() {
        let base = simulate_var(&theta1(), 40, 10, 3).unwrap();
        let data = DMatrix::from_fn(40, 2, |r, c| base.values()[(r, 0)] * if c == 0 { 1.0 } else { 2.0 });
        let panel = TimeSeriesPanel::from_matrix(data).unwrap();
        assert!(matches!(
            fit_var(&panel, Interval::new(39, 30), 1),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn fit_residuals_and_sigma_consistent() {
        let panel = simulate_var(&theta1(), 200, 50, 11).unwrap();
        let fit = fit_var(&panel, Interval::new(199, 150), 1).unwrap();
        let m = fit.residuals.nrows() as f64;
        let cov = fit.residuals.transpose() * &fit.residuals / m;
        assert!((cov - fit.params.sigma()).amax() < 1e-10);
        for c in 0..2 {
            let mean = fit.residuals.column(c).mean();
            assert!(mean.abs() < 1e-8, "column mean {mean}");
        }
        let ll = log_likelihood(&panel, fit.interval, &fit.params).unwrap();
        assert_eq!(ll, fit.loglik);
        let res = residuals(&panel, fit.interval, &fit.params).unwrap();
        assert!((res - &fit.residuals).amax() < 1e-8);
    }

    #[test]
    fn lr_identities() {
        let panel = simulate_var(&theta1(), 80, 20, 5).unwrap();
        let iv = Interval::new(79, 40);
        let fit = fit_var(&panel, iv, 1).unwrap();
        let other = theta1();
        assert_eq!(lr_statistic(&panel, iv, &fit.params, &fit.params, 0.5).unwrap(), 0.0);
        let r1 = lr_statistic(&panel, iv, &fit.params, &other, 1.0).unwrap();
        let r05 = lr_statistic(&panel, iv, &fit.params, &other, 0.5).unwrap();
        assert_abs_diff_eq!(r1, r05 * r05, epsilon = 1e-9 * r1.max(1.0));
        assert!(lr_statistic(&panel, iv, &fit.params, &other, 0.0).is_err());
    }

    #[test]
    fn simulation_is_deterministic_and_checks_stability() {
        let a = simulate_var(&theta1(), 100, 10, 42).unwrap();
        let b = simulate_var(&theta1(), 100, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_var(&theta1(), 100, 10, 43).unwrap();
        assert_ne!(a, c);
        let unit = VarParams::var1(&[0.0], &[1.0], &[1.0]).unwrap();
        assert!(matches!(simulate_var(&unit, 10, 0, 1), Err(Error::UnstableParams { .. })));
        let forced = simulate_var_with(&unit, 10, 0, 1, SimulateOptions { allow_unstable: true }).unwrap();
        assert_eq!(forced.len(), 10);
    }

    #[test]
    fn json_layout_is_row_major() {
        let p = VarParams::var1(&[1.0, 2.0], &[0.1, 0.2, 0.3, 0.4], &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let s = serde_json::to_value(&p).unwrap();
        assert_eq!(s["d"], 2);
        assert_eq!(s["p"], 1);
        assert_eq!(s["lags"][0][0][1], 0.2);
        assert_eq!(s["sigma"][1][0], 0.5);
        let back: VarParams = serde_json::from_value(s).unwrap();
        assert_eq!(back, p);
        let bad = serde_json::json!({"d": 2, "p": 1, "intercept": [0, 0], "lags": [[[0.5, 0], [0, 0.5]]], "sigma": [[1, 2], [2, 1]]});
        assert!(serde_json::from_value::<VarParams>(bad).is_err());
    }
}
