//! Sequential search for the longest locally homogeneous interval at each time point.
//!
//! For an anchor τ the candidate windows `I_k = [τ − m_k + 1, τ]` are fitted from the
//! shortest upwards. The shortest window is always accepted; window `k` is accepted while
//! `|ℓ(I_k, θ̃_k) − ℓ(I_k, θ̂)|^r ≤ ζ_k`, where θ̂ is the estimator of the last accepted
//! window. Because θ̂ is refreshed after every accepted step, the statistic at step `k` is
//! always the comparison of consecutive fits θ̃_k and θ̃_{k−1}; [`Ladder`] therefore
//! precomputes all of them once and any set of critical values can be applied cheaply.
//!
//! A grid of `n` lengths has tests at steps `2..=n`; the selectable indices are `1..=n−1`,
//! the last length only serving as the final test window.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::CriticalValues;
use crate::error::{Error, Result};
use crate::panel::{TimeLabel, TimeSeriesPanel};
use crate::var::{fit_var, log_likelihood, powered, Interval, VarParams};

/// Ordered candidate window lengths m₁ < … < m_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalGrid {
    lengths: Vec<usize>,
    generator: Option<(usize, f64)>,
}

impl IntervalGrid {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if lengths.len() < 2 {
            return Err(Error::Config("interval grid needs at least two lengths".into()));
        }
        if lengths[0] == 0 || lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "interval grid must be strictly increasing positive integers: {lengths:?}"
            )));
        }
        Ok(IntervalGrid {
            lengths,
            generator: None,
        })
    }

    /// m_k = round(m₀·a^k), k = 0…count−1.
    pub fn geometric(m0: usize, a: f64, count: usize) -> Result<Self> {
        let lengths = (0..count)
            .map(|k| (m0 as f64 * a.powi(k as i32)).round() as usize)
            .collect();
        let mut g = IntervalGrid::new(lengths)?;
        g.generator = Some((m0, a));
        Ok(g)
    }

    /// {12, 15, 19, 23, 29, 37, 46}: m₀ = 12, a = 1.25.
    pub fn default_monthly() -> Self {
        IntervalGrid::geometric(12, 1.25, 7).expect("static grid")
    }

    /// {18, 23, 29, 36, 45, 57, 72}: window lengths common in the rolling-window literature.
    pub fn literature() -> Self {
        IntervalGrid::new(vec![18, 23, 29, 36, 45, 57, 72]).expect("static grid")
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn generator(&self) -> Option<(usize, f64)> {
        self.generator
    }

    /// Number of lengths, which is also the index of the final test step.
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Length of window `k` (1-based).
    pub fn length(&self, k: usize) -> usize {
        self.lengths[k - 1]
    }

    pub fn max_len(&self) -> usize {
        *self.lengths.last().unwrap()
    }

    /// Largest selectable index.
    pub fn k_max(&self) -> usize {
        self.lengths.len() - 1
    }

    /// First anchor (0-based row) at which every window plus `p` lags fits.
    pub fn first_tau(&self, p: usize) -> usize {
        self.max_len() + p - 1
    }
}

/// Consecutive-fit statistics at one anchor τ.
#[derive(Debug, Clone)]
pub struct Ladder {
    pub tau: usize,
    /// θ̃_1 … θ̃_j, truncated at the first failed fit.
    pub fits: Arc<Vec<VarParams>>,
    /// `stats[k − 2] = |ℓ(I_k, θ̃_k) − ℓ(I_k, θ̃_{k−1})|^r` for k = 2…fits.len().
    pub stats: Vec<f64>,
    /// Step whose fit failed, if any.
    pub failed_at: Option<usize>,
}

impl Ladder {
    pub fn build(panel: &TimeSeriesPanel, tau: usize, grid: &IntervalGrid, r: f64, p: usize) -> Result<Ladder> {
        if !(r > 0.0) {
            return Err(Error::InvalidParams(format!("power r must be positive, got {r}")));
        }
        if tau >= panel.len() || tau < grid.first_tau(p) {
            return Err(Error::InsufficientHistory {
                end: tau,
                length: grid.max_len(),
                needed: grid.max_len() + p,
                available: (tau + 1).min(panel.len()),
            });
        }
        let first = fit_var(panel, Interval::new(tau, grid.length(1)), p)?;
        let mut fits = vec![first.params];
        let mut stats = Vec::with_capacity(grid.len() - 1);
        let mut failed_at = None;
        for k in 2..=grid.len() {
            let iv = Interval::new(tau, grid.length(k));
            let fit = match fit_var(panel, iv, p) {
                Ok(f) => f,
                Err(e) => {
                    log::debug!("fit failed at tau={tau}, step {k}: {e}");
                    failed_at = Some(k);
                    break;
                }
            };
            let prev = log_likelihood(panel, iv, fits.last().unwrap())?;
            stats.push(powered(fit.loglik - prev, r));
            fits.push(fit.params);
        }
        Ok(Ladder {
            tau,
            fits: Arc::new(fits),
            stats,
            failed_at,
        })
    }

    /// Statistic of step `k` (2-based), if it was computed.
    pub fn stat(&self, k: usize) -> Option<f64> {
        self.stats.get(k.checked_sub(2)?).copied()
    }

    /// Index of the last accepted window under the given thresholds (`thresholds[k − 2] = ζ_k`).
    pub fn accepted(&self, thresholds: &[f64]) -> usize {
        let mut last = 1;
        for (i, (&s, &z)) in self.stats.iter().zip(thresholds).enumerate() {
            if s <= z {
                last = i + 2;
            } else {
                break;
            }
        }
        last
    }

    /// Applies thresholds and returns the (unrestricted) result.
    pub fn decide(&self, grid: &IntervalGrid, thresholds: &[f64]) -> AdaptiveResult {
        let accepted = self.accepted(thresholds);
        let k_hat = accepted.min(grid.k_max());
        let stop = (accepted + 1).min(self.fits.len());
        AdaptiveResult {
            tau: self.tau,
            k_hat,
            m_hat: grid.length(k_hat),
            theta_hat: self.fits[k_hat - 1].clone(),
            lr_trace: self.stats[..stop.saturating_sub(1)].to_vec(),
            full_trace: (2..=grid.len()).map(|k| self.stat(k)).collect(),
            candidates: self.fits.clone(),
            accepted,
            restricted: false,
            fit_failed_at: self.failed_at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    pub tau: usize,
    /// Selected window index, 1-based, in `1..=grid.k_max()`.
    pub k_hat: usize,
    pub m_hat: usize,
    /// MLE on the selected window.
    pub theta_hat: VarParams,
    /// Statistics actually evaluated by the search: steps 2…(stopping step).
    pub lr_trace: Vec<f64>,
    /// Consecutive-fit statistics for every step 2…n (`None` where a fit failed).
    pub full_trace: Vec<Option<f64>>,
    /// θ̃_1 … θ̃_j.
    pub candidates: Arc<Vec<VarParams>>,
    /// Last accepted window before capping at `k_max` (may equal `n`).
    pub accepted: usize,
    /// Whether the jump restriction replaced the search result.
    pub restricted: bool,
    pub fit_failed_at: Option<usize>,
}

impl AdaptiveResult {
    /// Statistic of step `k` from the full trace.
    pub fn stat(&self, k: usize) -> Option<f64> {
        self.full_trace.get(k.checked_sub(2)?).copied().flatten()
    }

    /// One-step mean forecast for row `tau + 1` from the adaptive estimator.
    pub fn forecast_next(&self, panel: &TimeSeriesPanel) -> DVector<f64> {
        let p = self.theta_hat.order();
        let recent: Vec<DVector<f64>> = (0..p)
            .map(|s| panel.values().row(self.tau - s).transpose())
            .collect();
        self.theta_hat.forecast(&recent)
    }
}

fn check_critvals(grid: &IntervalGrid, critvals: &CriticalValues) -> Result<Vec<f64>> {
    if critvals.grid != grid.lengths() {
        return Err(Error::Config(format!(
            "critical values were calibrated for grid {:?}, not {:?}",
            critvals.grid,
            grid.lengths()
        )));
    }
    critvals.thresholds()
}

/// Adaptive interval search at anchor `tau`.
pub fn adaptive_search(
    panel: &TimeSeriesPanel,
    tau: usize,
    grid: &IntervalGrid,
    critvals: &CriticalValues,
    r: f64,
    p: usize,
) -> Result<AdaptiveResult> {
    let thresholds = check_critvals(grid, critvals)?;
    Ok(Ladder::build(panel, tau, grid, r, p)?.decide(grid, &thresholds))
}

/// Index in `1..=k_max` whose extension to the next window has the largest statistic
/// (ties: smallest index).
fn k_max_by_lr(result: &AdaptiveResult, k_max: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for k in 1..=k_max {
        if let Some(s) = result.stat(k + 1) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// Suppresses sudden jumps: wherever the selected length differs from the previous
/// (already restricted) selection, the index is replaced by the window just before the
/// largest step statistic, and the estimator by that window's MLE.
pub fn apply_jump_restriction(results: &[AdaptiveResult], grid: &IntervalGrid) -> Result<Vec<AdaptiveResult>> {
    let mut out: Vec<AdaptiveResult> = Vec::with_capacity(results.len());
    for (i, res) in results.iter().enumerate() {
        if i > 0 && res.tau != results[i - 1].tau + 1 {
            return Err(Error::Config(format!(
                "results must be consecutive in tau ({} follows {})",
                res.tau,
                results[i - 1].tau
            )));
        }
        let mut cur = res.clone();
        if let Some(prev) = out.last() {
            if cur.m_hat != prev.m_hat {
                let k = k_max_by_lr(&cur, grid.k_max()).ok_or(Error::MissingTrace { tau: cur.tau })?;
                if k != cur.k_hat {
                    cur.k_hat = k;
                    cur.m_hat = grid.length(k);
                    cur.theta_hat = cur.candidates[k - 1].clone();
                    cur.restricted = true;
                }
            }
        }
        out.push(cur);
    }
    Ok(out)
}

/// Ladders for every anchor in `taus`, built in parallel.
pub fn build_ladders(
    panel: &TimeSeriesPanel,
    taus: &[usize],
    grid: &IntervalGrid,
    r: f64,
    p: usize,
) -> Result<Vec<Ladder>> {
    taus.par_iter()
        .map(|&t| Ladder::build(panel, t, grid, r, p))
        .collect()
}

/// Decisions for a run of consecutive ladders, optionally with the jump restriction.
pub fn decide_series(
    ladders: &[Ladder],
    grid: &IntervalGrid,
    thresholds: &[f64],
    restrict: bool,
) -> Result<Vec<AdaptiveResult>> {
    let raw: Vec<AdaptiveResult> = ladders.iter().map(|l| l.decide(grid, thresholds)).collect();
    if restrict {
        apply_jump_restriction(&raw, grid)
    } else {
        Ok(raw)
    }
}

/// Runs the adaptive search for every admissible anchor of the panel.
pub fn detect(
    panel: &TimeSeriesPanel,
    grid: &IntervalGrid,
    critvals: &CriticalValues,
    r: f64,
    p: usize,
    restrict: bool,
) -> Result<Vec<AdaptiveResult>> {
    let thresholds = check_critvals(grid, critvals)?;
    let taus = admissible_taus(panel, grid, p);
    if taus.is_empty() {
        return Err(Error::InsufficientHistory {
            end: panel.len().saturating_sub(1),
            length: grid.max_len(),
            needed: grid.max_len() + p,
            available: panel.len(),
        });
    }
    let ladders = build_ladders(panel, &taus, grid, r, p)?;
    decide_series(&ladders, grid, &thresholds, restrict)
}

/// Anchors from the first fully covered row to the end of the panel.
pub fn admissible_taus(panel: &TimeSeriesPanel, grid: &IntervalGrid, p: usize) -> Vec<usize> {
    (grid.first_tau(p)..panel.len()).collect()
}

/// Mean absolute percentage error of one-step forecasts, averaged over components and
/// time. Returns the MAPE and the number of (t, component) terms skipped because the
/// observation was zero.
pub fn forecast_mape(panel: &TimeSeriesPanel, results: &[AdaptiveResult]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut zeros = 0usize;
    for res in results {
        let t = res.tau + 1;
        if t >= panel.len() {
            continue;
        }
        let f = res.forecast_next(panel);
        for c in 0..panel.dim() {
            let y = panel.values()[(t, c)];
            if y == 0.0 {
                zeros += 1;
                continue;
            }
            sum += ((y - f[c]) / y).abs();
            n += 1;
        }
    }
    let mape = if n == 0 { f64::NAN } else { sum / n as f64 };
    (mape, zeros)
}

/// Anything that can supply critical values for a tuning factor ρ.
pub trait CriticalValueSource {
    fn critical_values(&self, rho: f64) -> Result<CriticalValues>;
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoRow {
    pub rho: f64,
    pub zeta: Vec<f64>,
    pub mape: f64,
    pub zero_excluded: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoSelection {
    pub chosen: f64,
    pub table: Vec<RhoRow>,
}

impl RhoSelection {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let n_steps = self.table.first().map_or(0, |r| r.zeta.len());
        let mut header = vec!["rho".to_string()];
        header.extend((2..n_steps + 2).map(|k| format!("zeta_{k}")));
        header.push("mape".into());
        w.write_record(&header)?;
        for row in &self.table {
            let mut rec = vec![format!("{}", row.rho)];
            rec.extend(row.zeta.iter().map(|z| format!("{z}")));
            rec.push(format!("{}", row.mape));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ρ ∈ {0.01, 0.02, …, 1.00}.
pub fn default_rho_grid() -> Vec<f64> {
    (1..=100).map(|i| i as f64 / 100.0).collect()
}

/// Chooses ρ by one-step-ahead forecast MAPE of the (restricted) adaptive estimator.
///
/// Ties go to the smaller ρ.
pub fn select_rho<S: CriticalValueSource + Sync>(
    panel: &TimeSeriesPanel,
    grid: &IntervalGrid,
    rho_grid: &[f64],
    r: f64,
    p: usize,
    calib: &S,
) -> Result<RhoSelection> {
    if rho_grid.is_empty() {
        return Err(Error::Config("empty rho grid".into()));
    }
    if let Some(bad) = rho_grid.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::Config(format!("rho {bad} outside (0, 1]")));
    }
    let taus = admissible_taus(panel, grid, p);
    if taus.len() < 2 {
        return Err(Error::InsufficientHistory {
            end: panel.len().saturating_sub(1),
            length: grid.max_len(),
            needed: grid.max_len() + p + 1,
            available: panel.len(),
        });
    }
    let ladders = build_ladders(panel, &taus, grid, r, p)?;
    rho_table(panel, &ladders, grid, rho_grid, calib)
}

/// MAPE table over `rho_grid` for ladders already built on `panel`.
pub fn rho_table<S: CriticalValueSource + Sync>(
    panel: &TimeSeriesPanel,
    ladders: &[Ladder],
    grid: &IntervalGrid,
    rho_grid: &[f64],
    calib: &S,
) -> Result<RhoSelection> {
    if rho_grid.is_empty() {
        return Err(Error::Config("empty rho grid".into()));
    }
    let mut rhos = rho_grid.to_vec();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    let table: Vec<RhoRow> = rhos
        .par_iter()
        .map(|&rho| {
            let cv = calib.critical_values(rho)?;
            let thresholds = check_critvals(grid, &cv)?;
            let results = decide_series(ladders, grid, &thresholds, true)?;
            let (mape, zero_excluded) = forecast_mape(panel, &results);
            if zero_excluded > 0 {
                log::warn!("rho={rho}: {zero_excluded} zero observations excluded from MAPE");
            }
            Ok(RhoRow {
                rho,
                zeta: thresholds,
                mape,
                zero_excluded,
            })
        })
        .collect::<Result<_>>()?;
    let chosen = argmin_rho(&table);
    Ok(RhoSelection { chosen, table })
}

/// Critical values solved once per ρ and looked up afterwards.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedCriticalValues {
    entries: Vec<(f64, CriticalValues)>,
}

impl PrecomputedCriticalValues {
    pub fn build<S: CriticalValueSource + Sync>(source: &S, rhos: &[f64]) -> Result<Self> {
        let entries = rhos
            .par_iter()
            .map(|&rho| Ok((rho, source.critical_values(rho)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PrecomputedCriticalValues { entries })
    }

    pub fn get(&self, rho: f64) -> Option<&CriticalValues> {
        self.entries.iter().find(|e| e.0 == rho).map(|e| &e.1)
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

impl CriticalValueSource for PrecomputedCriticalValues {
    fn critical_values(&self, rho: f64) -> Result<CriticalValues> {
        self.get(rho)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no critical values precomputed for rho={rho}")))
    }
}

pub(crate) fn argmin_rho(table: &[RhoRow]) -> f64 {
    let mut best = &table[0];
    for row in &table[1..] {
        if row.mape < best.mape || (best.mape.is_nan() && !row.mape.is_nan()) {
            best = row;
        }
    }
    best.rho
}

/// Per-τ results as CSV: date, [pair,] k_hat, m_hat, lr_k2 … lr_kn, restricted_flag.
pub fn write_results_csv<W: std::io::Write>(
    writer: W,
    labels: &[TimeLabel],
    grid: &IntervalGrid,
    series: &[(Option<String>, &[AdaptiveResult])],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_pair = series.iter().any(|s| s.0.is_some());
    let mut header = vec!["date".to_string()];
    if with_pair {
        header.push("pair".into());
    }
    header.extend(["k_hat".to_string(), "m_hat".to_string()]);
    header.extend((2..=grid.len()).map(|k| format!("lr_k{k}")));
    header.push("restricted_flag".into());
    w.write_record(&header)?;
    for (name, results) in series {
        for res in *results {
            let mut rec = vec![labels[res.tau].to_string()];
            if with_pair {
                rec.push(name.clone().unwrap_or_default());
            }
            rec.push(res.k_hat.to_string());
            rec.push(res.m_hat.to_string());
            rec.extend(res.full_trace.iter().map(|v| v.map(|x| format!("{x}")).unwrap_or_default()));
            rec.push(u8::from(res.restricted).to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of an intervals file written by [`write_results_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub label: TimeLabel,
    pub pair: Option<String>,
    pub k_hat: usize,
    pub m_hat: usize,
}

/// Reads the date, pair, k_hat and m_hat columns of an intervals file.
pub fn read_intervals_csv<R: std::io::Read>(reader: R) -> Result<Vec<IntervalRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(c_date), Some(c_k), Some(c_m)) = (col("date"), col("k_hat"), col("m_hat")) else {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "intervals file needs date, k_hat and m_hat columns".into(),
        });
    };
    let c_pair = col("pair");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let label = TimeLabel::parse(field(c_date)).ok_or_else(|| Error::Parse {
            line,
            column: c_date + 1,
            message: format!("bad date {:?}", field(c_date)),
        })?;
        let num = |c: usize| -> Result<usize> {
            field(c).trim().parse().map_err(|_| Error::NonNumeric {
                line,
                column: c + 1,
                value: field(c).to_string(),
            })
        };
        out.push(IntervalRecord {
            label,
            pair: c_pair.map(|c| field(c).to_string()),
            k_hat: num(c_k)?,
            m_hat: num(c_m)?,
        });
    }
    Ok(out)
}
