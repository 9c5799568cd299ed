//! Generalized forecast-error variance decompositions and spillover measures.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{TimeLabel, TimeSeriesPanel};
use crate::var::{fit_var, Interval, VarParams};

/// Default forecast horizon in observations (one year of monthly data).
pub const DEFAULT_HORIZON: usize = 12;

/// Moving-average coefficients A₀…A_{H−1} of a stable VAR.
#[derive(Debug, Clone)]
pub struct VmaCoefficients {
    pub matrices: Vec<DMatrix<f64>>,
    pub horizon: usize,
}

/// A_u = φ₁A_{u−1} + … + φ_pA_{u−p}, A₀ = I, A_u = 0 for u < 0.
pub fn var_to_vma(params: &VarParams, horizon: usize) -> Result<VmaCoefficients> {
    if horizon == 0 {
        return Err(Error::InvalidParams("horizon must be at least 1".into()));
    }
    if !params.is_stable() {
        return Err(Error::UnstableParams {
            spectral_radius: params.spectral_radius(),
        });
    }
    let d = params.dim();
    let mut a: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    a.push(DMatrix::identity(d, d));
    for u in 1..horizon {
        let mut next = DMatrix::zeros(d, d);
        for (s, phi) in params.lags().iter().enumerate() {
            if u > s {
                next += phi * &a[u - s - 1];
            }
        }
        a.push(next);
    }
    Ok(VmaCoefficients { matrices: a, horizon })
}

/// How σ_jj in the generalized decomposition is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SigmaNormalizer {
    /// σ_jj = Σ_jj (the usual generalized FEVD).
    #[default]
    Variance,
    /// σ_jj = √Σ_jj; kept for audit only.
    StdDev,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpilloverTable {
    #[serde(serialize_with = "ser_rows")]
    pub raw: DMatrix<f64>,
    #[serde(serialize_with = "ser_rows")]
    pub normalized: DMatrix<f64>,
    /// S(H) in percent.
    pub total: f64,
    pub horizon: usize,
    pub names: Vec<String>,
}

fn ser_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

/// 100 · (off-diagonal mass) / (total mass) of a row-normalized table.
pub fn total_spillover(normalized: &DMatrix<f64>) -> f64 {
    let all: f64 = normalized.sum();
    let diag: f64 = normalized.diagonal().sum();
    100.0 * (all - diag) / all
}

pub fn gfevd(params: &VarParams, horizon: usize) -> Result<SpilloverTable> {
    gfevd_with(params, horizon, SigmaNormalizer::Variance)
}

/// C_ij(H) = σ_jj⁻¹ Σ_h (e_iᵀA_hΣe_j)² / Σ_h e_iᵀA_hΣA_hᵀe_i, row-normalized.
pub fn gfevd_with(params: &VarParams, horizon: usize, normalizer: SigmaNormalizer) -> Result<SpilloverTable> {
    let vma = var_to_vma(params, horizon)?;
    let d = params.dim();
    let sigma = params.sigma();
    let mut num = DMatrix::<f64>::zeros(d, d);
    let mut den = vec![0.0; d];
    for a in &vma.matrices {
        let a_sigma = a * sigma;
        let a_sigma_at = &a_sigma * a.transpose();
        for i in 0..d {
            den[i] += a_sigma_at[(i, i)];
            for j in 0..d {
                num[(i, j)] += a_sigma[(i, j)].powi(2);
            }
        }
    }
    let mut raw = DMatrix::zeros(d, d);
    for j in 0..d {
        let s = match normalizer {
            SigmaNormalizer::Variance => sigma[(j, j)],
            SigmaNormalizer::StdDev => sigma[(j, j)].sqrt(),
        };
        for i in 0..d {
            raw[(i, j)] = num[(i, j)] / (s * den[i]);
        }
    }
    let mut normalized = raw.clone();
    for i in 0..d {
        let row_sum: f64 = raw.row(i).sum();
        if !(row_sum > 0.0) || !row_sum.is_finite() {
            return Err(Error::ZeroVarianceRow { row: i });
        }
        for j in 0..d {
            normalized[(i, j)] = raw[(i, j)] / row_sum;
        }
    }
    let total = total_spillover(&normalized);
    Ok(SpilloverTable {
        raw,
        normalized,
        total,
        horizon,
        names: (1..=d).map(|i| format!("y{i}")).collect(),
    })
}

impl SpilloverTable {
    pub fn with_names(mut self, names: &[String]) -> Self {
        if names.len() == self.names.len() {
            self.names = names.to_vec();
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Σ_{j≠i} C̃_ij for each row i.
    pub fn from_others(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.normalized.row(i).sum() - self.normalized[(i, i)])
            .collect()
    }

    /// Σ_{i≠j} C̃_ij for each column j.
    pub fn to_others(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.normalized.column(j).sum() - self.normalized[(j, j)])
            .collect()
    }

    /// Header + one row per series with a FROM_OTHERS column, then a TO_OTHERS row whose
    /// last cell carries S(H) in percent.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        header.push("FROM_OTHERS".into());
        w.write_record(&header)?;
        let from = self.from_others();
        for i in 0..self.dim() {
            let mut rec = vec![self.names[i].clone()];
            rec.extend(self.normalized.row(i).iter().map(|v| format!("{v}")));
            rec.push(format!("{}", from[i]));
            w.write_record(&rec)?;
        }
        let mut last = vec!["TO_OTHERS".to_string()];
        last.extend(self.to_others().iter().map(|v| format!("{v}")));
        last.push(format!("{}", self.total));
        w.write_record(&last)?;
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one (τ, group) spillover evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SpilloverCell {
    Value(f64),
    Flagged(String),
}

impl SpilloverCell {
    pub fn value(&self) -> Option<f64> {
        match self {
            SpilloverCell::Value(v) => Some(*v),
            SpilloverCell::Flagged(_) => None,
        }
    }
}

/// Window length per (group, τ position); `None` means no window is available.
#[derive(Debug, Clone)]
pub enum WindowSpec {
    Fixed(usize),
    PerGroup(Vec<Vec<Option<usize>>>),
}

impl WindowSpec {
    fn window(&self, group: usize, pos: usize) -> Option<usize> {
        match self {
            WindowSpec::Fixed(w) => Some(*w),
            WindowSpec::PerGroup(v) => v.get(group).and_then(|g| g.get(pos).copied().flatten()),
        }
    }
}

/// Time-indexed total spillover for a set of column groups (normally all pairs).
#[derive(Debug, Clone)]
pub struct SpilloverSeries {
    pub taus: Vec<usize>,
    pub labels: Vec<TimeLabel>,
    pub groups: Vec<Vec<usize>>,
    pub group_names: Vec<String>,
    /// `cells[g][k]` for group `g` at `taus[k]`.
    pub cells: Vec<Vec<SpilloverCell>>,
    /// Mean over the groups with a value at each τ.
    pub average: Vec<Option<f64>>,
    /// Fraction of groups with a value at each τ.
    pub coverage: Vec<f64>,
}

impl SpilloverSeries {
    pub fn flagged_count(&self) -> usize {
        self.cells
            .iter()
            .flatten()
            .filter(|c| matches!(c, SpilloverCell::Flagged(_)))
            .count()
    }

    /// CSV with columns date, pair, total; flagged cells carry an empty total and the reason.
    /// Cross-group averages are emitted under the pair label `AVERAGE`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "pair", "total", "flag"])?;
        for (k, label) in self.labels.iter().enumerate() {
            for (g, name) in self.group_names.iter().enumerate() {
                match &self.cells[g][k] {
                    SpilloverCell::Value(v) => w.write_record([label.to_string(), name.clone(), format!("{v}"), String::new()])?,
                    SpilloverCell::Flagged(why) => {
                        w.write_record([label.to_string(), name.clone(), String::new(), why.clone()])?
                    }
                }
            }
            let avg = self.average[k].map(|v| format!("{v}")).unwrap_or_default();
            let flag = if self.coverage[k] < 1.0 {
                format!("coverage {:.3}", self.coverage[k])
            } else {
                String::new()
            };
            w.write_record([label.to_string(), "AVERAGE".to_string(), avg, flag])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// All unordered column pairs (i, j), i < j, in lexicographic order.
pub fn all_pairs(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            out.push(vec![i, j]);
        }
    }
    out
}

pub fn group_name(panel: &TimeSeriesPanel, group: &[usize]) -> String {
    group
        .iter()
        .map(|&c| panel.names()[c].as_str())
        .collect::<Vec<_>>()
        .join("-")
}

/// Horizon, lag order and σ_jj convention of a spillover series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpilloverOptions {
    pub horizon: usize,
    pub p: usize,
    pub normalizer: SigmaNormalizer,
}

impl Default for SpilloverOptions {
    fn default() -> Self {
        SpilloverOptions {
            horizon: DEFAULT_HORIZON,
            p: 1,
            normalizer: SigmaNormalizer::Variance,
        }
    }
}

fn spillover_cell(panel: &TimeSeriesPanel, tau: usize, window: Option<usize>, opts: SpilloverOptions) -> SpilloverCell {
    let Some(m) = window else {
        return SpilloverCell::Flagged("no window".into());
    };
    let result = fit_var(panel, Interval::new(tau, m), opts.p)
        .and_then(|fit| gfevd_with(&fit.params, opts.horizon, opts.normalizer));
    match result {
        Ok(table) => SpilloverCell::Value(table.total),
        Err(e) => SpilloverCell::Flagged(e.to_string()),
    }
}

/// Total spillover of each column group on the window [τ−m_τ+1, τ].
///
/// Failed fits, unstable local models and missing windows become flagged cells.
pub fn group_spillover(
    panel: &TimeSeriesPanel,
    groups: &[Vec<usize>],
    taus: &[usize],
    windows: &WindowSpec,
    opts: SpilloverOptions,
) -> Result<SpilloverSeries> {
    if groups.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    let sub_panels = groups
        .iter()
        .map(|g| panel.select(g))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..taus.len()).map(move |k| (g, k)))
        .collect();
    let flat: Vec<SpilloverCell> = jobs
        .par_iter()
        .map(|&(g, k)| spillover_cell(&sub_panels[g], taus[k], windows.window(g, k), opts))
        .collect();
    let cells: Vec<Vec<SpilloverCell>> = flat.chunks(taus.len().max(1)).map(|c| c.to_vec()).collect();
    let cells = if taus.is_empty() { vec![Vec::new(); groups.len()] } else { cells };

    let mut average = Vec::with_capacity(taus.len());
    let mut coverage = Vec::with_capacity(taus.len());
    for k in 0..taus.len() {
        let vals: Vec<f64> = cells.iter().filter_map(|g| g[k].value()).collect();
        coverage.push(vals.len() as f64 / groups.len() as f64);
        average.push(if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        });
    }
    Ok(SpilloverSeries {
        taus: taus.to_vec(),
        labels: taus.iter().map(|&t| panel.timestamps()[t]).collect(),
        groups: groups.to_vec(),
        group_names: groups.iter().map(|g| group_name(panel, g)).collect(),
        cells,
        average,
        coverage,
    })
}

/// Bivariate spillover for every unordered pair of columns.
pub fn pairwise_spillover(
    panel: &TimeSeriesPanel,
    taus: &[usize],
    windows: &WindowSpec,
    opts: SpilloverOptions,
) -> Result<SpilloverSeries> {
    if panel.dim() < 2 {
        return Err(Error::BadDimension("pairwise spillover needs at least two columns".into()));
    }
    group_spillover(panel, &all_pairs(panel.dim()), taus, windows, opts)
}

/// Plain rolling-window spillover of the joint model over all columns.
pub fn rolling_spillover(
    panel: &TimeSeriesPanel,
    window: usize,
    taus: &[usize],
    opts: SpilloverOptions,
) -> Vec<SpilloverCell> {
    taus.iter()
        .map(|&t| spillover_cell(panel, t, Some(window), opts))
        .collect()
}
