//! Simulation scenarios with known breaks and replication studies of the adaptive search.
//!
//! Observations are numbered from 1. The study index τ starts at 1 at the first observation
//! for which every window (plus lags) is available, so with the default grid and p = 1
//! τ = obs − 46 and the first post-break observation 85 sits at τ = 39.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::adaptive::{
    build_ladders, decide_series, default_rho_grid, rho_table, AdaptiveResult, IntervalGrid, Ladder,
    PrecomputedCriticalValues,
};
use crate::calibrate::{sample_rng, CalibrationConfig, Calibrator};
use crate::error::{Error, Result};
use crate::panel::{write_panel_csv, TimeLabel, TimeSeriesPanel};
use crate::var::{simulate_segments, SimulateOptions, VarParams, DEFAULT_BURN_IN};

pub const DEFAULT_REPLICATIONS: usize = 250;
/// Noise covariance used with the Table-4 coefficients, which come without one.
pub const TABLE4_SIGMA: [f64; 4] = [1.0, 0.0, 0.0, 1.0];
/// Coupling between the two embedded blocks of the four-dimensional parameter sets.
pub const BLOCK_COUPLING: f64 = 0.05;

/// Pre-break regime of the bivariate study.
pub fn table4_theta1() -> VarParams {
    VarParams::var1(&[29.0, 132.0], &[0.71, 0.08, 0.13, 0.08], &TABLE4_SIGMA).expect("static parameters")
}

/// Post-break regime of the bivariate study.
pub fn table4_theta2() -> VarParams {
    VarParams::var1(&[31.0, 130.0], &[0.63, 0.0, 0.12, 0.23], &TABLE4_SIGMA).expect("static parameters")
}

/// Places two copies of a bivariate VAR(1) on the diagonal of a four-dimensional one,
/// with every cross-block coefficient set to `coupling` and a block-diagonal Σ.
pub fn block_embed(theta: &VarParams, coupling: f64) -> Result<VarParams> {
    let d = theta.dim();
    if theta.order() != 1 {
        return Err(Error::InvalidParams("block embedding expects a VAR(1)".into()));
    }
    let phi = &theta.lags()[0];
    let big = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        if i / d == j / d {
            phi[(i % d, j % d)]
        } else {
            coupling
        }
    });
    let sigma = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        if i / d == j / d {
            theta.sigma()[(i % d, j % d)]
        } else {
            0.0
        }
    });
    let intercept = DVector::from_fn(2 * d, |i, _| theta.intercept()[i % d]);
    let out = VarParams::new(intercept, vec![big], sigma)?;
    if !out.is_stable() {
        return Err(Error::UnstableParams {
            spectral_radius: out.spectral_radius(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ScenarioKind {
    SingleBreak,
    DoubleBreak,
    SmoothBreak,
}

impl ScenarioKind {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(ScenarioKind::SingleBreak),
            2 => Ok(ScenarioKind::DoubleBreak),
            3 => Ok(ScenarioKind::SmoothBreak),
            _ => Err(Error::Config(format!("unknown scenario {n} (expected 1, 2 or 3)"))),
        }
    }

    /// Segment lengths and transition steps of the standard layout.
    pub fn template(self) -> (Vec<usize>, usize) {
        match self {
            ScenarioKind::SingleBreak => (vec![84, 62], 0),
            ScenarioKind::DoubleBreak => (vec![84, 15, 47], 0),
            ScenarioKind::SmoothBreak => (vec![96, 16, 88], 16),
        }
    }

    /// Study-τ ranges (inclusive) of the homogeneous and heterogeneous parts.
    pub fn parts(self) -> [(usize, usize); 2] {
        match self {
            ScenarioKind::SingleBreak => [(1, 38), (39, 84)],
            ScenarioKind::DoubleBreak => [(1, 38), (39, 100)],
            ScenarioKind::SmoothBreak => [(1, 70), (71, 100)],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub theta_a: VarParams,
    pub theta_b: VarParams,
    /// Single: [a, b]; double: [a, b, a]; smooth: [a, transition, b].
    pub segments: Vec<usize>,
    pub mix_steps: usize,
    pub n_replications: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, theta_a: VarParams, theta_b: VarParams) -> Self {
        let (segments, mix_steps) = kind.template();
        ScenarioSpec {
            kind,
            theta_a,
            theta_b,
            segments,
            mix_steps,
            n_replications: DEFAULT_REPLICATIONS,
            seed: 0,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    /// Table-4 parameters for d = 2, their block embedding for d = 4.
    pub fn standard(scenario: u8, d: usize) -> Result<Self> {
        let kind = ScenarioKind::from_number(scenario)?;
        let (a, b) = match d {
            2 => (table4_theta1(), table4_theta2()),
            4 => (
                block_embed(&table4_theta1(), BLOCK_COUPLING)?,
                block_embed(&table4_theta2(), BLOCK_COUPLING)?,
            ),
            _ => return Err(Error::Config(format!("standard scenarios exist for d = 2 and 4, not {d}"))),
        };
        Ok(ScenarioSpec::new(kind, a, b))
    }

    pub fn with_replications(mut self, n: usize) -> Self {
        self.n_replications = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_a.dim() != self.theta_b.dim() || self.theta_a.order() != self.theta_b.order() {
            return Err(Error::BadDimension("scenario regimes differ in shape".into()));
        }
        let expected = match self.kind {
            ScenarioKind::DoubleBreak | ScenarioKind::SmoothBreak => 3,
            ScenarioKind::SingleBreak => 2,
        };
        if self.segments.len() != expected || self.segments.contains(&0) {
            return Err(Error::Config(format!(
                "{:?} needs {expected} positive segment lengths, got {:?}",
                self.kind, self.segments
            )));
        }
        match self.kind {
            ScenarioKind::SmoothBreak if self.mix_steps != self.segments[1] => {
                return Err(Error::Config("transition segment must equal mix_steps".into()))
            }
            ScenarioKind::SingleBreak | ScenarioKind::DoubleBreak if self.mix_steps != 0 => {
                return Err(Error::Config("mix_steps only applies to smooth breaks".into()))
            }
            _ => {}
        }
        if self.n_replications == 0 {
            return Err(Error::Config("need at least one replication".into()));
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().sum()
    }

    /// First observation (1-based) of each regime after the first.
    pub fn break_points(&self) -> Vec<usize> {
        let mut acc = 0;
        let mut out = Vec::new();
        for len in &self.segments[..self.segments.len() - 1] {
            acc += len;
            out.push(acc + 1);
        }
        out
    }

    /// Parameter regimes in time order with their lengths.
    pub fn schedule(&self) -> Result<Vec<(VarParams, usize)>> {
        self.validate()?;
        let (a, b) = (&self.theta_a, &self.theta_b);
        let s = &self.segments;
        Ok(match self.kind {
            ScenarioKind::SingleBreak => vec![(a.clone(), s[0]), (b.clone(), s[1])],
            ScenarioKind::DoubleBreak => vec![(a.clone(), s[0]), (b.clone(), s[1]), (a.clone(), s[2])],
            ScenarioKind::SmoothBreak => {
                let mut v = vec![(a.clone(), s[0])];
                for i in 1..=self.mix_steps {
                    let w = i as f64 / self.mix_steps as f64;
                    let mixed = VarParams::interpolate(a, b, w)?;
                    if !mixed.is_stable() {
                        return Err(Error::UnstableParams {
                            spectral_radius: mixed.spectral_radius(),
                        });
                    }
                    v.push((mixed, 1));
                }
                v.push((b.clone(), s[2]));
                v
            }
        })
    }

    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// One simulated panel; replication `i` draws from its own random stream.
pub fn generate_scenario(spec: &ScenarioSpec, replication: usize) -> Result<TimeSeriesPanel> {
    let schedule = spec.schedule()?;
    let segments: Vec<(&VarParams, usize)> = schedule.iter().map(|(p, n)| (p, *n)).collect();
    let mut rng = sample_rng(spec.seed, replication as u64);
    let values = simulate_segments(&segments, spec.burn_in, SimulateOptions::default(), &mut rng)?;
    let d = values.ncols();
    TimeSeriesPanel::new(
        (1..=values.nrows() as i64).map(TimeLabel::Index).collect(),
        values,
        (1..=d).map(|i| format!("y{i}")).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RhoChoice {
    /// Chosen per replication by forecast MAPE.
    Optimal,
    Fixed(f64),
    /// The most frequent per-replication optimum.
    Modal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub name: String,
    pub rho: RhoChoice,
    pub restrict: bool,
}

impl Variant {
    pub fn new(name: &str, rho: RhoChoice, restrict: bool) -> Self {
        Variant {
            name: name.into(),
            rho,
            restrict,
        }
    }
}

/// Optimal ρ, ρ = 0.5, the modal optimal ρ, and optimal ρ without the jump restriction.
pub fn default_variants() -> Vec<Variant> {
    vec![
        Variant::new("optimal", RhoChoice::Optimal, true),
        Variant::new("rho_0.5", RhoChoice::Fixed(0.5), true),
        Variant::new("modal", RhoChoice::Modal, true),
        Variant::new("optimal_unrestricted", RhoChoice::Optimal, false),
    ]
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub grid: IntervalGrid,
    pub r: f64,
    pub p: usize,
    pub rho_grid: Vec<f64>,
    pub variants: Vec<Variant>,
    pub calib_samples: usize,
    pub calib_seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            grid: IntervalGrid::default_monthly(),
            r: 0.5,
            p: 1,
            rho_grid: default_rho_grid(),
            variants: default_variants(),
            calib_samples: crate::calibrate::DEFAULT_N_SAMPLES,
            calib_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    /// `k_hat[rep][t]`, t indexing `ReplicationSummary::taus`.
    pub k_hat: Vec<Vec<usize>>,
    /// Statistic of the step after the selected window, `lr_next[rep][t]`.
    pub lr_next: Vec<Vec<Option<f64>>>,
    /// ρ used per replication.
    pub rho: Vec<f64>,
    /// Final-step critical value per replication.
    pub zeta_final: Vec<f64>,
    pub k_mean: Vec<f64>,
    pub k_median: Vec<usize>,
    pub lr_q05: Vec<f64>,
    pub lr_median: Vec<f64>,
    pub lr_q95: Vec<f64>,
}

impl VariantSummary {
    fn new(variant: Variant, runs: Vec<(f64, f64, Vec<AdaptiveResult>)>, k_max: usize) -> Self {
        let n_tau = runs.first().map_or(0, |r| r.2.len());
        let k_hat: Vec<Vec<usize>> = runs.iter().map(|r| r.2.iter().map(|a| a.k_hat).collect()).collect();
        let lr_next: Vec<Vec<Option<f64>>> = runs
            .iter()
            .map(|r| r.2.iter().map(|a| a.stat(a.k_hat + 1)).collect())
            .collect();
        let mut k_mean = Vec::with_capacity(n_tau);
        let mut k_median = Vec::with_capacity(n_tau);
        let (mut q05, mut q50, mut q95) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..n_tau {
            let mut ks: Vec<usize> = k_hat.iter().map(|r| r[t]).collect();
            k_mean.push(ks.iter().sum::<usize>() as f64 / ks.len() as f64);
            ks.sort_unstable();
            k_median.push(ks[(ks.len() - 1) / 2].min(k_max));
            let mut lr: Vec<f64> = lr_next.iter().filter_map(|r| r[t]).collect();
            lr.sort_by(f64::total_cmp);
            q05.push(quantile(&lr, 0.05));
            q50.push(quantile(&lr, 0.5));
            q95.push(quantile(&lr, 0.95));
        }
        VariantSummary {
            variant,
            rho: runs.iter().map(|r| r.0).collect(),
            zeta_final: runs.iter().map(|r| r.1).collect(),
            k_hat,
            lr_next,
            k_mean,
            k_median,
            lr_q05: q05,
            lr_median: q50,
            lr_q95: q95,
        }
    }
}

/// Linear-interpolation quantile of sorted data; NaN when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distribution of the step statistics over the τ range of one part of the sample.
#[derive(Debug, Clone, Serialize)]
pub struct PartSummary {
    pub name: String,
    pub tau_range: (usize, usize),
    /// Per step k = 2…n: (k, window length, q05, q25, q50, q75, q95, count).
    pub steps: Vec<(usize, usize, [f64; 5], usize)>,
    /// Share of next-step statistics (first variant) at or below that replication's
    /// final-step critical value.
    pub share_below_final: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub kind: ScenarioKind,
    pub n_replications: usize,
    pub failed: usize,
    /// Study τ (1-based) of each evaluated position.
    pub taus: Vec<usize>,
    /// Observation number (1-based) of each evaluated position.
    pub obs: Vec<usize>,
    pub variants: Vec<VariantSummary>,
    pub parts: Vec<PartSummary>,
    pub modal_rho: Option<f64>,
    pub calibration_fingerprint: String,
    pub spec_fingerprint: String,
}

impl ReplicationSummary {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant.name == name)
    }

    /// Position of study τ in the per-τ vectors.
    pub fn index_of(&self, tau: usize) -> Option<usize> {
        self.taus.iter().position(|&t| t == tau)
    }
}

/// Most frequent value (ties: smallest).
fn mode(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < v.len() {
        let j = v[i..].iter().take_while(|&&x| x == v[i]).count();
        if best.is_none_or(|(_, c)| j > c) {
            best = Some((v[i], j));
        }
        i += j;
    }
    best.map(|b| b.0)
}

struct RepOutcome {
    ladders_stats: Vec<Vec<Option<f64>>>,
    optimal_rho: Option<f64>,
    runs: Vec<Option<(f64, f64, Vec<AdaptiveResult>)>>,
}

fn decide_variant(
    ladders: &[Ladder],
    grid: &IntervalGrid,
    cvs: &PrecomputedCriticalValues,
    rho: f64,
    restrict: bool,
) -> Result<(f64, f64, Vec<AdaptiveResult>)> {
    let cv = cvs
        .get(rho)
        .ok_or_else(|| Error::Config(format!("no critical values for rho={rho}")))?;
    let th = cv.thresholds()?;
    let res = decide_series(ladders, grid, &th, restrict)?;
    Ok((rho, *th.last().unwrap(), res))
}

fn run_replication(
    spec: &ScenarioSpec,
    cfg: &StudyConfig,
    cvs: &PrecomputedCriticalValues,
    rep: usize,
    modal: Option<f64>,
) -> Result<RepOutcome> {
    let panel = generate_scenario(spec, rep)?;
    let taus: Vec<usize> = (cfg.grid.first_tau(cfg.p)..panel.len()).collect();
    let ladders = build_ladders(&panel, &taus, &cfg.grid, cfg.r, cfg.p)?;
    let needs_optimal = cfg.variants.iter().any(|v| v.rho == RhoChoice::Optimal) || modal.is_none();
    let optimal_rho = if needs_optimal {
        Some(rho_table(&panel, &ladders, &cfg.grid, &cfg.rho_grid, cvs)?.chosen)
    } else {
        None
    };
    let runs = cfg
        .variants
        .iter()
        .map(|v| {
            let rho = match v.rho {
                RhoChoice::Optimal => optimal_rho,
                RhoChoice::Fixed(x) => Some(x),
                RhoChoice::Modal => modal,
            };
            rho.map(|rho| decide_variant(&ladders, &cfg.grid, cvs, rho, v.restrict))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    let ladders_stats = ladders
        .iter()
        .map(|l| (2..=cfg.grid.len()).map(|k| l.stat(k)).collect())
        .collect();
    Ok(RepOutcome {
        ladders_stats,
        optimal_rho,
        runs,
    })
}

/// Runs every variant on `spec.n_replications` simulated panels.
///
/// Critical values are calibrated once with `theta_a` as the homogeneous truth.
pub fn run_study(spec: &ScenarioSpec, cfg: &StudyConfig) -> Result<ReplicationSummary> {
    spec.validate()?;
    if cfg.variants.is_empty() {
        return Err(Error::Config("no study variants".into()));
    }
    let calib_cfg = CalibrationConfig::new(spec.theta_a.clone(), cfg.grid.clone(), cfg.r, 0.5)
        .with_samples(cfg.calib_samples)
        .with_seed(cfg.calib_seed);
    if calib_cfg.theta_star.order() != cfg.p {
        return Err(Error::Config("study lag order differs from the scenario's".into()));
    }
    let calibrator = Calibrator::new(&calib_cfg)?;
    let mut rhos = cfg.rho_grid.clone();
    for v in &cfg.variants {
        if let RhoChoice::Fixed(x) = v.rho {
            rhos.push(x);
        }
    }
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    let cvs = PrecomputedCriticalValues::build(&calibrator, &rhos)?;

    let n = spec.n_replications;
    let first: Vec<Result<RepOutcome>> = (0..n)
        .into_par_iter()
        .map(|rep| run_replication(spec, cfg, &cvs, rep, None))
        .collect();
    let mut outcomes: Vec<Option<RepOutcome>> = Vec::with_capacity(n);
    let mut failed = 0;
    for (rep, o) in first.into_iter().enumerate() {
        match o {
            Ok(o) => outcomes.push(Some(o)),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failed += 1;
                outcomes.push(None);
            }
        }
    }
    if failed * 50 > n {
        return Err(Error::TooManyFailures {
            failed,
            total: n,
            limit: n / 50,
        });
    }
    let optimal: Vec<f64> = outcomes.iter().flatten().filter_map(|o| o.optimal_rho).collect();
    let modal_rho = mode(&optimal);
    if let Some(m) = modal_rho {
        if cfg.variants.iter().any(|v| v.rho == RhoChoice::Modal) {
            let second: Vec<Option<Result<RepOutcome>>> = (0..n)
                .into_par_iter()
                .map(|rep| {
                    outcomes[rep]
                        .as_ref()
                        .map(|_| run_replication(spec, cfg, &cvs, rep, Some(m)))
                })
                .collect();
            for (rep, o) in second.into_iter().enumerate() {
                if let Some(o) = o {
                    outcomes[rep] = Some(o?);
                }
            }
        }
    }
    let kept: Vec<RepOutcome> = outcomes.into_iter().flatten().collect();

    let first_tau = cfg.grid.first_tau(cfg.p);
    let n_tau = spec.total_len() - first_tau;
    let taus: Vec<usize> = (1..=n_tau).collect();
    let obs: Vec<usize> = (0..n_tau).map(|t| first_tau + t + 1).collect();

    let mut variants = Vec::with_capacity(cfg.variants.len());
    for (vi, v) in cfg.variants.iter().enumerate() {
        let runs: Vec<_> = kept.iter().filter_map(|o| o.runs[vi].clone()).collect();
        variants.push(VariantSummary::new(v.clone(), runs, cfg.grid.k_max()));
    }

    let names = ["homogeneous", "heterogeneous"];
    let parts = spec
        .kind
        .parts()
        .iter()
        .zip(names)
        .map(|(&(lo, hi), name)| {
            let hi = hi.min(n_tau);
            let steps = (2..=cfg.grid.len())
                .map(|k| {
                    let mut vals: Vec<f64> = kept
                        .iter()
                        .flat_map(|o| o.ladders_stats[lo - 1..hi].iter().filter_map(move |s| s[k - 2]))
                        .collect();
                    vals.sort_by(f64::total_cmp);
                    let qs = [0.05, 0.25, 0.5, 0.75, 0.95].map(|q| quantile(&vals, q));
                    (k, cfg.grid.length(k), qs, vals.len())
                })
                .collect();
            let primary = &variants[0];
            let mut below = 0;
            let mut cells = 0;
            for (rep, row) in primary.lr_next.iter().enumerate() {
                for v in row[lo - 1..hi].iter().flatten() {
                    cells += 1;
                    if *v <= primary.zeta_final[rep] {
                        below += 1;
                    }
                }
            }
            PartSummary {
                name: name.into(),
                tau_range: (lo, hi),
                steps,
                share_below_final: if cells == 0 { f64::NAN } else { below as f64 / cells as f64 },
                n_cells: cells,
            }
        })
        .collect();

    Ok(ReplicationSummary {
        kind: spec.kind,
        n_replications: n,
        failed,
        taus,
        obs,
        variants,
        parts,
        modal_rho,
        calibration_fingerprint: calib_cfg.fingerprint(),
        spec_fingerprint: spec.fingerprint(),
    })
}

/// Writes the figure data of a study into `dir` and returns the written paths.
///
/// Files: `series_sample.csv` (replication 0), `intervals.csv` (per-τ mean/median of each
/// variant), `lr_bands.csv`, `a2_<part>.csv`, `rho_choices.csv` and `manifest.json`.
pub fn write_study(spec: &ScenarioSpec, summary: &ReplicationSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let path = dir.join("series_sample.csv");
    write_panel_csv(&generate_scenario(spec, 0)?, std::fs::File::create(&path)?)?;
    files.push(path);

    let path = dir.join("intervals.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["tau".to_string(), "obs".to_string()];
    for v in &summary.variants {
        header.push(format!("{}_mean", v.variant.name));
        header.push(format!("{}_median", v.variant.name));
    }
    w.write_record(&header)?;
    for (t, tau) in summary.taus.iter().enumerate() {
        let mut rec = vec![tau.to_string(), summary.obs[t].to_string()];
        for v in &summary.variants {
            rec.push(format!("{}", v.k_mean[t]));
            rec.push(v.k_median[t].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push(path);

    let path = dir.join("lr_bands.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["tau", "obs", "variant", "q05", "median", "q95", "zeta_final_median"])?;
    for v in &summary.variants {
        let mut z = v.zeta_final.clone();
        z.sort_by(f64::total_cmp);
        let zm = quantile(&z, 0.5);
        for (t, tau) in summary.taus.iter().enumerate() {
            w.write_record(&[
                tau.to_string(),
                summary.obs[t].to_string(),
                v.variant.name.clone(),
                format!("{}", v.lr_q05[t]),
                format!("{}", v.lr_median[t]),
                format!("{}", v.lr_q95[t]),
                format!("{zm}"),
            ])?;
        }
    }
    w.flush()?;
    files.push(path);

    for part in &summary.parts {
        let path = dir.join(format!("a2_{}.csv", part.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["step", "length", "q05", "q25", "q50", "q75", "q95", "count"])?;
        for (k, m, qs, n) in &part.steps {
            let mut rec = vec![k.to_string(), m.to_string()];
            rec.extend(qs.iter().map(|q| format!("{q}")));
            rec.push(n.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        files.push(path);
    }

    let path = dir.join("rho_choices.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["replication".to_string()];
    header.extend(summary.variants.iter().map(|v| v.variant.name.clone()));
    w.write_record(&header)?;
    let reps = summary.variants.iter().map(|v| v.rho.len()).max().unwrap_or(0);
    for rep in 0..reps {
        let mut rec = vec![rep.to_string()];
        rec.extend(
            summary
                .variants
                .iter()
                .map(|v| v.rho.get(rep).map(|x| format!("{x}")).unwrap_or_default()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push(path);

    let path = dir.join("manifest.json");
    let manifest = serde_json::json!({
        "scenario": format!("{:?}", spec.kind),
        "spec_fingerprint": summary.spec_fingerprint,
        "calibration_fingerprint": summary.calibration_fingerprint,
        "n_replications": summary.n_replications,
        "failed_replications": summary.failed,
        "modal_rho": summary.modal_rho,
        "parts": summary.parts.iter().map(|p| serde_json::json!({
            "name": p.name,
            "tau_range": [p.tau_range.0, p.tau_range.1],
            "share_below_final": p.share_below_final,
            "cells": p.n_cells,
        })).collect::<Vec<_>>(),
        "files": files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    files.push(path);
    Ok(files)
}
