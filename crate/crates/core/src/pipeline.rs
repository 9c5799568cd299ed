//! End-to-end analysis of a panel: calibration, interval detection, crisis indicator
//! and spillover series for every pair of columns (or one joint model).

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::adaptive::{
    build_ladders, decide_series, admissible_taus, rho_table, write_results_csv, AdaptiveResult, RhoSelection,
};
use crate::calibrate::{cache_path, default_cache_dir, load_or_calibrate, CalibrationConfig, Calibrator, CriticalValues};
use crate::config::{RhoMode, RunConfig};
use crate::crisis::CrisisSeries;
use crate::error::{Error, Result};
use crate::fevd::{all_pairs, group_name, group_spillover, SpilloverOptions, SpilloverSeries, WindowSpec};
use crate::panel::{ingest, TimeSeriesPanel};
use crate::var::{fit_var, Interval, VarParams};

/// Detection outcome for one column group.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub name: String,
    pub columns: Vec<usize>,
    pub theta_star: Option<VarParams>,
    pub critvals: Option<CriticalValues>,
    pub rho_selection: Option<RhoSelection>,
    /// Empty when the pair failed; see `error`.
    pub results: Vec<AdaptiveResult>,
    pub error: Option<String>,
}

impl PairResult {
    pub fn rho(&self) -> Option<f64> {
        self.critvals.as_ref().map(|c| c.rho)
    }

    pub fn restricted_count(&self) -> usize {
        self.results.iter().filter(|r| r.restricted).count()
    }

    pub fn fit_failures(&self) -> usize {
        self.results.iter().filter(|r| r.fit_failed_at.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub panel: TimeSeriesPanel,
    /// Evaluated rows (0-based).
    pub taus: Vec<usize>,
    pub pairs: Vec<PairResult>,
    pub crisis: CrisisSeries,
    pub lhi: SpilloverSeries,
    pub baselines: Vec<(usize, SpilloverSeries)>,
}

/// Full-sample estimate used as the homogeneous truth for calibration.
pub fn full_sample_theta(panel: &TimeSeriesPanel, p: usize) -> Result<VarParams> {
    let n = panel.len();
    if n <= p {
        return Err(Error::InsufficientHistory {
            end: n.saturating_sub(1),
            length: 1,
            needed: p + 1,
            available: n,
        });
    }
    let fit = fit_var(panel, Interval::new(n - 1, n - p), p)?;
    if !fit.params.is_stable() {
        return Err(Error::UnstableParams {
            spectral_radius: fit.params.spectral_radius(),
        });
    }
    Ok(fit.params)
}

fn calibration_config(theta: VarParams, cfg: &RunConfig, rho: f64) -> CalibrationConfig {
    let mut c = CalibrationConfig::new(theta, cfg.grid.clone(), cfg.r, rho)
        .with_samples(cfg.calib_samples)
        .with_seed(cfg.seed);
    c.burn_in = cfg.burn_in;
    c
}

fn cache_dir(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.calib_cache.clone().or_else(default_cache_dir)
}

/// Calibration, ρ choice and restricted detection for one sub-panel.
pub fn detect_group(
    sub: &TimeSeriesPanel,
    cfg: &RunConfig,
) -> Result<(VarParams, CriticalValues, Option<RhoSelection>, Vec<AdaptiveResult>)> {
    let theta = full_sample_theta(sub, cfg.p).map_err(|e| e.context("full-sample fit"))?;
    let taus = admissible_taus(sub, &cfg.grid, cfg.p);
    if taus.is_empty() {
        return Err(Error::InsufficientHistory {
            end: sub.len().saturating_sub(1),
            length: cfg.grid.max_len(),
            needed: cfg.grid.max_len() + cfg.p,
            available: sub.len(),
        });
    }
    let ladders = build_ladders(sub, &taus, &cfg.grid, cfg.r, cfg.p).map_err(|e| e.context("interval search"))?;
    let dir = cache_dir(cfg);
    let (critvals, selection) = match &cfg.rho {
        RhoMode::Fixed(rho) => {
            let cc = calibration_config(theta.clone(), cfg, *rho);
            let cv = load_or_calibrate(&cc, dir.as_deref()).map_err(|e| e.context("calibration"))?;
            (cv, None)
        }
        RhoMode::Search(grid) => {
            let cc = calibration_config(theta.clone(), cfg, grid[0]);
            let calibrator = Calibrator::new(&cc).map_err(|e| e.context("calibration"))?;
            let sel = rho_table(sub, &ladders, &cfg.grid, grid, &calibrator).map_err(|e| e.context("rho selection"))?;
            let cv = calibrator.solve(sel.chosen).map_err(|e| e.context("calibration"))?;
            if let Some(dir) = &dir {
                cv.save(&cache_path(dir, &cc.with_rho(sel.chosen)))?;
            }
            (cv, Some(sel))
        }
    };
    let th = critvals.thresholds()?;
    let results = decide_series(&ladders, &cfg.grid, &th, true).map_err(|e| e.context("jump restriction"))?;
    Ok((theta, critvals, selection, results))
}

/// Runs every stage on an in-memory panel.
pub fn analyze(panel: &TimeSeriesPanel, cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    if panel.dim() < 2 {
        return Err(Error::Config("need at least two series".into()));
    }
    let groups: Vec<Vec<usize>> = if cfg.joint {
        vec![(0..panel.dim()).collect()]
    } else {
        all_pairs(panel.dim())
    };
    let taus = admissible_taus(panel, &cfg.grid, cfg.p);
    if taus.is_empty() {
        return Err(Error::InsufficientHistory {
            end: panel.len().saturating_sub(1),
            length: cfg.grid.max_len(),
            needed: cfg.grid.max_len() + cfg.p,
            available: panel.len(),
        });
    }

    let pairs: Vec<PairResult> = groups
        .par_iter()
        .map(|g| {
            let name = group_name(panel, g);
            let outcome = panel.select(g).and_then(|sub| detect_group(&sub, cfg));
            match outcome {
                Ok((theta, cv, sel, results)) => PairResult {
                    name,
                    columns: g.clone(),
                    theta_star: Some(theta),
                    critvals: Some(cv),
                    rho_selection: sel,
                    results,
                    error: None,
                },
                Err(e) => {
                    log::warn!("pair {name} skipped: {e}");
                    PairResult {
                        name,
                        columns: g.clone(),
                        theta_star: None,
                        critvals: None,
                        rho_selection: None,
                        results: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    if pairs.iter().all(|p| p.error.is_some()) {
        let first = pairs[0].error.clone().unwrap_or_default();
        return Err(Error::EmptyPairSet.context(format!("every pair failed (first: {}: {first})", pairs[0].name)));
    }

    let k_hats: Vec<Vec<Option<usize>>> = pairs
        .iter()
        .map(|p| {
            if p.results.is_empty() {
                vec![None; taus.len()]
            } else {
                p.results.iter().map(|r| Some(r.k_hat)).collect()
            }
        })
        .collect();
    let labels = taus.iter().map(|&t| panel.timestamps()[t]).collect();
    let crisis = CrisisSeries::from_indices(
        labels,
        pairs.iter().map(|p| p.name.clone()).collect(),
        &k_hats,
        cfg.grid.k_max(),
    )
    .map_err(|e| e.context("crisis indicator"))?;

    let opts = SpilloverOptions {
        horizon: cfg.horizon,
        p: cfg.p,
        normalizer: cfg.normalizer,
    };
    let windows = WindowSpec::PerGroup(
        pairs
            .iter()
            .map(|p| {
                if p.results.is_empty() {
                    vec![None; taus.len()]
                } else {
                    p.results.iter().map(|r| Some(r.m_hat)).collect()
                }
            })
            .collect(),
    );
    let lhi = group_spillover(panel, &groups, &taus, &windows, opts).map_err(|e| e.context("spillover"))?;
    let baselines = cfg
        .baseline_windows()
        .into_iter()
        .map(|w| {
            group_spillover(panel, &groups, &taus, &WindowSpec::Fixed(w), opts)
                .map(|s| (w, s))
                .map_err(|e| e.context(format!("rolling spillover w={w}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelineOutput {
        panel: panel.clone(),
        taus,
        pairs,
        crisis,
        lhi,
        baselines,
    })
}

/// Writes intervals.csv, crisis.csv, spillover_lhi.csv, spillover_rw_{w}.csv and
/// run_manifest.json into `dir`.
pub fn write_outputs(out: &PipelineOutput, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let create = |name: &str| -> Result<(PathBuf, std::fs::File)> {
        let path = dir.join(name);
        let f = std::fs::File::create(&path)?;
        Ok((path, f))
    };

    let (path, f) = create("intervals.csv")?;
    let series: Vec<(Option<String>, &[AdaptiveResult])> = out
        .pairs
        .iter()
        .filter(|p| !p.results.is_empty())
        .map(|p| (Some(p.name.clone()), p.results.as_slice()))
        .collect();
    write_results_csv(f, out.panel.timestamps(), &cfg.grid, &series)?;
    files.push(path);

    let (path, f) = create("crisis.csv")?;
    out.crisis.write_csv(f)?;
    files.push(path);

    let (path, f) = create("spillover_lhi.csv")?;
    out.lhi.write_csv(f)?;
    files.push(path);

    for (w, s) in &out.baselines {
        let (path, f) = create(&format!("spillover_rw_{w}.csv"))?;
        s.write_csv(f)?;
        files.push(path);
    }

    let first = out.taus[0];
    let last = *out.taus.last().unwrap();
    let pairs: Vec<_> = out
        .pairs
        .iter()
        .map(|p| {
            json!({
                "pair": p.name,
                "status": if p.error.is_some() { "failed" } else { "ok" },
                "error": p.error,
                "rho": p.rho(),
                "zeta": p.critvals.as_ref().map(|c| &c.zeta),
                "calibration_fingerprint": p.critvals.as_ref().map(|c| &c.fingerprint),
                "theta_star": p.theta_star,
                "restricted_positions": p.restricted_count(),
                "fit_failures": p.fit_failures(),
            })
        })
        .collect();
    let mut spill = vec![json!({"file": "spillover_lhi.csv", "flagged_cells": out.lhi.flagged_count()})];
    for (w, s) in &out.baselines {
        spill.push(json!({"file": format!("spillover_rw_{w}.csv"), "flagged_cells": s.flagged_count()}));
    }
    let mut names: Vec<String> = files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.push("run_manifest.json".into());
    let manifest = json!({
        "config": cfg.to_text(),
        "observations": out.panel.len(),
        "series": out.panel.names(),
        "mode": if cfg.joint { "joint" } else { "pairwise" },
        "first_tau": out.panel.timestamps()[first].to_string(),
        "last_tau": out.panel.timestamps()[last].to_string(),
        "evaluated_positions": out.taus.len(),
        "burn_in_discarded": first,
        "pairs": pairs,
        "spillover": spill,
        "crisis_positions_with_missing_pairs": out.crisis.coverage.iter().filter(|c| **c < 1.0).count(),
        "files": names,
    });
    let path = dir.join("run_manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    files.push(path);
    Ok(files)
}

/// Ingests `cfg.input`, runs every stage and writes the outputs to `cfg.out_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<(PipelineOutput, Vec<PathBuf>)> {
    cfg.validate()?;
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    let panel = ingest(input, cfg.columns.as_deref()).map_err(|e| e.context(format!("reading {}", input.display())))?;
    let out = analyze(&panel, cfg)?;
    let files = write_outputs(&out, cfg, &cfg.out_dir)?;
    Ok((out, files))
}
