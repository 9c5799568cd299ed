use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use localvar::adaptive::{
    admissible_taus, detect, read_intervals_csv, select_rho, write_results_csv, IntervalRecord,
};
use localvar::calibrate::{default_cache_dir, load_or_calibrate, CalibrationConfig, Calibrator, CriticalValues};
use localvar::config::{RhoMode, RunConfig};
use localvar::crisis::CrisisSeries;
use localvar::fevd::{all_pairs, group_name, group_spillover, SpilloverOptions, WindowSpec};
use localvar::pipeline::{full_sample_theta, run_pipeline};
use localvar::scenarios::{run_study, write_study, ScenarioSpec, StudyConfig};
use localvar::{ingest, Error, ErrorKind, Result, TimeLabel, TimeSeriesPanel, VarParams};

/// Options shared by every subcommand. Flags override the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory for cached critical values
    #[arg(long, global = true)]
    calib_cache: Option<PathBuf>,
    /// Input CSV (date column first)
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Comma-separated column names
    #[arg(long, global = true)]
    columns: Option<String>,
    /// Lag order
    #[arg(short, long, global = true)]
    p: Option<usize>,
    /// default, literature, geometric:m0,a,count or a comma-separated list
    #[arg(long, global = true)]
    grid: Option<String>,
    #[arg(long, global = true)]
    r: Option<f64>,
    /// Fixed value or `search`
    #[arg(long, global = true)]
    rho: Option<String>,
    #[arg(long, global = true)]
    rho_grid: Option<String>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    calib_samples: Option<usize>,
    #[arg(long, global = true)]
    burn_in: Option<usize>,
    /// Rolling-window lengths or `auto`
    #[arg(long, global = true)]
    baselines: Option<String>,
    /// One joint model over all columns instead of pairs
    #[arg(long, global = true)]
    joint: bool,
    /// variance or stddev
    #[arg(long, global = true)]
    normalizer: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo critical values for a homogeneous parameter set
    Calibrate {
        /// VarParams JSON file
        #[arg(long)]
        theta: PathBuf,
    },
    /// Interval-of-homogeneity detection on the input panel
    Detect {
        /// Critical values JSON from `calibrate`
        #[arg(long)]
        critvals: Option<PathBuf>,
        /// Calibrate from this parameter set instead
        #[arg(long)]
        theta: Option<PathBuf>,
        /// Skip the jump restriction
        #[arg(long)]
        no_restrict: bool,
    },
    /// Total spillover on fixed or detected windows
    Spillover {
        /// Fixed rolling window (repeatable)
        #[arg(long)]
        window: Vec<usize>,
        /// Intervals file from `detect` or `run`
        #[arg(long)]
        intervals: Option<PathBuf>,
    },
    /// Crisis indicator from an intervals file
    Crisis {
        #[arg(long)]
        intervals: PathBuf,
    },
    /// Monte-Carlo study of a break scenario
    Simulate {
        #[arg(long)]
        scenario: u8,
        #[arg(long, default_value_t = 250)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
    /// Choose ρ by one-step forecast MAPE
    RhoSelect {
        /// Calibrate from this parameter set instead of the full-sample fit
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Full pipeline: calibration, detection, crisis indicator and spillovers
    Run,
}

#[derive(Parser)]
#[command(name = "localvar", version, about = "Adaptive local VAR intervals, spillovers and crisis indicator")]
struct Top {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut set = |key: &str, v: Option<String>| -> Result<()> {
        match v {
            Some(v) => cfg.set(key, &v),
            None => Ok(()),
        }
    };
    set("input", c.input.as_ref().map(|p| p.display().to_string()))?;
    set("columns", c.columns.clone())?;
    set("p", c.p.map(|v| v.to_string()))?;
    set("grid", c.grid.clone())?;
    set("r", c.r.map(|v| v.to_string()))?;
    set("rho_grid", c.rho_grid.clone())?;
    set("rho", c.rho.clone())?;
    set("horizon", c.horizon.map(|v| v.to_string()))?;
    set("seed", c.seed.map(|v| v.to_string()))?;
    set("calib_samples", c.calib_samples.map(|v| v.to_string()))?;
    set("burn_in", c.burn_in.map(|v| v.to_string()))?;
    set("out_dir", c.out.as_ref().map(|p| p.display().to_string()))?;
    set("baselines", c.baselines.clone())?;
    set("calib_cache", c.calib_cache.as_ref().map(|p| p.display().to_string()))?;
    set("normalizer", c.normalizer.clone())?;
    if c.joint {
        cfg.joint = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_panel(cfg: &RunConfig) -> Result<TimeSeriesPanel> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given (use --input or `input =` in the config)".into()))?;
    ingest(input, cfg.columns.as_deref()).map_err(|e| e.context(format!("reading {}", input.display())))
}

fn load_theta(path: &Path) -> Result<VarParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Json(e).context(format!("parsing {}", path.display())))
}

fn fixed_rho(cfg: &RunConfig) -> Result<f64> {
    match cfg.rho {
        RhoMode::Fixed(r) => Ok(r),
        RhoMode::Search(_) => Err(Error::Config("this command needs a fixed --rho".into())),
    }
}

fn cache_dir(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.calib_cache.clone().or_else(default_cache_dir)
}

fn calib_config(theta: VarParams, cfg: &RunConfig, rho: f64) -> CalibrationConfig {
    let mut c = CalibrationConfig::new(theta, cfg.grid.clone(), cfg.r, rho)
        .with_samples(cfg.calib_samples)
        .with_seed(cfg.seed);
    c.burn_in = cfg.burn_in;
    c
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, std::fs::File)> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = std::fs::File::create(&path)?;
    Ok((path, file))
}

fn cmd_calibrate(cfg: &RunConfig, theta: &Path) -> Result<Value> {
    let theta = load_theta(theta)?;
    let rho = fixed_rho(cfg)?;
    let cc = calib_config(theta, cfg, rho);
    let cv = load_or_calibrate(&cc, cache_dir(cfg).as_deref())?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("critical_values.json");
    cv.save(&path)?;
    Ok(json!({
        "command": "calibrate",
        "fingerprint": cv.fingerprint,
        "rho": cv.rho,
        "zeta": cv.zeta,
        "risk_bounds": cv.risk_bounds,
        "n_samples": cv.n_samples,
        "file": path,
    }))
}

fn cmd_detect(cfg: &RunConfig, critvals: Option<&Path>, theta: Option<&Path>, restrict: bool) -> Result<Value> {
    let panel = load_panel(cfg)?;
    let cv = match (critvals, theta) {
        (Some(path), _) => CriticalValues::load(path).map_err(|e| e.context(format!("reading {}", path.display())))?,
        (None, Some(theta)) => {
            let cc = calib_config(load_theta(theta)?, cfg, fixed_rho(cfg)?);
            load_or_calibrate(&cc, cache_dir(cfg).as_deref())?
        }
        (None, None) => {
            return Err(Error::Config(
                "no critical values: run `localvar calibrate --theta PARAMS.json --rho X` first and pass \
                 --critvals, or pass --theta to calibrate here"
                    .into(),
            ))
        }
    };
    cv.check_compatible(&cfg.grid, cfg.r, panel.dim(), cfg.p)?;
    let results = detect(&panel, &cfg.grid, &cv, cfg.r, cfg.p, restrict)?;
    let (path, f) = create(&cfg.out_dir, "intervals.csv")?;
    write_results_csv(f, panel.timestamps(), &cfg.grid, &[(None, &results)])?;
    let mut counts = BTreeMap::new();
    for r in &results {
        *counts.entry(r.k_hat.to_string()).or_insert(0usize) += 1;
    }
    Ok(json!({
        "command": "detect",
        "positions": results.len(),
        "first_tau": panel.timestamps()[results[0].tau].to_string(),
        "last_tau": panel.timestamps()[results[results.len() - 1].tau].to_string(),
        "k_hat_counts": counts,
        "restricted_positions": results.iter().filter(|r| r.restricted).count(),
        "critical_values": cv.fingerprint,
        "file": path,
    }))
}

fn read_intervals(path: &Path) -> Result<Vec<IntervalRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    read_intervals_csv(f).map_err(|e| e.context(format!("reading {}", path.display())))
}

/// Row of each (pair, date) in an intervals file.
type RecordIndex = BTreeMap<(String, TimeLabel), usize>;

/// Group names in file order, the sorted dates and the row index.
fn interval_table(records: &[IntervalRecord]) -> (Vec<String>, Vec<TimeLabel>, RecordIndex) {
    let mut names: Vec<String> = Vec::new();
    let mut labels: Vec<TimeLabel> = Vec::new();
    let mut index = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let name = r.pair.clone().unwrap_or_default();
        if !names.contains(&name) {
            names.push(name.clone());
        }
        if !labels.contains(&r.label) {
            labels.push(r.label);
        }
        index.insert((name, r.label), i);
    }
    labels.sort();
    (names, labels, index)
}

fn cmd_crisis(cfg: &RunConfig, intervals: &Path) -> Result<Value> {
    let records = read_intervals(intervals)?;
    if records.is_empty() {
        return Err(Error::EmptyPairSet.context("intervals file has no rows"));
    }
    let (names, labels, index) = interval_table(&records);
    let k_hats: Vec<Vec<Option<usize>>> = names
        .iter()
        .map(|n| {
            labels
                .iter()
                .map(|l| index.get(&(n.clone(), *l)).map(|&i| records[i].k_hat))
                .collect()
        })
        .collect();
    let display: Vec<String> = names
        .iter()
        .map(|n| if n.is_empty() { "all".to_string() } else { n.clone() })
        .collect();
    let series = CrisisSeries::from_indices(labels, display, &k_hats, cfg.grid.k_max())?;
    let (path, f) = create(&cfg.out_dir, "crisis.csv")?;
    series.write_csv(f)?;
    let mean: Vec<f64> = series.global_mean.iter().flatten().copied().collect();
    let peak = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "command": "crisis",
        "pairs": series.pair_names,
        "positions": series.labels.len(),
        "max_global_mean": if mean.is_empty() { None } else { Some(peak) },
        "positions_with_missing_pairs": series.coverage.iter().filter(|c| **c < 1.0).count(),
        "file": path,
    }))
}

fn cmd_spillover(cfg: &RunConfig, windows: &[usize], intervals: Option<&Path>) -> Result<Value> {
    let panel = load_panel(cfg)?;
    let groups: Vec<Vec<usize>> = if cfg.joint || panel.dim() == 2 {
        vec![(0..panel.dim()).collect()]
    } else {
        all_pairs(panel.dim())
    };
    let opts = SpilloverOptions {
        horizon: cfg.horizon,
        p: cfg.p,
        normalizer: cfg.normalizer,
    };
    let mut files = Vec::new();
    let mut flagged = BTreeMap::new();
    let taus = admissible_taus(&panel, &cfg.grid, cfg.p);
    if taus.is_empty() {
        return Err(Error::InsufficientHistory {
            end: panel.len().saturating_sub(1),
            length: cfg.grid.max_len(),
            needed: cfg.grid.max_len() + cfg.p,
            available: panel.len(),
        });
    }
    if let Some(path) = intervals {
        let records = read_intervals(path)?;
        let (_, _, index) = interval_table(&records);
        let per_group: Vec<Vec<Option<usize>>> = groups
            .iter()
            .map(|g| {
                let name = group_name(&panel, g);
                taus.iter()
                    .map(|&t| {
                        let label = panel.timestamps()[t];
                        index
                            .get(&(name.clone(), label))
                            .or_else(|| index.get(&(String::new(), label)))
                            .map(|&i| records[i].m_hat)
                    })
                    .collect()
            })
            .collect();
        let s = group_spillover(&panel, &groups, &taus, &WindowSpec::PerGroup(per_group), opts)?;
        let (path, f) = create(&cfg.out_dir, "spillover_lhi.csv")?;
        s.write_csv(f)?;
        flagged.insert("spillover_lhi.csv".to_string(), s.flagged_count());
        files.push(path);
    }
    let windows = if windows.is_empty() && intervals.is_none() {
        cfg.baseline_windows()
    } else {
        windows.to_vec()
    };
    for w in windows {
        let s = group_spillover(&panel, &groups, &taus, &WindowSpec::Fixed(w), opts)?;
        let name = format!("spillover_rw_{w}.csv");
        let (path, f) = create(&cfg.out_dir, &name)?;
        s.write_csv(f)?;
        flagged.insert(name, s.flagged_count());
        files.push(path);
    }
    Ok(json!({
        "command": "spillover",
        "groups": groups.iter().map(|g| group_name(&panel, g)).collect::<Vec<_>>(),
        "positions": taus.len(),
        "flagged_cells": flagged,
        "files": files,
    }))
}

fn cmd_simulate(cfg: &RunConfig, scenario: u8, reps: usize, dim: usize) -> Result<Value> {
    let spec = ScenarioSpec::standard(scenario, dim)?
        .with_replications(reps)
        .with_seed(cfg.seed);
    let mut study = StudyConfig {
        grid: cfg.grid.clone(),
        r: cfg.r,
        p: cfg.p,
        calib_samples: cfg.calib_samples,
        calib_seed: cfg.seed,
        ..StudyConfig::default()
    };
    if let RhoMode::Search(g) = &cfg.rho {
        study.rho_grid = g.clone();
    }
    let summary = run_study(&spec, &study)?;
    let dir = cfg.out_dir.join(format!("scenario{scenario}_d{dim}"));
    let files = write_study(&spec, &summary, &dir)?;
    let variants: Vec<Value> = summary
        .variants
        .iter()
        .map(|v| json!({"variant": v.variant.name, "zeta_final": v.zeta_final}))
        .collect();
    Ok(json!({
        "command": "simulate",
        "scenario": scenario,
        "dim": dim,
        "replications": summary.n_replications,
        "failed_replications": summary.failed,
        "modal_rho": summary.modal_rho,
        "variants": variants,
        "files": files,
    }))
}

fn cmd_rho_select(cfg: &RunConfig, theta: Option<&Path>) -> Result<Value> {
    let panel = load_panel(cfg)?;
    let theta = match theta {
        Some(path) => load_theta(path)?,
        None => full_sample_theta(&panel, cfg.p).map_err(|e| e.context("full-sample fit"))?,
    };
    let grid = match &cfg.rho {
        RhoMode::Search(g) => g.clone(),
        RhoMode::Fixed(r) => vec![*r],
    };
    let calibrator = Calibrator::new(&calib_config(theta, cfg, grid[0]))?;
    let sel = select_rho(&panel, &cfg.grid, &grid, cfg.r, cfg.p, &calibrator)?;
    let (path, f) = create(&cfg.out_dir, "rho_selection.csv")?;
    sel.write_csv(f)?;
    let best = sel.table.iter().find(|r| r.rho == sel.chosen);
    Ok(json!({
        "command": "rho-select",
        "chosen": sel.chosen,
        "mape": best.map(|r| r.mape),
        "zeta": best.map(|r| &r.zeta),
        "candidates": sel.table.len(),
        "file": path,
    }))
}

fn cmd_run(cfg: &RunConfig) -> Result<Value> {
    let (out, files) = run_pipeline(cfg)?;
    let pairs: Vec<Value> = out
        .pairs
        .iter()
        .map(|p| json!({"pair": p.name, "rho": p.rho(), "status": if p.error.is_some() { "failed" } else { "ok" }}))
        .collect();
    Ok(json!({
        "command": "run",
        "first_tau": out.panel.timestamps()[out.taus[0]].to_string(),
        "last_tau": out.panel.timestamps()[out.taus[out.taus.len() - 1]].to_string(),
        "pairs": pairs,
        "files": files,
    }))
}

fn dispatch(top: Top) -> Result<Value> {
    let cfg = build_config(&top.common)?;
    match top.command {
        Command::Calibrate { theta } => cmd_calibrate(&cfg, &theta),
        Command::Detect {
            critvals,
            theta,
            no_restrict,
        } => cmd_detect(&cfg, critvals.as_deref(), theta.as_deref(), !no_restrict),
        Command::Spillover { window, intervals } => cmd_spillover(&cfg, &window, intervals.as_deref()),
        Command::Crisis { intervals } => cmd_crisis(&cfg, &intervals),
        Command::Simulate { scenario, reps, dim } => cmd_simulate(&cfg, scenario, reps, dim),
        Command::RhoSelect { theta } => cmd_rho_select(&cfg, theta.as_deref()),
        Command::Run => cmd_run(&cfg),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let top = Top::parse();
    match dispatch(top) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary is valid JSON"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
