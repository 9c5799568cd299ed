//! Monte-Carlo risk bounds and critical values for the adaptive search.
//!
//! N homogeneous paths of length `max(grid) + p` are simulated from θ*, with all
//! windows anchored at the last observation. For each path the consecutive-fit
//! statistics, the cross terms `|ℓ(I_k, θ̃_k) − ℓ(I_k, θ̃_s)|^r` (s < k) and the
//! deviations from θ* are computed once; critical values for any ρ are then found
//! by bisection on the precomputed numbers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{CriticalValueSource, IntervalGrid};
use crate::error::{Error, Result};
use crate::panel::TimeSeriesPanel;
use crate::var::{fit_var, log_likelihood, powered, simulate_segments, Interval, SimulateOptions, VarParams};

pub const DEFAULT_N_SAMPLES: usize = 10_000;
pub const MIN_N_SAMPLES: usize = 100;
pub const ZETA_TOL: f64 = 1e-3;
pub const MAX_BISECTION_ITER: usize = 100;
/// Environment variable naming the default calibration cache directory.
pub const CACHE_ENV: &str = "LOCALVAR_CALIB_CACHE";

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub theta_star: VarParams,
    pub grid: IntervalGrid,
    pub r: f64,
    pub rho: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl CalibrationConfig {
    pub fn new(theta_star: VarParams, grid: IntervalGrid, r: f64, rho: f64) -> Self {
        CalibrationConfig {
            theta_star,
            grid,
            r,
            rho,
            n_samples: DEFAULT_N_SAMPLES,
            seed: 0,
            burn_in: crate::var::DEFAULT_BURN_IN,
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < MIN_N_SAMPLES {
            return Err(Error::Config(format!(
                "n_samples must be at least {MIN_N_SAMPLES}, got {}",
                self.n_samples
            )));
        }
        validate_r_rho(self.r, self.rho)?;
        if !self.theta_star.is_stable() {
            return Err(Error::UnstableParams {
                spectral_radius: self.theta_star.spectral_radius(),
            });
        }
        Ok(())
    }

    /// SHA-256 over every input that affects the result.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            theta_star: &'a VarParams,
            grid: &'a [usize],
            r: f64,
            rho: f64,
            n_samples: usize,
            seed: u64,
            burn_in: usize,
        }
        let doc = Doc {
            theta_star: &self.theta_star,
            grid: self.grid.lengths(),
            r: self.r,
            rho: self.rho,
            n_samples: self.n_samples,
            seed: self.seed,
            burn_in: self.burn_in,
        };
        let bytes = serde_json::to_vec(&doc).expect("fingerprint document serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn validate_r_rho(r: f64, rho: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Config(format!("power r must be positive, got {r}")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(())
}

/// Calibrated thresholds ζ_k for steps k = 2…n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValues {
    pub fingerprint: String,
    pub grid: Vec<usize>,
    pub r: f64,
    pub rho: f64,
    pub zeta: BTreeMap<usize, f64>,
    pub risk_bounds: BTreeMap<usize, f64>,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub p: Option<usize>,
}

impl CriticalValues {
    /// Same threshold at every step; no calibration behind it.
    pub fn constant(grid: &IntervalGrid, r: f64, value: f64) -> Self {
        CriticalValues {
            fingerprint: "constant".into(),
            grid: grid.lengths().to_vec(),
            r,
            rho: f64::NAN,
            zeta: (2..=grid.len()).map(|k| (k, value)).collect(),
            risk_bounds: BTreeMap::new(),
            n_samples: 0,
            seed: 0,
            d: None,
            p: None,
        }
    }

    /// ζ_2 … ζ_n in step order.
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        (2..=self.grid.len())
            .map(|k| {
                self.zeta
                    .get(&k)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("critical value for step {k} missing")))
            })
            .collect()
    }

    pub fn zeta(&self, k: usize) -> Option<f64> {
        self.zeta.get(&k).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cv: CriticalValues = serde_json::from_str(s)?;
        cv.thresholds()?;
        Ok(cv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        CriticalValues::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Checks that these values were produced for the given search settings.
    pub fn check_compatible(&self, grid: &IntervalGrid, r: f64, d: usize, p: usize) -> Result<()> {
        if self.grid != grid.lengths() {
            return Err(Error::Config(format!(
                "critical values are for grid {:?}, not {:?}",
                self.grid,
                grid.lengths()
            )));
        }
        if (self.r - r).abs() > 1e-12 {
            return Err(Error::Config(format!("critical values are for r={}, not r={r}", self.r)));
        }
        if let Some(x) = self.d.filter(|&x| x != d) {
            return Err(Error::Config(format!("critical values are for d={x}, not d={d}")));
        }
        if let Some(x) = self.p.filter(|&x| x != p) {
            return Err(Error::Config(format!("critical values are for p={x}, not p={p}")));
        }
        Ok(())
    }
}

/// Precomputed per-sample quantities.
#[derive(Debug, Clone)]
struct SampleStats {
    /// `cross[k − 1][s − 1] = |ℓ(I_k, θ̃_k) − ℓ(I_k, θ̃_s)|^r` for s < k; the consecutive
    /// statistic of step k is `cross[k − 1][k − 2]`.
    cross: Vec<Vec<f64>>,
    /// `rb[k − 1] = |ℓ(I_k, θ̃_k) − ℓ(I_k, θ*)|^r`.
    rb: Vec<f64>,
}

impl SampleStats {
    fn stat(&self, k: usize) -> f64 {
        self.cross[k - 1][k - 2]
    }
}

/// Per-sample RNG: master seed, stream = sample index.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn simulate_sample(config: &CalibrationConfig, index: usize) -> Result<SampleStats> {
    let theta = &config.theta_star;
    let p = theta.order();
    let n = config.grid.max_len() + p;
    let mut rng = sample_rng(config.seed, index as u64);
    let values = simulate_segments(&[(theta, n)], config.burn_in, SimulateOptions::default(), &mut rng)?;
    let panel = TimeSeriesPanel::from_matrix(values)?;
    let tau = n - 1;
    let kn = config.grid.len();
    let mut fits: Vec<VarParams> = Vec::with_capacity(kn);
    let mut own_ll = Vec::with_capacity(kn);
    for k in 1..=kn {
        let fit = fit_var(&panel, Interval::new(tau, config.grid.length(k)), p)?;
        own_ll.push(fit.loglik);
        fits.push(fit.params);
    }
    let mut cross = Vec::with_capacity(kn);
    let mut rb = Vec::with_capacity(kn);
    for k in 1..=kn {
        let iv = Interval::new(tau, config.grid.length(k));
        let row = (1..k)
            .map(|s| Ok(powered(own_ll[k - 1] - log_likelihood(&panel, iv, &fits[s - 1])?, config.r)))
            .collect::<Result<Vec<_>>>()?;
        cross.push(row);
        rb.push(powered(own_ll[k - 1] - log_likelihood(&panel, iv, theta)?, config.r));
    }
    Ok(SampleStats { cross, rb })
}

/// Simulated statistics under θ*, reusable for any ρ.
#[derive(Debug, Clone)]
pub struct Calibrator {
    config: CalibrationConfig,
    samples: Vec<SampleStats>,
    failed: usize,
    risk_bounds: BTreeMap<usize, f64>,
}

impl Calibrator {
    pub fn new(config: &CalibrationConfig) -> Result<Self> {
        config.validate()?;
        let outcomes: Vec<Result<SampleStats>> = (0..config.n_samples)
            .into_par_iter()
            .map(|i| simulate_sample(config, i))
            .collect();
        let mut samples = Vec::with_capacity(outcomes.len());
        let mut failed = 0;
        for (i, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(s) => samples.push(s),
                Err(e) => {
                    log::debug!("calibration sample {i} excluded: {e}");
                    failed += 1;
                }
            }
        }
        let limit = config.n_samples / 100;
        if failed > 0 {
            log::warn!("{failed} of {} calibration samples excluded", config.n_samples);
        }
        if failed * 100 >= config.n_samples {
            return Err(Error::TooManyFailures {
                failed,
                total: config.n_samples,
                limit,
            });
        }
        let n = samples.len() as f64;
        let risk_bounds = (1..=config.grid.len())
            .map(|k| (k, samples.iter().map(|s| s.rb[k - 1]).sum::<f64>() / n))
            .collect();
        Ok(Calibrator {
            config: config.clone(),
            samples,
            failed,
            risk_bounds,
        })
    }

    pub fn config(&self) -> &CalibrationConfig {
        &self.config
    }

    pub fn failed(&self) -> usize {
        self.failed
    }

    pub fn risk_bounds(&self) -> &BTreeMap<usize, f64> {
        &self.risk_bounds
    }

    /// Step-`k` statistics of every retained sample.
    pub fn step_statistics(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.stat(k)).collect()
    }

    /// Target ρ·(j/K)·R̂B_k where step k is the j = k − 1-th of K = n − 1 tests.
    pub fn target(&self, k: usize, rho: f64) -> f64 {
        let tests = (self.config.grid.len() - 1) as f64;
        rho * (k - 1) as f64 / tests * self.risk_bounds[&k]
    }

    /// Index of the last accepted window of every sample under `fixed = [ζ_2, …]`.
    fn stop_points(&self, fixed: &[f64]) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| {
                let mut last = 1;
                for (i, &z) in fixed.iter().enumerate() {
                    if s.stat(i + 2) <= z {
                        last = i + 2;
                    } else {
                        break;
                    }
                }
                last
            })
            .collect()
    }

    /// Solves for ζ_k given frozen ζ_2 … ζ_{k−1}.
    pub fn calibrate_step(&self, k: usize, fixed: &[f64], rho: f64) -> Result<f64> {
        if k < 2 || k > self.config.grid.len() || fixed.len() != k - 2 {
            return Err(Error::IndexOutOfRange {
                k,
                k_max: self.config.grid.len(),
            });
        }
        validate_r_rho(self.config.r, rho)?;
        let n = self.samples.len() as f64;
        let stops = self.stop_points(fixed);
        // samples that stopped before k contribute a constant
        let mut constant = 0.0;
        let mut active = Vec::new();
        for (s, &stop) in self.samples.iter().zip(&stops) {
            if stop == k - 1 {
                active.push(s.stat(k));
            } else {
                constant += s.cross[k - 1][stop - 1];
            }
        }
        let target = self.target(k, rho);
        let gap = |zeta: f64| -> f64 {
            let rejected: f64 = active.iter().filter(|&&t| t > zeta).sum();
            (constant + rejected) / n - target
        };
        let hi0 = active.iter().copied().fold(0.0_f64, f64::max);
        let g_hi = gap(hi0);
        if g_hi >= 0.0 {
            if target == 0.0 || g_hi > 0.0 {
                log::warn!("step {k}: target {target:.6} not reachable, using largest statistic {hi0:.6}");
            }
            return Ok(hi0);
        }
        let g_lo = gap(0.0);
        if g_lo <= 0.0 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, hi0);
        let (mut glo, mut ghi) = (g_lo, g_hi);
        let mut iter = 0;
        while hi - lo > ZETA_TOL {
            iter += 1;
            if iter > MAX_BISECTION_ITER {
                return Err(Error::NonConvergence { step: k });
            }
            let mid = 0.5 * (lo + hi);
            let g = gap(mid);
            if g > 0.0 {
                lo = mid;
                glo = g;
            } else {
                hi = mid;
                ghi = g;
            }
        }
        Ok(if glo.abs() < ghi.abs() { lo } else { hi })
    }

    /// Sequential calibration of ζ_2 … ζ_n for tuning factor `rho`.
    pub fn solve(&self, rho: f64) -> Result<CriticalValues> {
        let mut fixed = Vec::with_capacity(self.config.grid.len() - 1);
        for k in 2..=self.config.grid.len() {
            let z = self.calibrate_step(k, &fixed, rho)?;
            fixed.push(z);
        }
        let cfg = self.config.clone().with_rho(rho);
        Ok(CriticalValues {
            fingerprint: cfg.fingerprint(),
            grid: cfg.grid.lengths().to_vec(),
            r: cfg.r,
            rho,
            zeta: fixed.iter().enumerate().map(|(i, &z)| (i + 2, z)).collect(),
            risk_bounds: self.risk_bounds.clone(),
            n_samples: cfg.n_samples,
            seed: cfg.seed,
            d: Some(cfg.theta_star.dim()),
            p: Some(cfg.theta_star.order()),
        })
    }
}

impl CriticalValueSource for Calibrator {
    fn critical_values(&self, rho: f64) -> Result<CriticalValues> {
        self.solve(rho)
    }
}

/// R̂B_k = (1/N) Σ_i |ℓ(X_i, I_k, θ̃_k) − ℓ(X_i, I_k, θ*)|^r for k = 1…n.
pub fn estimate_risk_bounds(config: &CalibrationConfig) -> Result<BTreeMap<usize, f64>> {
    Ok(Calibrator::new(config)?.risk_bounds)
}

pub fn calibrate_critical_values(config: &CalibrationConfig) -> Result<CriticalValues> {
    Calibrator::new(config)?.solve(config.rho)
}

/// Cache file for a configuration inside `dir`.
pub fn cache_path(dir: &Path, config: &CalibrationConfig) -> PathBuf {
    dir.join(format!("{}.json", config.fingerprint()))
}

/// Cache directory from the environment, if set.
pub fn default_cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// Loads the critical values for `config` from `dir` or calibrates and stores them.
pub fn load_or_calibrate(config: &CalibrationConfig, dir: Option<&Path>) -> Result<CriticalValues> {
    if let Some(dir) = dir {
        let path = cache_path(dir, config);
        if path.exists() {
            match CriticalValues::load(&path) {
                Ok(cv) if cv.fingerprint == config.fingerprint() => {
                    log::info!("using cached critical values {}", path.display());
                    return Ok(cv);
                }
                Ok(_) => log::warn!("cache file {} has a different fingerprint", path.display()),
                Err(e) => log::warn!("ignoring unreadable cache file {}: {e}", path.display()),
            }
        }
        let cv = calibrate_critical_values(config)?;
        cv.save(&path)?;
        return Ok(cv);
    }
    calibrate_critical_values(config)
}
