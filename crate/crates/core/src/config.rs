//! Run configuration and its flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! input = data/epu.csv
//! columns = US,DE,JP
//! grid = 12,15,19,23,29,37,46
//! grid = geometric:12,1.25,7
//! rho = search
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adaptive::{default_rho_grid, IntervalGrid};
use crate::calibrate::{DEFAULT_N_SAMPLES, MIN_N_SAMPLES};
use crate::error::{Error, Result};
use crate::fevd::{SigmaNormalizer, DEFAULT_HORIZON};
use crate::var::DEFAULT_BURN_IN;

#[derive(Debug, Clone, PartialEq)]
pub enum RhoMode {
    Fixed(f64),
    /// Pick by forecast MAPE over the listed values.
    Search(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub columns: Option<Vec<String>>,
    pub p: usize,
    pub grid: IntervalGrid,
    pub r: f64,
    pub rho: RhoMode,
    pub horizon: usize,
    pub seed: u64,
    pub calib_samples: usize,
    pub burn_in: usize,
    pub out_dir: PathBuf,
    /// Rolling-window lengths; `None` means the shortest and second-longest grid lengths.
    pub baselines: Option<Vec<usize>>,
    pub joint: bool,
    pub calib_cache: Option<PathBuf>,
    pub normalizer: SigmaNormalizer,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            columns: None,
            p: 1,
            grid: IntervalGrid::default_monthly(),
            r: 0.5,
            rho: RhoMode::Search(default_rho_grid()),
            horizon: DEFAULT_HORIZON,
            seed: 0,
            calib_samples: DEFAULT_N_SAMPLES,
            burn_in: DEFAULT_BURN_IN,
            out_dir: PathBuf::from("out"),
            baselines: None,
            joint: false,
            calib_cache: None,
            normalizer: SigmaNormalizer::Variance,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse_num(key, x)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "input" => self.input = Some(PathBuf::from(v)),
            "columns" => {
                self.columns = if v.is_empty() {
                    None
                } else {
                    Some(v.split(',').map(|s| s.trim().to_string()).collect())
                }
            }
            "p" => self.p = parse_num("p", v)?,
            "grid" => {
                self.grid = match v {
                    "default" => IntervalGrid::default_monthly(),
                    "literature" => IntervalGrid::literature(),
                    _ => match v.strip_prefix("geometric:") {
                        Some(g) => {
                            let parts: Vec<&str> = g.split(',').collect();
                            if parts.len() != 3 {
                                return Err(Error::Config("grid: expected geometric:m0,a,count".into()));
                            }
                            IntervalGrid::geometric(
                                parse_num("grid", parts[0])?,
                                parse_num("grid", parts[1])?,
                                parse_num("grid", parts[2])?,
                            )?
                        }
                        None => IntervalGrid::new(parse_list("grid", v)?)?,
                    },
                }
            }
            "r" => self.r = parse_num("r", v)?,
            "rho" => {
                self.rho = match v {
                    "search" => match &self.rho {
                        RhoMode::Search(g) => RhoMode::Search(g.clone()),
                        RhoMode::Fixed(_) => RhoMode::Search(default_rho_grid()),
                    },
                    _ => RhoMode::Fixed(parse_num("rho", v)?),
                }
            }
            "rho_grid" => self.rho = RhoMode::Search(parse_list("rho_grid", v)?),
            "horizon" => self.horizon = parse_num("horizon", v)?,
            "seed" => self.seed = parse_num("seed", v)?,
            "calib_samples" => self.calib_samples = parse_num("calib_samples", v)?,
            "burn_in" => self.burn_in = parse_num("burn_in", v)?,
            "out" | "out_dir" => self.out_dir = PathBuf::from(v),
            "baselines" => {
                self.baselines = if v == "auto" {
                    None
                } else {
                    Some(parse_list("baselines", v)?)
                }
            }
            "joint" => self.joint = parse_bool("joint", v)?,
            "calib_cache" => self.calib_cache = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "normalizer" => {
                self.normalizer = match v {
                    "variance" => SigmaNormalizer::Variance,
                    "stddev" => SigmaNormalizer::StdDev,
                    _ => return Err(Error::Config(format!("normalizer: expected variance or stddev, got {v:?}"))),
                }
            }
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Serializes every field; `parse(to_text())` reproduces the configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(i) = &self.input {
            let _ = writeln!(s, "input = {}", i.display());
        }
        if let Some(c) = &self.columns {
            let _ = writeln!(s, "columns = {}", c.join(","));
        }
        let _ = writeln!(s, "p = {}", self.p);
        match self.grid.generator() {
            Some((m0, a)) => {
                let _ = writeln!(s, "grid = geometric:{m0},{a},{}", self.grid.len());
            }
            None => {
                let _ = writeln!(s, "grid = {}", join(self.grid.lengths()));
            }
        }
        let _ = writeln!(s, "r = {}", self.r);
        match &self.rho {
            RhoMode::Fixed(x) => {
                let _ = writeln!(s, "rho = {x}");
            }
            RhoMode::Search(g) => {
                let _ = writeln!(s, "rho_grid = {}", join(g));
            }
        }
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "calib_samples = {}", self.calib_samples);
        let _ = writeln!(s, "burn_in = {}", self.burn_in);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        match &self.baselines {
            Some(b) => {
                let _ = writeln!(s, "baselines = {}", join(b));
            }
            None => {
                let _ = writeln!(s, "baselines = auto");
            }
        }
        let _ = writeln!(s, "joint = {}", self.joint);
        if let Some(c) = &self.calib_cache {
            let _ = writeln!(s, "calib_cache = {}", c.display());
        }
        let norm = match self.normalizer {
            SigmaNormalizer::Variance => "variance",
            SigmaNormalizer::StdDev => "stddev",
        };
        let _ = writeln!(s, "normalizer = {norm}");
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("p must be at least 1".into()));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("r must be positive, got {}", self.r)));
        }
        let rhos = match &self.rho {
            RhoMode::Fixed(x) => std::slice::from_ref(x),
            RhoMode::Search(g) => g.as_slice(),
        };
        if rhos.is_empty() {
            return Err(Error::Config("empty rho grid".into()));
        }
        if let Some(x) = rhos.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::Config(format!("rho {x} outside (0, 1]")));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.calib_samples < MIN_N_SAMPLES {
            return Err(Error::Config(format!("calib_samples must be at least {MIN_N_SAMPLES}")));
        }
        if self.baselines.as_ref().is_some_and(|b| b.is_empty() || b.contains(&0)) {
            return Err(Error::Config("baselines must be positive window lengths".into()));
        }
        Ok(())
    }

    /// Rolling-window lengths for the baselines.
    pub fn baseline_windows(&self) -> Vec<usize> {
        match &self.baselines {
            Some(b) => b.clone(),
            None => {
                let l = self.grid.lengths();
                vec![l[0], l[l.len() - 2]]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.p, 1);
        assert_eq!(c.r, 0.5);
        assert_eq!(c.horizon, 12);
        assert_eq!(c.calib_samples, 10_000);
        assert_eq!(c.baseline_windows(), vec![12, 37]);
        match &c.rho {
            RhoMode::Search(g) => {
                assert_eq!(g.len(), 100);
                assert!(g.contains(&0.5));
            }
            RhoMode::Fixed(_) => panic!("expected search"),
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut c = RunConfig::default();
        c.input = Some(PathBuf::from("data/x.csv"));
        c.columns = Some(vec!["US".into(), "DE".into()]);
        c.grid = IntervalGrid::literature();
        c.rho = RhoMode::Fixed(0.088);
        c.r = 0.1 + 0.2;
        c.seed = 42;
        c.baselines = Some(vec![18, 57]);
        c.joint = true;
        c.calib_cache = Some(PathBuf::from("/tmp/cache"));
        c.normalizer = SigmaNormalizer::StdDev;
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(RunConfig::parse("nonsense = 1").is_err());
        assert!(RunConfig::parse("rho = 1.5").is_err());
        assert!(RunConfig::parse("p = x").is_err());
        assert!(RunConfig::parse("just text").is_err());
        assert!(RunConfig::parse("calib_samples = 10").is_err());
        let c = RunConfig::parse("# comment\n\ngrid = literature\nrho = search\n").unwrap();
        assert_eq!(c.grid.lengths()[0], 18);
        assert_eq!(c.baseline_windows(), vec![18, 57]);
    }
}
