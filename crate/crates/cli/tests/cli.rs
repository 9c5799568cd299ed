use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use localvar::{simulate_var, TimeLabel, VarParams};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_localvar"));
    c.env_remove("LOCALVAR_CALIB_CACHE").env("RUST_LOG", "error");
    c
}

/// Monthly panel 2003-01 … 2021-01 (217 rows) from a stable VAR(1).
fn write_panel(dir: &Path, names: &[&str], seed: u64) -> PathBuf {
    let d = names.len();
    let mut phi = vec![0.0; d * d];
    for i in 0..d {
        phi[i * d + i] = 0.6;
        if i + 1 < d {
            phi[i * d + i + 1] = 0.1;
        }
    }
    let mut sigma = vec![0.0; d * d];
    for i in 0..d {
        sigma[i * d + i] = 4.0;
    }
    let intercept: Vec<f64> = (0..d).map(|i| 20.0 + 5.0 * i as f64).collect();
    let params = VarParams::var1(&intercept, &phi, &sigma).unwrap();
    let panel = simulate_var(&params, 217, 100, seed).unwrap();
    let mut text = format!("date,{}\n", names.join(","));
    for t in 0..panel.len() {
        let label = TimeLabel::month(2003, 1).advance(t as i64);
        let row: Vec<String> = (0..d).map(|c| format!("{}", panel.values()[(t, c)])).collect();
        text.push_str(&format!("{label},{}\n", row.join(",")));
    }
    let path = dir.join("panel.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn summary(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bivariate_run_writes_one_pair_and_three_spillover_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), &["US", "DE"], 1);
    let out = dir.path().join("out");
    let v = summary(&run(&[
        "run", "--input", s(&input), "--rho", "0.3", "--calib-samples", "200", "--out", s(&out),
    ]));
    assert_eq!(v["pairs"].as_array().unwrap().len(), 1);
    assert_eq!(v["first_tau"], "2006-11");
    assert_eq!(v["last_tau"], "2021-01");
    let spill: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("spillover_"))
        .collect();
    assert_eq!(spill.len(), 3, "{spill:?}");
    for f in ["intervals.csv", "crisis.csv", "spillover_lhi.csv", "spillover_rw_12.csv", "spillover_rw_37.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["burn_in_discarded"], 46);
    assert_eq!(manifest["evaluated_positions"], 217 - 46);
    assert!(manifest["spillover"].as_array().unwrap().iter().all(|s| s["flagged_cells"].is_u64()));
}

#[test]
fn literature_grid_starts_in_2009() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), &["US", "DE", "JP"], 2);
    let out = dir.path().join("out");
    let v = summary(&run(&[
        "run", "--input", s(&input), "--grid", "literature", "--rho", "0.3", "--calib-samples", "200",
        "--out", s(&out),
    ]));
    assert_eq!(v["first_tau"], "2009-01");
    assert_eq!(v["pairs"].as_array().unwrap().len(), 3);
    assert!(out.join("spillover_rw_18.csv").exists());
    assert!(out.join("spillover_rw_57.csv").exists());
}

#[test]
fn identical_runs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), &["A", "B", "C"], 3);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        summary(&run(&[
            "run", "--input", s(&input), "--rho-grid", "0.2,0.6", "--calib-samples", "150", "--seed", "9",
            "--out", s(out),
        ]));
    }
    for f in ["intervals.csv", "crisis.csv", "spillover_lhi.csv", "spillover_rw_12.csv", "spillover_rw_37.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn calibrate_then_detect_then_crisis() {
    let dir = tempfile::tempdir().unwrap();
    let theta = dir.path().join("theta.json");
    std::fs::write(
        &theta,
        r#"{"d":2,"p":1,"intercept":[29,132],"lags":[[[0.71,0.08],[0.13,0.08]]],"sigma":[[1,0],[0,1]]}"#,
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let cal = dir.path().join("cal");
    let v = summary(&run(&[
        "calibrate", "--theta", s(&theta), "--rho", "0.088", "--calib-samples", "200", "--out", s(&cal),
        "--calib-cache", s(&cache),
    ]));
    let zeta = v["zeta"].as_object().unwrap();
    assert_eq!(zeta.keys().cloned().collect::<Vec<_>>(), ["2", "3", "4", "5", "6", "7"]);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
    let cv = cal.join("critical_values.json");
    assert!(cv.exists());

    let input = write_panel(dir.path(), &["US", "DE"], 4);
    let det = dir.path().join("det");
    let v = summary(&run(&["detect", "--input", s(&input), "--critvals", s(&cv), "--out", s(&det)]));
    assert_eq!(v["positions"], 171);
    let v = summary(&run(&["crisis", "--intervals", s(&det.join("intervals.csv")), "--out", s(&det)]));
    assert_eq!(v["positions"], 171);
    let text = std::fs::read_to_string(det.join("crisis.csv")).unwrap();
    assert!(text.starts_with("date,CI_all,global_mean,global_median,coverage\n"));

    let v = summary(&run(&[
        "spillover", "--input", s(&input), "--intervals", s(&det.join("intervals.csv")), "--window", "24",
        "--out", s(&det),
    ]));
    assert_eq!(v["files"].as_array().unwrap().len(), 2);
}

#[test]
fn detect_without_critical_values_asks_for_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), &["US", "DE"], 5);
    let out = run(&["detect", "--input", s(&input), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("calibrate"), "{err}");
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let gap = dir.path().join("gap.csv");
    std::fs::write(&gap, "date,a,b\n2003-01,1,2\n2003-03,2,3\n").unwrap();
    assert_eq!(run(&["run", "--input", s(&gap)]).status.code(), Some(3));
    assert_eq!(run(&["run", "--rho", "1.7"]).status.code(), Some(2));
    assert_eq!(run(&["run"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    assert_eq!(run(&["run", "--config", s(&cfg)]).status.code(), Some(2));
    let theta = dir.path().join("theta.json");
    std::fs::write(
        &theta,
        r#"{"d":2,"p":1,"intercept":[0,0],"lags":[[[1.0,0.0],[0.0,0.5]]],"sigma":[[1,0],[0,1]]}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["calibrate", "--theta", s(&theta), "--rho", "0.5", "--calib-samples", "100", "--out", s(dir.path())])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_panel(dir.path(), &["US", "DE", "JP"], 6);
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "input = {}\ncolumns = JP,US\nrho = 0.4\ncalib_samples = 150\nbaselines = 20\nout_dir = {}\n",
            input.display(),
            out.display()
        ),
    )
    .unwrap();
    let v = summary(&run(&["run", "--config", s(&cfg), "--seed", "3"]));
    assert_eq!(v["pairs"][0]["pair"], "JP-US");
    assert!(out.join("spillover_rw_20.csv").exists());
    let manifest = std::fs::read_to_string(out.join("run_manifest.json")).unwrap();
    assert!(manifest.contains("seed = 3"));
}

#[test]
fn simulate_writes_study_files() {
    let dir = tempfile::tempdir().unwrap();
    let v = summary(&run(&[
        "simulate", "--scenario", "1", "--reps", "4", "--calib-samples", "150", "--rho-grid", "0.1,0.5",
        "--out", s(dir.path()),
    ]));
    assert_eq!(v["replications"], 4);
    let d = dir.path().join("scenario1_d2");
    for f in ["series_sample.csv", "intervals.csv", "lr_bands.csv", "rho_choices.csv", "manifest.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
}
