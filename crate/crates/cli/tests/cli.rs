use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const KUNDUR_TOML: &str = include_str!("../../core/scenarios/kundur_two_area_hvdc.toml");

fn aclesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aclesim")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p_hvdc(o: &Output) -> f64 {
    let s = stdout(o);
    let line = s.lines().find(|l| l.starts_with("P_HVDC")).expect("P_HVDC line");
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn powerflow_reports_transfer_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = aclesim(&["powerflow", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!((p_hvdc(&o) - 438.0).abs() < 0.05 * 438.0);
    let m = manifest(dir.path());
    assert_eq!(m["command"], "powerflow");
    assert_eq!(m["outputs"], serde_json::json!(["powerflow.csv", "manifest.json"]));
    assert_eq!(m["scenario_sha256"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("powerflow.csv").exists());

    let o = aclesim(&["powerflow", "--out", out, "--set", "acle.k=2"]);
    assert_eq!(code(&o), 0);
    assert!((p_hvdc(&o) - 556.30).abs() < 0.05 * 556.30);
    let m = manifest(dir.path());
    assert_eq!(m["overrides"], serde_json::json!(["acle.k=2"]));
    assert_ne!(m["resolved_scenario_sha256"], m["scenario_sha256"]);
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    // scenario without its [system] section
    let start = KUNDUR_TOML.find("[system]").unwrap();
    let end = KUNDUR_TOML[start..].find("[[buses]]").unwrap() + start;
    let broken = format!("{}{}", &KUNDUR_TOML[..start], &KUNDUR_TOML[end..]);
    let path = dir.path().join("broken.toml");
    fs::write(&path, broken).unwrap();
    let o = aclesim(&["powerflow", "--scenario", path.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("system"), "{}", stderr(&o));

    let cases: [&[&str]; 6] = [
        &["powerflow", "--set", "acle.gain=2", "--out", out],
        &["powerflow", "--set", "acle.k", "--out", out],
        &["powerflow", "--scenario", "no_such_scenario", "--out", out],
        &["sweep", "--t-grid", "0:0:2", "--out", out],
        &["sweep", "--k-list", "1,x", "--out", out],
        &["simulate", "--dt", "-1", "--out", out],
    ];
    for args in cases {
        let o = aclesim(args);
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
    }
    assert_eq!(code(&aclesim(&["frobnicate"])), 1);
    assert_eq!(code(&aclesim(&["--help"])), 0);
}

#[test]
fn simulate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = aclesim(&["simulate", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["termination"]["reason"], "completed");
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let header = trace.lines().next().unwrap();
    for ch in ["p_hvdc", "p_7-8b", "acle_dtheta", "delta_G1", "delta_G3"] {
        assert!(header.split(',').any(|h| h == ch), "{ch}");
    }

    let o = aclesim(&[
        "simulate",
        "--out",
        out,
        "--set",
        "acle.k=4",
        "--set",
        "acle.t=0.75",
        "--set",
        "events.0.clear_after_s=0.4",
    ]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
    assert_eq!(manifest(dir.path())["command"], "simulate");
}

#[test]
fn cct_writes_bracket() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = aclesim(&["cct", "--baseline", "--out", out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("cct.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "constant_p");
    let (cct, lo, hi): (u32, u32, u32) = (row[3].parse().unwrap(), row[4].parse().unwrap(), row[5].parse().unwrap());
    assert_eq!(cct, lo);
    assert_eq!(hi, lo + 1);
    assert_eq!(row[6], "ok");
    assert!(dir.path().join("cct_runs.csv").exists());
}

fn sweep_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for name in ["sweep.csv", "baselines.csv"] {
        files.push((name.to_string(), fs::read(dir.join(name)).unwrap()));
    }
    let mut plots: Vec<_> = fs::read_dir(dir.join("plot")).unwrap().map(|e| e.unwrap().path()).collect();
    plots.sort();
    for p in plots {
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
    }
    files
}

#[test]
fn sweep_is_independent_of_jobs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let common = ["--t-grid", "0:0.5:1", "--k-list", "1,4", "--t-end", "4"];
    for (dir, jobs) in [(&a, "1"), (&b, "3")] {
        let mut args = vec!["sweep", "--jobs", jobs, "--out", dir.path().to_str().unwrap()];
        args.extend(common);
        let o = aclesim(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let fa = sweep_files(a.path());
    assert_eq!(fa, sweep_files(b.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["sweep.csv", "baselines.csv", "cct_vs_T_K1.csv", "cct_vs_T_K4.csv"]);
    let sweep = String::from_utf8(fa[0].1.clone()).unwrap();
    assert_eq!(sweep.lines().next().unwrap(), "case,K_pu_per_rad,T_s,cct_ms,bracket_lo_ms,bracket_hi_ms,status");
    assert_eq!(sweep.lines().count(), 1 + 6);
    assert_eq!(String::from_utf8(fa[1].1.clone()).unwrap().lines().count(), 1 + 2);
}

/// The default grid gives 41 filter constants for each of three gains. The
/// search is coarsened here since only the layout is checked.
#[test]
fn default_grid_has_123_cells() {
    let dir = tempfile::tempdir().unwrap();
    let o = aclesim(&[
        "sweep",
        "--out",
        dir.path().to_str().unwrap(),
        "--t-end",
        "1.5",
        "--set",
        "solver.cct_resolution_s=0.05",
        "--set",
        "solver.cct_initial_s=0.1",
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 123);
    let t_values: std::collections::BTreeSet<&str> = sweep.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(t_values.len(), 41);
    assert_eq!(fs::read_dir(dir.path().join("plot")).unwrap().count(), 3);
}
