use std::path::Path;
use std::process::{Command, Output};

use pulsegrowth::cli::RunReport;
use pulsegrowth::config::RunConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsegrowth")).args(args).output().unwrap()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

const SMALL: [&str; 10] = [
    "--set", "grid.nx=40", "--set", "grid.ny=8", "--set", "schedule.horizon=8", "--set", "schedule.steps=2", "--set",
    "schedule.micro_step=0.05",
];

fn multiscale(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["multiscale", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    run(&args)
}

#[test]
fn periodic_averaging_on_the_stokes_test() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["periodic", "--mode", "averaging", "--nu", "0.05", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["converged"], true);
    assert!(report["cycles"].as_u64().unwrap() <= 20);
    assert!(dir.path().join("error_history.csv").exists());
}

#[test]
fn multiscale_is_byte_reproducible_and_self_describing() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = multiscale(d.path(), &["--K", "4", "--k", "0.05"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "c_final.csv"), read(&b, "c_final.csv"));
    assert_eq!(read(&a, "jout.csv"), read(&b, "jout.csv"));
    for f in ["report.json", "jout.csv", "c_final.csv", "error_history.csv"] {
        assert!(a.path().join(f).exists(), "{f} missing");
    }
    let report = RunReport::read(a.path()).unwrap();
    let rebuilt = RunConfig::from_toml_str(&report.config.to_toml()).unwrap();
    assert_eq!(rebuilt, report.config);
    assert_eq!(rebuilt.hash(), report.multiscale.unwrap().config_hash);
}

#[test]
fn compare_rejects_mismatched_configs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(multiscale(a.path(), &[]).status.success());
    assert!(multiscale(b.path(), &["--set", "growth.alpha=0.002"]).status.success());
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare",
        "--reference",
        a.path().to_str().unwrap(),
        "--candidate",
        b.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let err = stdout_json(&o);
    assert_eq!(err["error"], "config_mismatch");
    assert!(err["message"].as_str().unwrap().contains("config mismatch"));

    let o = run(&[
        "compare",
        "--reference",
        a.path().to_str().unwrap(),
        "--candidate",
        a.path().to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["linf_rel"], 0.0);
}

#[test]
fn config_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[fluid]\nrho_f = 1.0\nviscosity = 2\n").unwrap();
    let o = run(&["multiscale", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stdout_json(&o);
    assert_eq!(err["error"], "config");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("viscosity") && msg.contains("line 3"), "{msg}");

    let o = run(&["resolve", "--set", "oracle.max_steps=10", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert_eq!(stdout_json(&o)["error"], "budget");
}

#[test]
fn sweep_and_geometry_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--param", "growth.alpha", "--values", "0,0.002", "--workers", "2", "--out"];
    args.push(dir.path().to_str().unwrap());
    args.extend(SMALL);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = std::fs::read_to_string(dir.path().join("sweep.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("run_001").join("c_final.csv").exists());

    let o = run(&["geometry-dump", "--c", "0.3", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(dir.path().join("geometry.csv").exists());
}
