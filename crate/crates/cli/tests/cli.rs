use std::fs;
use std::path::Path;
use std::process::Command;

use gff_cli::config::{ExperimentConfig, Overrides};
use gff_cli::manifest::{Run, CONFIG_FILE, RESULTS_FILE};
use gff_cli::report::{read_results, report};
use gff_cli::CliError;

fn gfflab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gfflab"))
}

fn small_config(out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"{{"experiments": ["one-arm", "crossing"], "scales": [2, 3, 4], "inner": [1],
            "trials": 64, "seed_base": 11, "threads": 2, "output": {:?}}}"#,
        out.display().to_string()
    );
    ExperimentConfig::parse(&text, &Overrides::default()).unwrap().0
}

#[test]
fn empty_config_gives_defaults() {
    let (cfg, warnings) = ExperimentConfig::parse("", &Overrides::default()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.d, 3);
    assert_eq!(cfg.scales, vec![8, 12, 16, 24, 32]);
    assert_eq!(cfg.box_factor, 4);
    assert!(warnings.is_empty());
}

#[test]
fn critical_dimension_is_rejected() {
    match ExperimentConfig::parse(r#"{"d": 6}"#, &Overrides::default()).unwrap_err() {
        CliError::Validation { key, .. } => assert_eq!(key, "d"),
        e => panic!("{e}"),
    }
    let (_, warnings) = ExperimentConfig::parse(r#"{"d": 7}"#, &Overrides::default()).unwrap();
    assert_eq!(warnings.len(), 1);
}

#[test]
fn flag_wins_over_file() {
    let flags = Overrides {
        seed: Some(99),
        d: Some(4),
        ..Default::default()
    };
    let (cfg, _) = ExperimentConfig::parse(r#"{"seed_base": 1, "d": 5}"#, &flags).unwrap();
    assert_eq!(cfg.seed_base, 99);
    assert_eq!(cfg.d, 4);
}

#[test]
fn emitted_config_parses_back() {
    let cfg = small_config(Path::new("/tmp/x"));
    let (back, _) = ExperimentConfig::parse(&cfg.emit(), &Overrides::default()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn unknown_experiment_is_rejected() {
    assert!(ExperimentConfig::parse(r#"{"experiments": ["three-arm"]}"#, &Overrides::default()).is_err());
}

#[test]
fn resumed_run_matches_fresh_run() {
    let tmp = tempfile::tempdir().unwrap();
    let fresh = tmp.path().join("fresh");
    let split = tmp.path().join("split");

    let mut run = Run::create(&fresh, &small_config(&fresh)).unwrap();
    let total = run.advance(None).unwrap();
    assert!(run.manifest.is_complete());

    let mut run = Run::create(&split, &small_config(&split)).unwrap();
    assert_eq!(run.advance(Some(2)).unwrap(), 2);
    assert!(!run.manifest.is_complete());
    // A partially written tail must be discarded on resume.
    let mut results = fs::OpenOptions::new().append(true).open(split.join(RESULTS_FILE)).unwrap();
    std::io::Write::write_all(&mut results, b"{\"partial\": ").unwrap();
    drop(results);
    let mut run = Run::open(&split).unwrap();
    assert_eq!(run.advance(None).unwrap(), total - 2);

    let a = fs::read(fresh.join(RESULTS_FILE)).unwrap();
    let b = fs::read(split.join(RESULTS_FILE)).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);

    // Complete runs resume as a no-op.
    let mut run = Run::open(&split).unwrap();
    assert_eq!(run.advance(None).unwrap(), 0);
    assert_eq!(fs::read(split.join(RESULTS_FILE)).unwrap(), b);
}

#[test]
fn tampered_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let mut run = Run::create(&dir, &small_config(&dir)).unwrap();
    run.advance(Some(1)).unwrap();
    let text = fs::read_to_string(dir.join(CONFIG_FILE)).unwrap();
    fs::write(dir.join(CONFIG_FILE), text.replace("\"trials\": 64", "\"trials\": 65")).unwrap();
    match Run::open(&dir) {
        Err(CliError::Validation { message, .. }) => assert!(message.contains("trials"), "{message}"),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("tampered config accepted"),
    }
}

#[test]
fn existing_run_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    Run::create(&dir, &small_config(&dir)).unwrap();
    assert!(Run::create(&dir, &small_config(&dir)).is_err());
}

#[test]
fn report_on_empty_results() {
    let tmp = tempfile::tempdir().unwrap();
    let results = tmp.path().join(RESULTS_FILE);
    fs::write(&results, "").unwrap();
    let (rows, skipped) = report(&results, &tmp.path().join("report")).unwrap();
    assert!(rows.is_empty());
    assert_eq!(skipped, 0);
    assert!(tmp.path().join("report/estimates.csv").exists());
}

#[test]
fn malformed_lines_are_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let mut run = Run::create(&dir, &small_config(&dir)).unwrap();
    run.advance(None).unwrap();
    let results = dir.join(RESULTS_FILE);
    let (good, _) = read_results(&results).unwrap();
    let mut text = fs::read_to_string(&results).unwrap();
    text.push_str("not json\n{\"experiment\": 3}\n");
    fs::write(&results, text).unwrap();
    let (records, skipped) = read_results(&results).unwrap();
    assert_eq!(records.len(), good.len());
    assert_eq!(skipped, 2);
    let (rows, _) = report(&results, &tmp.path().join("report")).unwrap();
    assert!(rows.iter().any(|r| r.experiment == "one-arm" && r.slope.is_some()));
    assert!(rows.iter().any(|r| r.experiment == "crossing"));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gfflab()
        .args(["estimate", "one-arm", "--d", "6", "--out"])
        .arg(tmp.path().join("r"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`d`"));

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"trails": 10}"#).unwrap();
    let out = gfflab().args(["estimate", "one-arm", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trails"));

    let out = gfflab()
        .args(["verify", "arcsin", "--trials", "4000", "--seed", "3", "--threads", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pass"], true);
}

#[test]
fn binary_estimate_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let common = ["--scales", "2,3,4", "--trials", "32", "--seed", "5"];
    let out = gfflab()
        .args(["estimate", "one-arm", "--max-points", "1"])
        .args(common)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = gfflab().arg("resume").arg("--manifest").arg(&dir).output().unwrap();
    assert!(out.status.success());
    let (records, _) = read_results(&dir.join(RESULTS_FILE)).unwrap();
    // Two signs per scale.
    assert_eq!(records.len(), 6);
    let out = gfflab().arg("report").arg("--results").arg(dir.join(RESULTS_FILE)).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("one-arm"));
}
