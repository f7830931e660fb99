use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stiefel_filter::harness::experiment::{ExperimentReport, RunRecord, REPORT_FILE};
use stiefel_filter::harness::{run_experiment, ScenarioConfig};

const SMALL: &[&str] = &[
    "--T", "1", "--particles", "40", "--delta-t", "0.02", "--seed", "7", "--estimators", "particle",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stiefel-filter"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Relative path to file contents for every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn simulate_is_byte_identical_for_same_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let args = with(SMALL, &["--repeats", "2", "--out", dir.to_str().unwrap(), "--threads", threads]);
        let mut full = vec!["simulate"];
        full.extend(strs(&args));
        ok(&full);
    }
    let sa = snapshot(&a);
    assert!(sa.contains_key(Path::new("repeat_001/observations.csv")));
    assert!(sa.contains_key(Path::new("repeat_000/truth.csv")));
    assert_eq!(sa, snapshot(&b));
}

#[test]
fn filter_matches_in_memory_run_and_ignores_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let args = with(SMALL, &["--out", data.to_str().unwrap()]);
    let mut full = vec!["simulate"];
    full.extend(strs(&args));
    ok(&full);

    let obs = data.join("repeat_000");
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("filter_{threads}"));
        ok(&[
            "filter",
            "--observations",
            obs.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        reports.push(snapshot(&out));
    }
    assert_eq!(reports[0], reports[1]);

    let out = tmp.path().join("filter_1");
    let report: ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    let config: ScenarioConfig = report.config.clone();
    let memory = run_experiment(&config).unwrap();
    assert_eq!(memory.report.aggregate, report.aggregate);
    let run = &report.runs[0];
    let from_disk = RunRecord::read_csv(&out.join(&run.csv), run.repeat, &run.estimator).unwrap();
    assert_eq!(from_disk, memory.records[0]);
}

#[test]
fn verify_accepts_outputs_and_rejects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let args = with(SMALL, &["--out", data.to_str().unwrap()]);
    let mut full = vec!["simulate"];
    full.extend(strs(&args));
    ok(&full);
    let out = tmp.path().join("res");
    ok(&[
        "filter",
        "--observations",
        data.join("repeat_000").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let sweep = tmp.path().join("sweep");
    let args = with(SMALL, &["--delta-ts", "0.02,0.04", "--repeats", "2", "--out", sweep.to_str().unwrap()]);
    let mut full = vec!["sweep"];
    full.extend(strs(&args));
    ok(&full);
    ok(&["verify", out.to_str().unwrap()]);
    ok(&["verify", sweep.to_str().unwrap()]);

    let path = out.join(REPORT_FILE);
    let mut report: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    report.aggregate[0].mean_cumulated_error *= 1.0 + 1e-9;
    std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    let bad = run(&["verify", out.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn validation_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    for extra in [
        &["--k", "1", "--scheme", "geodesic"][..],
        &["--delta-t", "0.0125", "--h-sim", "0.001"][..],
        &["--particles", "0"][..],
        &["--model", "stair"][..],
    ] {
        let args = with(SMALL, extra);
        let mut full = vec!["simulate", "--out", out];
        full.extend(strs(&args));
        let res = run(&full);
        assert_eq!(res.status.code(), Some(2), "{extra:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    }
}

#[test]
fn filter_rejects_mismatched_observations() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let args = with(SMALL, &["--out", data.to_str().unwrap()]);
    let mut full = vec!["simulate"];
    full.extend(strs(&args));
    ok(&full);
    let obs = data.join("repeat_000");
    let out = tmp.path().join("res");
    for extra in [&["--delta-t", "0.04"][..], &["--n", "4"][..]] {
        let mut full = vec!["filter", "--observations", obs.to_str().unwrap(), "--out", out.to_str().unwrap()];
        full.extend_from_slice(extra);
        let res = run(&full);
        assert_eq!(res.status.code(), Some(2), "{extra:?}: {}", String::from_utf8_lossy(&res.stderr));
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        repeats: 3,
        ..Default::default()
    };
    let path = tmp.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = tmp.path().join("data");
    let args = with(SMALL, &["--config", path.to_str().unwrap(), "--repeats", "1", "--out", out.to_str().unwrap()]);
    let mut full = vec!["simulate"];
    full.extend(strs(&args));
    ok(&full);
    assert!(out.join("repeat_000").exists());
    assert!(!out.join("repeat_001").exists());
}

#[test]
fn numerical_failures_exit_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    // half a turn per sample sits on the log branch cut
    ok(&[
        "simulate", "--n", "3", "--k", "3", "--model", "constant", "--x0", "0,0,31.41592653589793",
        "--sigma-w", "1e-9", "--delta-t", "0.1", "--T", "1", "--scheme", "geodesic", "--estimators",
        "kalman:geodesic", "--out", data.to_str().unwrap(),
    ]);
    let out = tmp.path().join("res");
    let res = run(&[
        "filter",
        "--observations",
        data.join("repeat_000").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}
