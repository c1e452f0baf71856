//! Behavior tests for the `cabin-locate` binary: exit codes, progress
//! output, file round trips, and cross-subcommand consistency. Heavier
//! numerical guarantees live in the acceptance suite; this file checks the
//! command-line contract itself.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cabin-locate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn assert_code(out: &Output, expected: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(expected),
        "{what}: expected exit {expected}, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small artifact chain shared by several tests: 12-seat cabin plus dataset.
fn make_cabin_and_data(dir: &Path) {
    let gen = run_in(
        dir,
        &["gen-cabin", "--rows", "3", "--columns", "ABCD", "--anchors", "5", "--seed", "4",
          "--quiet", "-o", "cabin.json"],
    );
    assert_code(&gen, 0, "gen-cabin");
    let sim = run_in(
        dir,
        &["simulate", "--layout", "cabin.json", "--profile", "aircraft", "--reps", "6",
          "--seed", "4", "--quiet", "-o", "data.jsonl"],
    );
    assert_code(&sim, 0, "simulate");
}

// ── exit codes ──────────────────────────────────────────────────────────

#[test]
fn missing_output_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen-cabin", "--rows", "2"]);
    assert_code(&out, 2, "gen-cabin without -o");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--output"), "error should mention the missing flag: {stderr}");
}

#[test]
fn unknown_profile_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--layout", "cabin.json", "--profile", "cave", "-o", "data.jsonl"],
    );
    assert_code(&out, 2, "simulate with unknown profile");
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--layout", "no-such-cabin.json", "--profile", "aircraft", "-o",
          "data.jsonl"],
    );
    assert_code(&out, 1, "simulate with missing layout file");
}

#[test]
fn zero_epochs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["train", "--layout", "cabin.json", "--dataset", "data.jsonl", "--variant", "coord",
          "--epochs", "0", "-o", "nn.json"],
    );
    assert_code(&out, 2, "train with zero epochs");
}

#[test]
fn too_few_anchors_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen-cabin", "--anchors", "2", "-o", "cabin.json"]);
    assert_code(&out, 2, "gen-cabin with two anchors");
}

#[test]
fn malformed_thread_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cabin-locate"))
        .current_dir(dir.path())
        .env("CABIN_LOCATE_THREADS", "abc")
        .args(["gen-cabin", "--rows", "2", "--quiet", "-o", "cabin.json"])
        .output()
        .unwrap();
    assert_code(&out, 2, "CABIN_LOCATE_THREADS=abc");
}

#[test]
fn unknown_method_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["evaluate", "--layout", "cabin.json", "--dataset", "data.jsonl", "--method", "bogus",
          "-o", "report"],
    );
    assert_code(&out, 2, "evaluate with unknown method");
}

#[test]
fn wrong_model_kind_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    make_cabin_and_data(dir.path());
    let fit = run_in(
        dir.path(),
        &["fit", "--layout", "cabin.json", "--dataset", "data.jsonl", "--method", "offset",
          "--quiet", "-o", "offset.json"],
    );
    assert_code(&fit, 0, "fit offset");
    // The file holds an offset model; asking evaluate to read it as a
    // linear-regression model must fail cleanly.
    let out = run_in(
        dir.path(),
        &["evaluate", "--layout", "cabin.json", "--dataset", "data.jsonl", "--method",
          "lr=offset.json", "-o", "report"],
    );
    assert_code(&out, 1, "evaluate with mismatched model kind");
}

#[test]
fn out_of_range_scaling_factor_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    make_cabin_and_data(dir.path());
    let out = run_in(
        dir.path(),
        &["montecarlo", "--layout", "cabin.json", "--dataset", "data.jsonl", "--study",
          "scaling", "--alphas", "0.0,0.5", "--quiet", "-o", "scaling.csv"],
    );
    assert_code(&out, 1, "montecarlo with alpha 0");
}

// ── progress output ─────────────────────────────────────────────────────

#[test]
fn default_layout_reports_its_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen-cabin", "-o", "cabin.json"]);
    assert_code(&out, 0, "gen-cabin with defaults");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("162 seats") && stdout.contains("11 anchors"),
        "default layout line should report 162 seats and 11 anchors: {stdout}"
    );
}

#[test]
fn training_logs_one_csv_line_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    make_cabin_and_data(dir.path());
    let out = run_in(
        dir.path(),
        &["train", "--layout", "cabin.json", "--dataset", "data.jsonl", "--variant", "coord",
          "--epochs", "12", "--batch-size", "32", "--hidden", "24,12", "--patience", "12",
          "--seed", "2", "-o", "nn.json"],
    );
    assert_code(&out, 0, "train");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss", "log starts with the CSV header");
    for (i, line) in lines[1..13].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3, "epoch line {line:?} should have three fields");
        assert_eq!(fields[0], (i + 1).to_string(), "epochs count up from 1");
        assert!(fields[1].parse::<f64>().unwrap().is_finite(), "train loss is a number");
        assert!(fields[2].parse::<f64>().unwrap().is_finite(), "val loss is a number");
    }
    assert!(
        lines.last().unwrap().starts_with("checkpoint (coord) ->"),
        "log ends with the checkpoint line: {:?}",
        lines.last()
    );
}

// ── report and study files ──────────────────────────────────────────────

/// Parses the long-format report CSV into (method, placement) -> metric map.
fn parse_report(text: &str) -> HashMap<(String, String), HashMap<String, f64>> {
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("method,placement,metric,value"),
        "report header must be stable"
    );
    let mut out: HashMap<(String, String), HashMap<String, f64>> = HashMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 4, "report line {line:?} should have four fields");
        out.entry((f[0].into(), f[1].into()))
            .or_default()
            .insert(f[2].into(), f[3].parse().expect("metric values are numeric"));
    }
    out
}

#[test]
fn smoke_pipeline_on_a_six_seat_cabin() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();

    let steps: &[&[&str]] = &[
        &["gen-cabin", "--rows", "3", "--columns", "AB", "--anchors", "4", "--seed", "2",
          "--quiet", "-o", "cabin.json"],
        &["simulate", "--layout", "cabin.json", "--profile", "aircraft", "--reps", "10",
          "--seed", "2", "--quiet", "-o", "data.jsonl"],
        &["fit", "--layout", "cabin.json", "--dataset", "data.jsonl", "--method", "lr",
          "--quiet", "-o", "lr.json"],
        &["train", "--layout", "cabin.json", "--dataset", "data.jsonl", "--variant", "coord",
          "--epochs", "60", "--batch-size", "32", "--hidden", "48,24", "--seed", "5",
          "--quiet", "-o", "nn-coord.json"],
        &["train", "--layout", "cabin.json", "--dataset", "data.jsonl", "--variant", "seat",
          "--epochs", "60", "--batch-size", "32", "--hidden", "48,24", "--seed", "6",
          "--quiet", "-o", "nn-seat.json"],
        &["evaluate", "--layout", "cabin.json", "--dataset", "data.jsonl", "--method", "raw",
          "--method", "lr=lr.json", "--method", "nn=nn-coord.json", "--method",
          "nn=nn-seat.json", "--quiet", "-o", "report"],
    ];
    for args in steps {
        let out = run_in(dir, args);
        assert_code(&out, 0, args[0]);
    }

    let report = parse_report(&std::fs::read_to_string(dir.join("report.csv")).unwrap());
    for method in ["raw", "lr", "nn-coord", "nn-seat"] {
        for placement in ["seat", "headrest"] {
            let key = (method.to_string(), placement.to_string());
            let metrics = report.get(&key).unwrap_or_else(|| panic!("missing row {key:?}"));
            assert!(metrics["seat_accuracy"] <= metrics["x_axis_accuracy"]);
            assert!(metrics["seat_accuracy"] <= metrics["y_axis_accuracy"]);
            if method != "nn-seat" {
                // Quantiles of a sample are ordered by construction.
                let (median, q90, q95) = (
                    metrics["localization_error_median"],
                    metrics["localization_error_q90"],
                    metrics["localization_error_q95"],
                );
                assert!(
                    median <= q90 && q90 <= q95,
                    "{key:?}: quantiles out of order: {median} / {q90} / {q95}"
                );
            }
        }
    }
    assert!(dir.join("report.json").exists(), "evaluate writes the JSON report too");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "smoke pipeline took {elapsed:.1} s, budget is 60 s");
}

#[test]
fn study_baselines_agree_across_studies() {
    let dir = tempfile::tempdir().unwrap();
    make_cabin_and_data(dir.path());

    // Zero extra anchors and scaling factor 1 are both "change nothing":
    // their statistics must agree to the last printed digit.
    let anchors = run_in(
        dir.path(),
        &["montecarlo", "--layout", "cabin.json", "--dataset", "data.jsonl", "--study",
          "anchors", "--counts", "0,3", "--runs", "2", "--seed", "8", "--quiet", "-o",
          "anchors.csv"],
    );
    assert_code(&anchors, 0, "montecarlo anchors");
    let scaling = run_in(
        dir.path(),
        &["montecarlo", "--layout", "cabin.json", "--dataset", "data.jsonl", "--study",
          "scaling", "--alphas", "0.5,1.0", "--seed", "8", "--quiet", "-o", "scaling.csv"],
    );
    assert_code(&scaling, 0, "montecarlo scaling");

    let stats_of = |file: &str, prefix: &str| -> Vec<(String, String)> {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("study,parameter,placement,mean,median,q90,q95,runs"),
            "study CSV header must be stable"
        );
        lines
            .filter(|l| l.starts_with(prefix))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                assert_eq!(f.len(), 8, "study line {l:?} should have eight fields");
                (f[2].to_string(), f[3..7].join(","))
            })
            .collect()
    };
    let baseline_anchors = stats_of("anchors.csv", "anchors,0,");
    let baseline_scaling = stats_of("scaling.csv", "scaling,1,");
    assert_eq!(baseline_anchors.len(), 2, "one baseline row per placement");
    assert_eq!(
        baseline_anchors, baseline_scaling,
        "no-op rows of the two studies should be identical"
    );
}

#[test]
fn thread_count_never_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    make_cabin_and_data(dir.path());
    let fit = run_in(
        dir.path(),
        &["fit", "--layout", "cabin.json", "--dataset", "data.jsonl", "--method", "lr",
          "--quiet", "-o", "lr.json"],
    );
    assert_code(&fit, 0, "fit lr");

    let evaluate = |threads: &str, stem: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_cabin-locate"))
            .current_dir(dir.path())
            .env("CABIN_LOCATE_THREADS", threads)
            .args(["evaluate", "--layout", "cabin.json", "--dataset", "data.jsonl",
                   "--method", "raw", "--method", "lr=lr.json", "--quiet", "-o", stem])
            .output()
            .unwrap();
        assert_code(&out, 0, "evaluate");
        std::fs::read(dir.path().join(format!("{stem}.csv"))).unwrap()
    };
    assert_eq!(
        evaluate("1", "report-t1"),
        evaluate("2", "report-t2"),
        "one and two worker threads must produce identical reports"
    );
}
