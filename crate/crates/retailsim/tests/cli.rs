//! End-to-end checks of the command-line binary: exit codes, output
//! files, determinism, and the CSV round trip.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::data_path;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_retailsim"))
}

fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary runs")
}

fn write_fixture(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn shipped_case_matches_the_published_feeder() {
    let case = common::load_ieee33();
    assert_eq!(case.buses.len(), 33);
    assert_eq!(case.branches.len(), 32);
    let dg_buses: Vec<u32> = case.dg_units.iter().map(|u| u.bus_id).collect();
    assert_eq!(dg_buses, vec![4, 7, 25, 30]);
    let by_class = |class: &str| {
        retailsim::network::class_nominal_load(&case, class, 1.0).unwrap()
    };
    assert_eq!(by_class("A"), 1720.0);
    assert_eq!(by_class("B"), 1075.0);
    assert_eq!(by_class("C"), 920.0);
}

#[test]
fn starved_iteration_budget_flags_rows_and_marks_the_day_partial() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = std::fs::read_to_string(data_path("default.scenario")).unwrap();
    let starved = scenario.replace(
        "\"beta\": -0.2,",
        "\"beta\": -0.2, \"options\": {\"max_iters\": 1},",
    );
    let path = write_fixture(dir.path(), "starved.scenario", &starved);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        &data_path("ieee33.case"),
        &path,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let hourly = fs::read_to_string(out_dir.join("hourly.csv")).unwrap();
    for line in hourly.lines().skip(1) {
        assert!(line.ends_with(",false"), "row not flagged: {line}");
    }
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    for line in summary.lines().skip(1) {
        assert!(line.ends_with(",true"), "day not marked partial: {line}");
    }
}

#[test]
fn validate_accepts_the_shipped_case() {
    let out = run(&["validate", &data_path("ieee33.case")]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("33 buses"));
    assert!(stdout.contains("4 DG units"));
}

#[test]
fn validate_rejects_a_ring_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ring = r#"{
        "name": "ring", "base_mva": 1.0,
        "limits": {"v_min": 0.9, "v_max": 1.05},
        "classes": ["A"],
        "buses": [
            {"id": 1, "kind": "slack", "base_kv": 12.66},
            {"id": 2, "kind": "load", "base_kv": 12.66},
            {"id": 3, "kind": "load", "base_kv": 12.66}
        ],
        "branches": [
            {"from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.01},
            {"from": 2, "to": 3, "r_pu": 0.01, "x_pu": 0.01},
            {"from": 3, "to": 1, "r_pu": 0.01, "x_pu": 0.01}
        ],
        "loads": [{"bus": 2, "p_kw": 100.0, "q_kvar": 40.0, "class": "A"}],
        "dg_units": []
    }"#;
    let path = write_fixture(dir.path(), "ring.case", ring);
    let out = run(&["validate", &path]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("cycle"), "stderr: {stderr}");
}

#[test]
fn short_scenario_is_rejected_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let hour = r#"{"multiplier": 1.0, "spot_price": 0.06}"#;
    let hours = vec![hour; 23].join(",");
    let text = format!(r#"{{"name": "short", "beta": -0.2, "hours": [{hours}]}}"#);
    let path = write_fixture(dir.path(), "short.scenario", &text);
    let out = run(&["run", &data_path("ieee33.case"), &path]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("24"), "stderr: {stderr}");
}

#[test]
fn usage_errors_exit_1() {
    let out = run(&["run"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn run_writes_hourly_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        &data_path("ieee33.case"),
        &data_path("default.scenario"),
        "--out",
        out_dir.to_str().unwrap(),
        "--trace",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let hourly = fs::read_to_string(out_dir.join("hourly.csv")).unwrap();
    // Header plus 24 hours x 3 classes.
    assert_eq!(hourly.lines().count(), 1 + 24 * 3);
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
    assert!(out_dir.join("trace.csv").exists());
    for line in hourly.lines().skip(1) {
        assert!(line.ends_with(",true"), "unconverged row: {line}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = run(&[
            "run",
            &data_path("ieee33.case"),
            &data_path("default.scenario"),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["hourly.csv", "summary.csv"] {
        let left = fs::read(a.join(file)).unwrap();
        let right = fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

/// Re-aggregating the emitted hourly rows reproduces the summary exactly.
#[test]
fn csv_round_trip_reproduces_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        &data_path("ieee33.case"),
        &data_path("default.scenario"),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let mut reader = csv::Reader::from_path(out_dir.join("hourly.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let class_col = headers.iter().position(|h| h == "class").unwrap();
    let price_col = headers.iter().position(|h| h == "price").unwrap();
    let profit_col = headers.iter().position(|h| h == "profit").unwrap();
    let mut profit: std::collections::BTreeMap<String, f64> = Default::default();
    let mut price: std::collections::BTreeMap<String, f64> = Default::default();
    let mut hours = 0usize;
    for record in reader.records() {
        let record = record.unwrap();
        let class = record[class_col].to_string();
        *profit.entry(class.clone()).or_default() += record[profit_col].parse::<f64>().unwrap();
        *price.entry(class).or_default() += record[price_col].parse::<f64>().unwrap();
        hours += 1;
    }
    let hours_per_class = hours / profit.len();

    let mut reader = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    for record in reader.records() {
        let record = record.unwrap();
        let class = &record[0];
        let summary_profit: f64 = record[2].parse().unwrap();
        let summary_price: f64 = record[3].parse().unwrap();
        let recomputed_profit: f64 =
            format!("{:.6}", profit[class]).parse().unwrap();
        let recomputed_price: f64 =
            format!("{:.6}", price[class] / hours_per_class as f64).parse().unwrap();
        assert_eq!(summary_profit, recomputed_profit, "class {class} profit");
        assert_eq!(summary_price, recomputed_price, "class {class} price");
    }
}

#[test]
fn sweep_tech_prints_five_rows() {
    let out = run(&[
        "sweep-tech",
        &data_path("ieee33.case"),
        &data_path("default.scenario"),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1 + 5, "stdout: {stdout}");
    assert!(lines[0].starts_with("technology,"));
    for tag in [
        "fuel-cell-chp",
        "gas-ice-chp",
        "gas-ice-power-only",
        "microturbine-chp",
        "microturbine-power-only",
    ] {
        assert!(stdout.contains(tag), "missing {tag}");
    }
}

#[test]
fn sweep_beta_covers_the_requested_grid() {
    let out = run(&[
        "sweep-beta",
        &data_path("ieee33.case"),
        &data_path("default.scenario"),
        "--range",
        "-0.25:-0.05:3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1 + 3, "stdout: {stdout}");
    assert!(stdout.contains("-0.250000"));
    assert!(stdout.contains("-0.150000"));
    assert!(stdout.contains("-0.050000"));
}

#[test]
fn catalog_env_var_overrides_the_builtin_rows() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = r#"{
        "technologies": [
            {"tag": "diesel-genset", "a": 0.0002, "b": 0.09, "c": 0.2, "p_min": 0.0, "p_max": 250.0}
        ]
    }"#;
    let catalog_path = write_fixture(dir.path(), "custom.catalog", catalog);
    let case = r#"{
        "name": "custom", "base_mva": 1.0,
        "limits": {"v_min": 0.9, "v_max": 1.05},
        "classes": ["A"],
        "buses": [
            {"id": 1, "kind": "slack", "base_kv": 12.66},
            {"id": 2, "kind": "load", "base_kv": 12.66}
        ],
        "branches": [{"from": 1, "to": 2, "r_pu": 0.01, "x_pu": 0.01}],
        "loads": [{"bus": 2, "p_kw": 100.0, "q_kvar": 40.0, "class": "A"}],
        "dg_units": [{"id": "DG1", "bus": 2, "technology": "diesel-genset"}]
    }"#;
    let case_path = write_fixture(dir.path(), "custom.case", case);
    // Without the override the technology is unknown.
    let out = run(&["validate", &case_path]);
    assert_eq!(out.status.code(), Some(2));
    // With it, the case validates.
    let out = binary()
        .args(["validate", &case_path])
        .env("RETAILSIM_CATALOG", &catalog_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn no_dg_runs_and_reports_none() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "no-dg",
        &data_path("ieee33.case"),
        &data_path("default.scenario"),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    for line in summary.lines().skip(1) {
        assert!(line.contains(",none,"), "line: {line}");
    }
}
