use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixed_junction::scenario::ScheduledArrival;
use mixed_junction::{Scenario, VehicleKind};
use serde_json::Value;
use tempfile::TempDir;

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/example.toml")
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_junction-sim")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn example_scenario_runs_clean() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = sim(&[
        "run",
        example().to_str().unwrap(),
        "--horizon",
        "80",
        "--seeds",
        "0,1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for seed in [0, 1] {
        let report = read_json(out_dir.join(format!("report-{seed}.json")));
        assert_eq!(report["safe"], true);
        assert_eq!(report["report"]["slots_run"], 80);
        let trace = fs::read_to_string(out_dir.join(format!("trace-{seed}.jsonl"))).unwrap();
        assert!(trace.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
        let metrics = fs::read_to_string(out_dir.join(format!("metrics-{seed}.csv"))).unwrap();
        assert_eq!(metrics.lines().count(), 81);
    }
}

#[test]
fn signal_range_beyond_communication_range_is_rejected() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(example()).unwrap().replace("d_h = 50.0", "d_h = 60.0");
    let path = write(&dir, "bad.toml", &text);
    let out = sim(&["run", &path, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(
        stderr(&out).contains("d_H = 60 m must be smaller than communication range d_C = 60 m"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn malformed_file_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "broken.toml", "horizon = [unterminated\n");
    assert_eq!(code(&sim(&["run", &path])), 2);
    let path = write(&dir, "typo.toml", "horizn = 10\n");
    assert_eq!(code(&sim(&["run", &path])), 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let out = sim(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn sabotaged_manager_is_caught() {
    let dir = TempDir::new().unwrap();
    let arrivals = (0..4)
        .flat_map(|slot| {
            [1, 5].map(|path| ScheduledArrival { slot: slot * 4, kind: VehicleKind::Av, path, speed: 14.0 })
        })
        .collect();
    let scenario = Scenario::scheduled(arrivals, 60).to_toml().unwrap();
    let path = write(&dir, "crossing.toml", &scenario);
    let out_dir = dir.path().join("out");
    let args = ["run", &path, "--out", out_dir.to_str().unwrap()];

    assert_eq!(code(&sim(&args)), 0);
    let out = sim(&[&args[..], &["--mutate", "no-conflict-check"]].concat());
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let report = read_json(out_dir.join("report-0.json"));
    assert_eq!(report["safe"], false);
    assert!(!report["report"]["permission_conflicts"].as_array().unwrap().is_empty());
}

#[test]
fn empty_sweep_is_rejected() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("s.csv");
    let out = sim(&["sweep", "--hv-fractions", "", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("empty sweep"), "{}", stderr(&out));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("s.csv");
    let out = sim(&["sweep", "--seeds", "0..5", "--horizon", "120", "--out", csv.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("hv_fraction,demand,seed,throughput,mean_delay,violations"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r[5] == "0"));
}

#[test]
fn single_sweep_cell_matches_run() {
    let dir = TempDir::new().unwrap();
    let scenario = example();
    let scenario = scenario.to_str().unwrap();
    let csv = dir.path().join("one.csv");
    let sweep = sim(&[
        "sweep",
        scenario,
        "--hv-fractions",
        "0.5",
        "--rates",
        "0.02",
        "--seeds",
        "3",
        "--horizon",
        "200",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&sweep), 0, "{}", stderr(&sweep));
    let run_dir = dir.path().join("run");
    let run = sim(&[
        "run",
        scenario,
        "--seeds",
        "3",
        "--horizon",
        "200",
        "--trace",
        "off",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let text = fs::read_to_string(csv).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let report = read_json(run_dir.join("report-3.json"));
    let metrics = &report["report"]["metrics"];
    assert_eq!(row[3], metrics["throughput"].as_f64().unwrap());
    assert_eq!(row[4], metrics["mean_delay"].as_f64().unwrap());
    assert_eq!(row[5], 0.0);
}

#[test]
fn verify_prints_a_matrix() {
    let small = ["verify", "--episodes", "200", "--states", "200", "--batch-seeds", "1", "--batch-horizon", "80"];
    let out = sim(&small);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for suite in
        ["separation", "planner feasibility", "kinematics", "traffic safety", "permission exclusivity", "signal policy"]
    {
        assert!(stdout.lines().any(|l| l.starts_with(suite) && l.contains("PASS")), "{suite}: {stdout}");
    }

    let out = sim(&[&small[..], &["--mutate", "no-conflict-check"]].concat());
    assert_eq!(code(&out), 1);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("permission exclusivity") && l.contains("FAIL")), "{stdout}");
}
