//! End-to-end runs of the command-line tool.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use raresim::scenario;

fn raresim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raresim"))
        .args(args)
        .env_remove("RARESIM_WORKERS")
        .env_remove("RARESIM_ENDPOINT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by a signal")
}

fn ok(args: &[&str]) -> Output {
    let out = raresim(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&raresim(&["bogus"])), 2);
    assert_eq!(code(&raresim(&["--help"])), 0);
    assert_eq!(code(&raresim(&["naive", "--toy-gaussian", "--n", "0"])), 2);
    assert_eq!(code(&raresim(&["ce", "--toy-gaussian", "--alpha", "0"])), 2);
    assert_eq!(code(&raresim(&["naive"])), 2, "an objective is required");
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.scn");
    let out = raresim(&["naive", "--scenario", s(&missing), "--n", "5", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.scn"));
}

#[test]
fn required_sample_size_is_printed_exactly() {
    let out = ok(&["required-n", "--p", "1e-5", "--eps", "0.1"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "10000000\n");
}

#[test]
fn reruns_are_byte_identical_and_manifested() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        ok(&["naive", "--toy-gaussian", "--n", "2000", "--gamma-test", "-3,-2,0", "--seed", "5", "--out", s(dir.path())]);
    }
    let text = read(a.path(), "naive.csv");
    assert_eq!(text, read(b.path(), "naive.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# raresim estimates v1");
    assert_eq!(lines[1], "gamma_test,p_hat,std_err,rare_count,n,ess");
    assert_eq!(lines.len(), 5);
    assert!(lines[2].starts_with("-3.0000000000000000e0,"));

    let manifest: serde_json::Value = serde_json::from_str(&read(a.path(), "naive.manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["end_unix"].as_u64().unwrap() >= manifest["start_unix"].as_u64().unwrap());
    assert_eq!(manifest["scenario_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"][0].as_str().unwrap().ends_with("naive.csv"));
}

#[test]
fn evaluating_the_base_parameters_reproduces_naive_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let grid = "-3,-2.5,-1";
    ok(&["ce", "--toy-gaussian", "--iterations", "0", "--out", out]);
    let history = read(dir.path(), "ce_history.csv");
    assert_eq!(history.lines().count(), 3, "format line, header and the θ₀ row");
    assert!(history.lines().nth(2).unwrap().starts_with("0,final,"));
    ok(&["naive", "--toy-gaussian", "--n", "3000", "--gamma-test", grid, "--seed", "9", "--out", out]);
    let theta = dir.path().join("theta_ce.params");
    ok(&["eval", "--toy-gaussian", "--theta", s(&theta), "--n", "3000", "--gamma-test", grid, "--seed", "9", "--out", out]);
    assert_eq!(fs::read(dir.path().join("is.csv")).unwrap(), fs::read(dir.path().join("naive.csv")).unwrap());
}

#[test]
fn search_then_evaluate_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let common = ["--gamma-test", "-3,-2", "--n", "4000", "--seed", "2", "--out", out];
    ok(&["ce", "--toy-gaussian", "--rho", "0.1", "--iterations", "8", "--n-per-iter", "500", "--seed", "1", "--out", out]);
    let theta = dir.path().join("theta_ce.params");
    ok(&[&["eval", "--toy-gaussian", "--theta", s(&theta)][..], &common].concat());
    ok(&[&["naive", "--toy-gaussian"][..], &common].concat());
    let is = dir.path().join("is.csv");
    let naive = dir.path().join("naive.csv");
    let stdout = ok(&["compare", "--is", s(&is), "--naive", s(&naive), "--out", out]).stdout;
    assert!(String::from_utf8(stdout).unwrap().contains("rare ratio"));
    let csv = read(dir.path(), "compare.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# raresim comparison v1"));
    assert_eq!(lines.next(), Some("gamma_test,rare_ratio,variance_ratio"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], -3.0);
    assert!(first[1] > 5.0 && first[2] > 1.0, "{first:?}");
    let history = read(dir.path(), "ce_history.csv");
    assert_eq!(history.lines().count(), 2 + 8 + 1);
}

#[test]
fn comparing_mismatched_grids_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["naive", "--toy-gaussian", "--n", "10", "--gamma-test", "-1", "--out", s(&a)]);
    ok(&["naive", "--toy-gaussian", "--n", "10", "--gamma-test", "-2", "--out", s(&b)]);
    let out = raresim(&["compare", "--is", s(&a.join("naive.csv")), "--naive", s(&b.join("naive.csv")), "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_theta_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let theta = dir.path().join("nope.params");
    let out = raresim(&["eval", "--toy-gaussian", "--theta", s(&theta), "--n", "10", "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.params"));
}

#[test]
fn unreachable_threshold_exits_with_stall_code() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "ce", "--toy-gaussian", "--level-rule", "min", "--gamma", "-50", "--iterations", "3", "--n-per-iter", "200",
        "--out", s(dir.path()),
    ];
    assert_eq!(code(&raresim(&args)), 3);
    let history = read(dir.path(), "ce_history.csv");
    assert_eq!(history.lines().filter(|l| l.contains(",empty_level_set,")).count(), 3);
}

#[test]
fn worker_processes_and_threads_match_in_process_runs() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["naive", "--toy-gaussian", "--n", "500", "--gamma-test", "-1,0", "--seed", "4"];
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        ok(&[&base[..], extra, &["--out", s(&out)]].concat());
        read(&out, "naive.csv")
    };
    let serial = run("serial", &[]);
    assert_eq!(run("procs", &["--workers", "2", "--worker-mode", "process"]), serial);
    assert_eq!(run("threads", &["--workers", "3", "--worker-mode", "thread"]), serial);
}

#[test]
fn trace_writes_a_vehicle_table() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let scn = scenario::shipped_dir().join("i80.scn");
    let stdout = ok(&["trace", "--scenario", s(&scn), "--seed", "3", "--out", s(&trace)]).stdout;
    assert!(String::from_utf8(stdout).unwrap().starts_with("min_ttc "));
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,vehicle,x,y,heading,speed"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&first[..2], ["0", "0"]);
    assert_eq!(first[2], "60.0", "ego starts at the scenario's x");
    assert_eq!(text.lines().skip(1).filter(|l| l.starts_with("0,")).count(), 6);
}
