use std::process::{Command, Output};

use imprecise_poisson::cli::{run_with_config, RunConfig, EXIT_INVALID, EXIT_OK, EXIT_RESOURCE};
use imprecise_poisson::CountingPath;
use serde_json::Value;

fn ipp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipp"))
        .args(args)
        .env_remove("IPP_CONFIG")
        .output()
        .expect("binary runs")
}

fn json_ok(args: &[&str]) -> Value {
    let out = ipp(args);
    assert_eq!(out.status.code(), Some(EXIT_OK), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn in_process(args: &[&str], cfg: &RunConfig) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("ipp").chain(args.iter().copied());
    let code = run_with_config(argv, cfg, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

const NO_JUMP_AT_ONE: &str = r#"{"times":[1.0],"payoff":{"kind":"indicator","state":0}}"#;

#[test]
fn expect_reports_value_and_bound() {
    let v = json_ok(&["expect", "--rates", "1,2", "--variable", NO_JUMP_AT_ONE]);
    let value = v["value"].as_f64().unwrap();
    assert!((value - (-1.0f64).exp()).abs() <= 1e-6);
    assert!(v["error_bound"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["mode"], "upper");

    let v = json_ok(&["expect", "--lambda-lo", "1", "--lambda-hi", "2", "--mode", "lower", "--variable", NO_JUMP_AT_ONE]);
    assert!((v["value"].as_f64().unwrap() - (-2.0f64).exp()).abs() <= 1e-6);
}

#[test]
fn expect_with_prefix() {
    let var = r#"{"times":[0.5,1.0],"payoff":{"kind":"no_increment","from":0,"to":1}}"#;
    let v = json_ok(&["expect", "--rates", "1,2", "--variable", var, "--prefix", "[[0.5,3]]"]);
    assert!((v["value"].as_f64().unwrap() - (-0.5f64).exp()).abs() <= 1e-6);
}

#[test]
fn numbers_carry_twelve_significant_digits() {
    let out = ipp(&["expect", "--rates", "1,1", "--variable", NO_JUMP_AT_ONE, "--tol", "1e-7"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.contains("\"value\"")).unwrap();
    let digits: String = line
        .split(':')
        .nth(1)
        .unwrap()
        .chars()
        .filter(|c| c.is_ascii_digit())
        .collect();
    assert!(digits.trim_start_matches('0').len() <= 12, "{line}");
}

#[test]
fn semigroup_lists_every_state() {
    let v = json_ok(&["semigroup", "--rates", "1,2", "--delta", "1", "--payoff", "indicator:0", "--n-max", "6"]);
    let values = v["values"].as_object().unwrap();
    assert_eq!(values.len(), 7);
    assert!((values["0"].as_f64().unwrap() - (-1.0f64).exp()).abs() <= 1e-6);
    assert!(v["steps"].as_u64().unwrap() > 0);
}

#[test]
fn simulate_json_and_csv_agree() {
    let args = ["simulate", "--rates", "1,2", "--horizon", "5", "--policy", "upper", "--seed", "11"];
    let path: CountingPath = serde_json::from_slice(&ipp(&args).stdout).unwrap();
    let mut csv_args = args.to_vec();
    csv_args.extend(["--format", "csv"]);
    let csv = String::from_utf8(ipp(&csv_args).stdout).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("index,jump_time"));
    let times: Vec<f64> = rows.map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(times, path.jump_times());
    assert_eq!(path.horizon(), 5.0);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let args = ["simulate", "--rates", "0.5,3", "--horizon", "10", "--policy", "midpoint", "--seed", "42"];
    let (a, b) = (ipp(&args), ipp(&args));
    assert_eq!(a.stdout, b.stdout);
    let other = ipp(&["simulate", "--rates", "0.5,3", "--horizon", "10", "--policy", "midpoint", "--seed", "43"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn json_round_trip_is_stable() {
    let args = ["simulate", "--rates", "1,2", "--horizon", "3", "--seed", "5"];
    let first = ipp(&args).stdout;
    let path: CountingPath = serde_json::from_slice(&first).unwrap();
    let again = serde_json::to_value(&path).unwrap();
    let reparsed: CountingPath = serde_json::from_value(again.clone()).unwrap();
    assert_eq!(reparsed, path);
    let original: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(original, again);
}

#[test]
fn superhedge_reports_capital_and_strategy() {
    let v = json_ok(&["superhedge", "--rates", "1,2", "--payoff", "indicator:0", "--n-max", "8", "--s", "0", "--t", "1", "--n", "64"]);
    let capital = v["initial_capital"].as_f64().unwrap();
    assert!((capital - (-1.0f64).exp()).abs() < 0.05);
    assert_eq!(v["strategy"]["rounds"].as_array().unwrap().len(), 64);
}

#[test]
fn coherence_finds_a_losing_continuation() {
    let ledger = r#"{
        "initial": 0.0,
        "strategy": {
            "times": [{"kind":"constant","t":0.0},{"kind":"constant","t":1.0}],
            "rounds": [{"sides":"one","long":{"kind":"constant","value":0.0},"short":{"kind":"constant","value":1.0}}],
            "rates": {"lower":1.0,"upper":2.0},
            "stake_bound": 1.0
        }
    }"#;
    let path = r#"{"horizon":2.0,"jumps":[0.2,0.4]}"#;
    let v = json_ok(&["coherence", "--ledger", ledger, "--path", path, "--t", "0.5", "--epsilon", "0.001"]);
    assert_eq!(v["succeeded"], true);
    let alias = json_ok(&["coherence", "--strategy", ledger, "--path", path, "--t", "0.5", "--epsilon", "0.001"]);
    assert_eq!(alias, v);
}

#[test]
fn renewal_prints_infinity_for_zero_lower_rate() {
    let v = json_ok(&["renewal", "--rates", "0,4"]);
    assert_eq!(v["lower"], 0.25);
    assert_eq!(v["upper"], "Infinity");
}

#[test]
fn oracle_is_consistent_on_a_simple_variable() {
    let v = json_ok(&["oracle", "--rates", "1,2", "--variable", NO_JUMP_AT_ONE, "--samples", "20000", "--seed", "3"]);
    assert_eq!(v["verdict"], "consistent", "{v}");
    assert!(v["envelope"].as_f64().unwrap() <= v["engine_value"].as_f64().unwrap() + 1e-6);
}

#[test]
fn validation_errors_exit_two() {
    for args in [
        vec!["renewal", "--rates", "3,1"],
        vec!["renewal", "--rates", "-1,1"],
        vec!["expect", "--rates", "1,2", "--variable", "{not json"],
        vec!["semigroup", "--rates", "1,2", "--delta", "-1", "--payoff", "indicator:0"],
        vec!["renewal", "--rates", "1,2", "--lambda-lo", "1"],
        vec!["bogus"],
    ] {
        let out = ipp(&args);
        assert_eq!(out.status.code(), Some(EXIT_INVALID), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn exhausted_budgets_exit_three() {
    let out = ipp(&["semigroup", "--rates", "1,50", "--delta", "100", "--payoff", "indicator:0", "--tol", "1e-12"]);
    assert_eq!(out.status.code(), Some(EXIT_RESOURCE), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = std::env::temp_dir().join(format!("ipp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let file = dir.join("config.json");
    std::fs::write(&file, r#"{"rates":{"lower":0.5,"upper":2.0},"seed":9}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ipp"))
        .args(["renewal"])
        .env("IPP_CONFIG", &file)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["lower"], 0.5);
    assert_eq!(v["upper"], 2.0);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn in_process_runner_matches_binary() {
    let cfg = RunConfig {
        seed: 7,
        ..RunConfig::default()
    };
    let (code, out, err) = in_process(&["simulate", "--rates", "1,2", "--horizon", "2"], &cfg);
    assert_eq!(code, EXIT_OK, "{err}");
    let binary = ipp(&["simulate", "--rates", "1,2", "--horizon", "2", "--seed", "7"]);
    assert_eq!(out.as_bytes(), binary.stdout.as_slice());

    let (code, _, err) = in_process(&["renewal"], &RunConfig::default());
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("rate"));
}
