//! The `ipp` command line.
//!
//! Every subcommand writes one JSON document (or CSV for paths) to standard
//! output and diagnostics to standard error. Exit status is 0 on success, 2
//! for invalid input and 3 when a numerical budget is exhausted. Defaults can
//! be supplied in a JSON file named by the `IPP_CONFIG` environment variable.

use std::ffi::OsString;
use std::io::Write;
use std::path::Path;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::expectation::{expectation_finitary, renewal_time_bounds, ConditioningPrefix};
use crate::oracle::{constant_rate_envelope, extract_policy, policy_simulate};
use crate::paths::{sample_path, CountingPath, RateInterval};
use crate::random_objects::FinitaryVariable;
use crate::semigroup::{semigroup_apply, LatticeFunction, Mode, SemigroupConfig};
use crate::trading::{coherence_falsify, synthesize_superhedge, CapitalLedger};

/// Environment variable naming a JSON file of defaults.
pub const CONFIG_ENV: &str = "IPP_CONFIG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

/// Significant digits of every emitted number.
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Settings shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rates: Option<RateInterval>,
    pub tol: f64,
    pub theta: f64,
    pub seed: u64,
    pub format: OutputFormat,
    pub max_steps: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SemigroupConfig::default();
        RunConfig {
            rates: None,
            tol: s.tol,
            theta: s.theta,
            seed: 0,
            format: OutputFormat::Json,
            max_steps: s.max_steps,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))?;
        cfg.semigroup()?;
        Ok(cfg)
    }

    fn semigroup(&self) -> Result<SemigroupConfig> {
        let cfg = SemigroupConfig {
            tol: self.tol,
            theta: self.theta,
            max_steps: self.max_steps,
            ..SemigroupConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ipp", version, about = "Imprecise Poisson process toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct RateArgs {
    /// Rate interval as `lower,upper`.
    #[arg(long)]
    rates: Option<String>,
    #[arg(long = "lambda-lo")]
    lambda_lo: Option<f64>,
    #[arg(long = "lambda-hi")]
    lambda_hi: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct Numerics {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Conditional upper or lower expectation of a finitary variable.
    Expect {
        #[command(flatten)]
        rates: RateArgs,
        /// Variable JSON, inline or `@file`.
        #[arg(long)]
        variable: String,
        /// Observed `[[time, count], ...]`, inline or `@file`.
        #[arg(long)]
        prefix: Option<String>,
        #[arg(long, default_value = "upper")]
        mode: String,
        #[command(flatten)]
        numerics: Numerics,
    },
    /// Apply the sublinear semigroup to a lattice payoff.
    Semigroup {
        #[command(flatten)]
        rates: RateArgs,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value = "upper")]
        mode: String,
        /// `indicator:K`, `threshold:K`, `capped:K`, `constant:C`, or a JSON array.
        #[arg(long)]
        payoff: String,
        /// Extend the reported lattice to this top state.
        #[arg(long = "n-max")]
        n_max: Option<u32>,
        #[command(flatten)]
        numerics: Numerics,
    },
    /// Sample a counting path under a rate policy.
    Simulate {
        #[command(flatten)]
        rates: RateArgs,
        #[arg(long)]
        horizon: f64,
        /// `lower`, `upper`, `midpoint`, or a constant rate.
        #[arg(long, default_value = "upper")]
        policy: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
    },
    /// Build the grid superhedge of a lattice payoff.
    Superhedge {
        #[command(flatten)]
        rates: RateArgs,
        #[arg(long)]
        payoff: String,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n: usize,
        #[arg(long = "start-state", default_value_t = 0)]
        start_state: u32,
        #[arg(long = "n-max")]
        n_max: Option<u32>,
    },
    /// Find a continuation on which a ledger makes no sure profit.
    Coherence {
        /// Ledger JSON `{initial, strategy}`, inline or `@file`.
        #[arg(long, alias = "strategy")]
        ledger: String,
        /// Path JSON `{horizon, jumps}`, inline or `@file`.
        #[arg(long)]
        path: String,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        epsilon: f64,
    },
    /// Bounds on the expected delay until the next jump.
    Renewal {
        #[command(flatten)]
        rates: RateArgs,
    },
    /// Bracket the engine value between a constant-rate envelope and a
    /// simulated bang-bang policy.
    Oracle {
        #[command(flatten)]
        rates: RateArgs,
        #[arg(long)]
        variable: String,
        #[arg(long, default_value = "upper")]
        mode: String,
        #[command(flatten)]
        numerics: Numerics,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Constant rates for the envelope as `a,b,...`; defaults to the
        /// endpoints and midpoint.
        #[arg(long)]
        grid: Option<String>,
        /// Policy bucket width.
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
    },
}

/// Parse and run `args` (including the program name), reading defaults from
/// `IPP_CONFIG` when set. Returns the exit status.
pub fn run_command<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let base = match std::env::var_os(CONFIG_ENV) {
        Some(p) => match RunConfig::from_file(Path::new(&p)) {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_INVALID;
            }
        },
        None => RunConfig::default(),
    };
    run_with_config(args, &base, out, err)
}

/// As [`run_command`] with explicit defaults.
pub fn run_with_config<I, T>(args: I, base: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_INVALID
                }
            };
        }
    };
    match dispatch(cli.command, base) {
        Ok(text) => match out.write_all(text.as_bytes()) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: cannot write output: {e}");
                EXIT_RESOURCE
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_resource() {
                EXIT_RESOURCE
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn dispatch(cmd: Command, base: &RunConfig) -> Result<String> {
    match cmd {
        Command::Expect {
            rates,
            variable,
            prefix,
            mode,
            numerics,
        } => {
            let rates = resolve_rates(&rates, base)?;
            let var: FinitaryVariable = parse_json(&variable, "variable")?;
            let prefix: ConditioningPrefix = match prefix {
                Some(p) => parse_json(&p, "prefix")?,
                None => ConditioningPrefix::unconditional(),
            };
            let mode: Mode = mode.parse()?;
            let cfg = semigroup_config(base, &numerics)?;
            let res = expectation_finitary(&var, rates, &prefix, mode, &cfg)?;
            emit(&serde_json::to_value(res).expect("serializable"))
        }
        Command::Semigroup {
            rates,
            delta,
            mode,
            payoff,
            n_max,
            numerics,
        } => {
            let rates = resolve_rates(&rates, base)?;
            let mode: Mode = mode.parse()?;
            let g = parse_lattice(&payoff, n_max)?;
            let cfg = semigroup_config(base, &numerics)?;
            let res = semigroup_apply(&g, delta, rates, mode, &cfg)?;
            let values: serde_json::Map<String, Value> = res
                .function
                .values()
                .iter()
                .enumerate()
                .map(|(n, v)| (n.to_string(), json!(v)))
                .collect();
            emit(&json!({
                "mode": mode,
                "delta": delta,
                "values": values,
                "error_bound": res.error_bound,
                "steps": res.steps,
            }))
        }
        Command::Simulate {
            rates,
            horizon,
            policy,
            seed,
            format,
        } => {
            let rates = resolve_rates(&rates, base)?;
            let rate = match policy.as_str() {
                "lower" => rates.lower(),
                "upper" => rates.upper(),
                "midpoint" => rates.midpoint(),
                other => other
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("unknown policy {other:?}")))?,
            };
            let path = sample_path(&|_: u32, _: f64| rate, rates, horizon, seed.unwrap_or(base.seed))?;
            match format.unwrap_or(base.format) {
                OutputFormat::Csv => Ok(path
                    .jump_times()
                    .iter()
                    .enumerate()
                    .fold(String::from("index,jump_time\n"), |mut acc, (i, &t)| {
                        acc.push_str(&format!("{i},{}\n", round_significant(t)));
                        acc
                    })),
                OutputFormat::Json => emit(&serde_json::to_value(&path).expect("serializable")),
            }
        }
        Command::Superhedge {
            rates,
            payoff,
            s,
            t,
            n,
            start_state,
            n_max,
        } => {
            let rates = resolve_rates(&rates, base)?;
            let g = parse_lattice(&payoff, n_max)?;
            let hedge = synthesize_superhedge(&g, s, t, n, rates, start_state)?;
            emit(&serde_json::to_value(&hedge).expect("serializable"))
        }
        Command::Coherence {
            ledger,
            path,
            t,
            epsilon,
        } => {
            let ledger: CapitalLedger = parse_json(&ledger, "ledger")?;
            ledger.strategy.validate()?;
            let omega: CountingPath = parse_json(&path, "path")?;
            let f = coherence_falsify(&ledger, t, &omega, epsilon)?;
            let mut v = serde_json::to_value(&f).expect("serializable");
            v["succeeded"] = json!(f.succeeded());
            emit(&v)
        }
        Command::Renewal { rates } => {
            let rates = resolve_rates(&rates, base)?;
            let (lower, upper) = renewal_time_bounds(rates);
            emit(&json!({ "lower": extended(lower), "upper": extended(upper) }))
        }
        Command::Oracle {
            rates,
            variable,
            mode,
            numerics,
            samples,
            seed,
            grid,
            h,
        } => {
            let rates = resolve_rates(&rates, base)?;
            let var: FinitaryVariable = parse_json(&variable, "variable")?;
            let mode: Mode = mode.parse()?;
            let cfg = semigroup_config(base, &numerics)?;
            let grid = match grid {
                Some(g) => parse_list(&g)?,
                None => vec![rates.lower(), rates.midpoint(), rates.upper()],
            };
            if let Some(bad) = grid.iter().find(|&&l| !rates.contains(l)) {
                return Err(Error::InvalidRate(format!("grid rate {bad} outside the interval")));
            }
            let engine = expectation_finitary(&var, rates, &ConditioningPrefix::unconditional(), mode, &cfg)?;
            let envelope = constant_rate_envelope(&var, &grid, mode)?;
            let policy = extract_policy(&var, rates, h, mode)?;
            let sim = policy_simulate(&var, &policy, samples, seed.unwrap_or(base.seed))?;
            let dominated = match mode {
                Mode::Upper => envelope <= engine.value + engine.error_bound,
                Mode::Lower => envelope >= engine.value - engine.error_bound,
            };
            let attained = (sim.mean - engine.value).abs() <= sim.ci_halfwidth + engine.error_bound;
            emit(&json!({
                "mode": mode,
                "envelope": envelope,
                "simulated_mean": sim.mean,
                "ci": sim.ci_halfwidth,
                "samples": sim.samples,
                "engine_value": engine.value,
                "error_bound": engine.error_bound,
                "verdict": if dominated && attained { "consistent" } else { "inconsistent" },
            }))
        }
    }
}

fn semigroup_config(base: &RunConfig, n: &Numerics) -> Result<SemigroupConfig> {
    RunConfig {
        tol: n.tol.unwrap_or(base.tol),
        theta: n.theta.unwrap_or(base.theta),
        ..base.clone()
    }
    .semigroup()
}

fn resolve_rates(args: &RateArgs, base: &RunConfig) -> Result<RateInterval> {
    match (&args.rates, args.lambda_lo, args.lambda_hi) {
        (Some(r), None, None) => {
            let v = parse_list(r)?;
            match v.as_slice() {
                [lo, hi] => RateInterval::new(*lo, *hi),
                [rate] => RateInterval::precise(*rate),
                _ => Err(Error::Parse(format!("rates must be `lower,upper`, got {r:?}"))),
            }
        }
        (None, Some(lo), Some(hi)) => RateInterval::new(lo, hi),
        (None, None, None) => base
            .rates
            .ok_or_else(|| Error::Parse("no rate interval given (use --rates lower,upper)".into())),
        _ => Err(Error::Parse(
            "give either --rates or both --lambda-lo and --lambda-hi".into(),
        )),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: {x:?}")))
        })
        .collect()
}

/// Inline JSON, or the contents of a file when prefixed with `@`.
fn parse_json<T: for<'de> Deserialize<'de>>(arg: &str, what: &str) -> Result<T> {
    let text = match arg.strip_prefix('@') {
        Some(file) => std::fs::read_to_string(file)
            .map_err(|e| Error::Parse(format!("cannot read {what} file {file}: {e}")))?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{what}: {e}")))
}

/// Lattice payoffs: `indicator:K`, `threshold:K`, `capped:K`, `constant:C`,
/// or a JSON array of values (inline or `@file`).
pub fn parse_lattice(text: &str, n_max: Option<u32>) -> Result<LatticeFunction> {
    if text.starts_with('[') || text.starts_with('@') {
        let values: Vec<f64> = parse_json(text, "payoff")?;
        let g = LatticeFunction::new(values)?;
        return match n_max {
            Some(top) if top > g.n_max() => LatticeFunction::from_fn(top, |n| g.at(n)),
            _ => Ok(g),
        };
    }
    let (kind, arg) = text
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("payoff must look like kind:value, got {text:?}")))?;
    let int = || {
        arg.parse::<u32>()
            .map_err(|_| Error::Parse(format!("payoff argument must be a count, got {arg:?}")))
    };
    let top = |need: u32| n_max.unwrap_or(need).max(need);
    match kind {
        "indicator" => {
            let k = int()?;
            LatticeFunction::indicator(k, top(k + 1))
        }
        "threshold" => {
            let k = int()?;
            LatticeFunction::from_fn(top(k.max(1)), |n| f64::from(u8::from(n >= k)))
        }
        "capped" => {
            let k = int()?;
            LatticeFunction::from_fn(top(k.max(1)), |n| f64::from(n.min(k)))
        }
        "constant" => {
            let c: f64 = arg
                .parse()
                .map_err(|_| Error::Parse(format!("constant payoff needs a number, got {arg:?}")))?;
            LatticeFunction::constant(c, top(1))
        }
        other => Err(Error::Parse(format!("unknown payoff kind {other:?}"))),
    }
}

/// `±Infinity` as strings, finite values as numbers.
fn extended(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("Infinity")
    } else {
        json!("-Infinity")
    }
}

/// Round `x` to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_significant(n.as_f64().expect("f64"));
            *v = json!(x);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn emit(v: &Value) -> Result<String> {
    let mut v = v.clone();
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("ipp").chain(args.iter().copied());
        let code = run_with_config(argv, &RunConfig::default(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn renewal_example() {
        let (code, out, _) = run(&["renewal", "--rates", "0.5,2"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v, json!({"lower": 0.5, "upper": 2.0}));
        let (_, out, _) = run(&["renewal", "--lambda-lo", "0", "--lambda-hi", "1"]);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v, json!({"lower": 1.0, "upper": "Infinity"}));
    }

    #[test]
    fn malformed_rates_exit_two() {
        let var = r#"{"times":[1.0],"payoff":{"kind":"indicator","state":0}}"#;
        let (code, out, err) = run(&["expect", "--rates", "2,0.5", "--variable", var]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(err.contains("lower exceeds upper"), "{err}");
    }

    #[test]
    fn unknown_subcommand_exits_two() {
        let (code, _, err) = run(&["frobnicate"]);
        assert_eq!(code, 2);
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn semigroup_example() {
        let (code, out, err) = run(&["semigroup", "--delta", "1", "--rates", "1,2", "--payoff", "indicator:0", "--mode", "upper"]);
        assert_eq!(code, 0, "{err}");
        let v: Value = serde_json::from_str(&out).unwrap();
        let x = v["values"]["0"].as_f64().unwrap();
        assert!((x - 0.367879).abs() < 1e-6);
        assert!(v["error_bound"].as_f64().unwrap() <= 1e-6);
    }

    #[test]
    fn step_budget_exits_three() {
        let cfg = RunConfig {
            max_steps: 10,
            ..RunConfig::default()
        };
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = ["ipp", "semigroup", "--delta", "1", "--rates", "1,2", "--payoff", "indicator:0"];
        assert_eq!(run_with_config(argv, &cfg, &mut out, &mut err), 3);
    }

    #[test]
    fn numbers_have_twelve_digits() {
        assert_eq!(round_significant(1.0 / 7.0), 0.142857142857);
        assert_eq!(round_significant(-1.0 / 3.0), -0.333333333333);
        assert_eq!(round_significant(0.0), 0.0);
        let s = emit(&json!({"x": 1.0f64.exp()})).unwrap();
        assert!(s.contains("2.71828182846"), "{s}");
    }

    #[test]
    fn lattice_payoff_forms() {
        assert_eq!(parse_lattice("indicator:2", None).unwrap().values(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(parse_lattice("capped:2", Some(4)).unwrap().values(), &[0.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(parse_lattice("[1, 0.5]", Some(3)).unwrap().values(), &[1.0, 0.5, 0.5, 0.5]);
        assert!(parse_lattice("bogus:1", None).is_err());
        assert!(parse_lattice("indicator", None).is_err());
    }
}
