//! Independent checks on the expectation engine.
//!
//! [`constant_rate_envelope`] evaluates precise Poisson expectations by direct
//! convolution of increment distributions, which bounds the upper value from
//! below. [`extract_policy`] records the bang-bang rate choices of a
//! backward Euler recursion and [`policy_simulate`] replays them by Monte
//! Carlo, which should reproduce the engine value.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::paths::{sample_path_with, RateInterval};
use crate::random_objects::FinitaryVariable;
use crate::semigroup::{truncation_depth, Mode, SemigroupConfig};

/// Tail mass below which an increment distribution is cut off.
const PMF_CUTOFF: f64 = 1e-17;

/// `ψ_μ(0), ψ_μ(1), …` up to where the remaining mass is negligible, by the
/// forward recurrence `ψ(z+1) = ψ(z) μ / (z+1)`, and the mass left out.
fn increment_pmf(mu: f64) -> (Vec<f64>, f64) {
    if mu == 0.0 {
        return (vec![1.0], 0.0);
    }
    let hard_stop = (mu + 40.0 * mu.sqrt() + 60.0) as usize;
    let mut p = (-mu).exp();
    let mut pmf = Vec::new();
    let mut total = 0.0;
    for z in 0..=hard_stop {
        pmf.push(p);
        total += p;
        if z as f64 > mu && p < PMF_CUTOFF * total.max(f64::MIN_POSITIVE) && 1.0 - total < 1e-15 {
            break;
        }
        p *= mu / (z as f64 + 1.0);
    }
    (pmf, (1.0 - total).max(0.0))
}

/// `E[g(N_{t_1}, …, N_{t_k})]` for the Poisson process of constant rate
/// `lambda`, summed over independent increments.
pub fn precise_expectation(var: &FinitaryVariable, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidRate(format!("rate must be finite and nonnegative, got {lambda}")));
    }
    let mut prev = 0.0;
    let pmfs: Vec<Vec<f64>> = var
        .times()
        .iter()
        .map(|&t| {
            let mu = lambda * (t - prev);
            prev = t;
            increment_pmf(mu).0
        })
        .collect();
    let mut counts = vec![0u32; var.arity()];
    Ok(convolve(var, &pmfs, 0, 0, 1.0, &mut counts))
}

fn convolve(var: &FinitaryVariable, pmfs: &[Vec<f64>], j: usize, base: u32, weight: f64, counts: &mut [u32]) -> f64 {
    if j == pmfs.len() {
        return weight * var.eval_counts(counts);
    }
    let mut acc = 0.0;
    for (z, &p) in pmfs[j].iter().enumerate() {
        counts[j] = base + z as u32;
        acc += convolve(var, pmfs, j + 1, counts[j], weight * p, counts);
    }
    acc
}

/// Max (upper) or min (lower) of the precise expectations over a grid of
/// constant rates.
pub fn constant_rate_envelope(var: &FinitaryVariable, grid: &[f64], mode: Mode) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Precondition("rate grid is empty".into()));
    }
    let values = grid
        .iter()
        .map(|&l| precise_expectation(var, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(match mode {
        Mode::Upper => values.into_iter().fold(f64::NEG_INFINITY, f64::max),
        Mode::Lower => values.into_iter().fold(f64::INFINITY, f64::min),
    })
}

/// Rate choices for the window between two consecutive time points of a
/// variable, given the counts observed at the earlier ones.
#[derive(Debug, Clone, PartialEq)]
struct SegmentTable {
    /// Count at the start of the window; row `n` of a bucket is state `base + n`.
    base: u32,
    states: usize,
    width: f64,
    buckets: usize,
    /// `true` selects the upper rate; bucket-major.
    upper: Vec<bool>,
}

impl SegmentTable {
    fn picks_upper(&self, count: u32, offset: f64) -> bool {
        let b = ((offset / self.width) as usize).min(self.buckets - 1);
        let n = (count.saturating_sub(self.base) as usize).min(self.states - 1);
        self.upper[b * self.states + n]
    }
}

/// A bang-bang rate policy keyed by observed prefix, time bucket and count.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePolicy {
    rates: RateInterval,
    times: Vec<f64>,
    top: u32,
    step: f64,
    tables: HashMap<Vec<u32>, SegmentTable>,
}

impl RatePolicy {
    pub fn rates(&self) -> RateInterval {
        self.rates
    }

    /// Requested bucket width; actual widths divide each window evenly and
    /// never exceed it.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Largest count with its own entry; larger counts share its decisions.
    pub fn top(&self) -> u32 {
        self.top
    }

    /// The rate used at `time`, with current count `count`, after observing
    /// `prefix` at the variable's earlier time points.
    pub fn rate(&self, prefix: &[u32], count: u32, time: f64) -> Result<f64> {
        let j = prefix.len();
        if j >= self.times.len() {
            return Ok(self.rates.lower());
        }
        let from = if j == 0 { 0.0 } else { self.times[j - 1] };
        let table = self.table(prefix)?;
        Ok(self.pick(table.picks_upper(count, time - from)))
    }

    fn table(&self, prefix: &[u32]) -> Result<&SegmentTable> {
        self.tables
            .get(prefix)
            .ok_or_else(|| Error::Precondition(format!("no policy entry for observed counts {prefix:?}")))
    }

    fn pick(&self, upper: bool) -> f64 {
        if upper {
            self.rates.upper()
        } else {
            self.rates.lower()
        }
    }

    /// Every recorded decision, as rates.
    pub fn decisions(&self) -> impl Iterator<Item = f64> + '_ {
        self.tables
            .values()
            .flat_map(|t| t.upper.iter().map(|&u| self.pick(u)))
    }

    /// Decisions of the window after `prefix`, bucket `bucket`, at `count`.
    pub fn decision(&self, prefix: &[u32], bucket: usize, count: u32) -> Result<f64> {
        let t = self.table(prefix)?;
        if bucket >= t.buckets {
            return Err(Error::Precondition(format!("bucket {bucket} out of {}", t.buckets)));
        }
        let n = (count.saturating_sub(t.base) as usize).min(t.states - 1);
        Ok(self.pick(t.upper[bucket * t.states + n]))
    }

    pub fn buckets(&self, prefix: &[u32]) -> Result<usize> {
        Ok(self.table(prefix)?.buckets)
    }

    pub fn is_constant(&self) -> bool {
        let mut it = self.decisions();
        match it.next() {
            Some(first) => it.all(|r| r == first),
            None => true,
        }
    }
}

struct Extraction<'a> {
    var: &'a FinitaryVariable,
    rates: RateInterval,
    step: f64,
    mode: Mode,
    top: u32,
    tables: HashMap<Vec<u32>, SegmentTable>,
}

impl Extraction<'_> {
    fn value(&mut self, prefix: &mut Vec<u32>) -> f64 {
        let j = prefix.len();
        if j == self.var.arity() {
            return self.var.eval_counts(prefix);
        }
        let times = self.var.times();
        let (from_time, base) = match j {
            0 => (0.0, 0),
            _ => (times[j - 1], prefix[j - 1]),
        };
        let mut v: Vec<f64> = (base..=self.top.max(base))
            .map(|n| {
                prefix.push(n);
                let x = self.value(prefix);
                prefix.pop();
                x
            })
            .collect();
        let window = times[j] - from_time;
        let buckets = ((window / self.step).ceil() as usize).max(1);
        let width = window / buckets as f64;
        let states = v.len();
        let mut upper = vec![false; buckets * states];
        let (lo, hi) = (self.rates.lower(), self.rates.upper());
        for b in (0..buckets).rev() {
            let row = &mut upper[b * states..(b + 1) * states];
            row[states - 1] = self.mode == Mode::Upper;
            for n in 0..states - 1 {
                let d = v[n + 1] - v[n];
                let pick_upper = match self.mode {
                    Mode::Upper => d >= 0.0,
                    Mode::Lower => d < 0.0,
                };
                row[n] = pick_upper;
                v[n] += width * if pick_upper { hi } else { lo } * d;
            }
        }
        self.tables.insert(
            prefix.clone(),
            SegmentTable {
                base,
                states,
                width,
                buckets,
                upper,
            },
        );
        v[0]
    }
}

/// Run an Euler recursion of bucket width at most `h` backwards through the
/// variable's time points and record, per observed prefix, bucket and count,
/// which endpoint rate attains the max (upper) or min (lower). Ties go to the
/// upper rate in upper mode and to the lower rate in lower mode.
pub fn extract_policy(var: &FinitaryVariable, rates: RateInterval, h: f64, mode: Mode) -> Result<RatePolicy> {
    if !(h > 0.0 && h.is_finite() && h * rates.upper() <= 1.0) {
        return Err(Error::Precondition(format!(
            "bucket width {h} must be positive with width times upper rate at most 1"
        )));
    }
    let cfg = SemigroupConfig::default();
    let mass = rates.upper() * var.last_time();
    let (depth, _) = truncation_depth(mass, 2.0 * var.bound(), 1e-9, &cfg)?;
    let mut ex = Extraction {
        var,
        rates,
        step: h,
        mode,
        top: depth,
        tables: HashMap::new(),
    };
    ex.value(&mut Vec::new());
    Ok(RatePolicy {
        rates,
        times: var.times().to_vec(),
        top: depth,
        step: h,
        tables: ex.tables,
    })
}

/// Monte Carlo mean with a 99% normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub samples: u64,
}

/// Two-sided 99% standard normal quantile.
const Z99: f64 = 2.575_829_303_548_901;

const BATCH: u64 = 4096;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// Simulate the variable under the policy (by thinning, window by window)
/// and summarise its sample mean.
///
/// Samples are split into fixed batches, each drawn from its own stream of a
/// seeded ChaCha generator, so results do not depend on thread scheduling.
pub fn policy_simulate(
    var: &FinitaryVariable,
    policy: &RatePolicy,
    samples: u64,
    seed: u64,
) -> Result<SimulationSummary> {
    if samples < 2 {
        return Err(Error::Precondition("need at least two samples".into()));
    }
    if policy.times != var.times() {
        return Err(Error::Precondition("policy was extracted for different time points".into()));
    }
    let batches = samples.div_ceil(BATCH);
    let partial: Vec<(f64, f64)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let n = BATCH.min(samples - b * BATCH);
            let (mut s1, mut s2) = (Compensated::default(), Compensated::default());
            let mut counts = Vec::with_capacity(var.arity());
            for _ in 0..n {
                counts.clear();
                simulate_counts(var, policy, &mut rng, &mut counts)?;
                let x = var.eval_counts(&counts);
                s1.add(x);
                s2.add(x * x);
            }
            Ok((s1.value(), s2.value()))
        })
        .collect::<Result<_>>()?;
    let (mut s1, mut s2) = (Compensated::default(), Compensated::default());
    for (a, b) in partial {
        s1.add(a);
        s2.add(b);
    }
    let n = samples as f64;
    let mean = s1.value() / n;
    let var_hat = ((s2.value() - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(SimulationSummary {
        mean,
        ci_halfwidth: Z99 * (var_hat / n).sqrt(),
        samples,
    })
}

fn simulate_counts(
    var: &FinitaryVariable,
    policy: &RatePolicy,
    rng: &mut ChaCha8Rng,
    counts: &mut Vec<u32>,
) -> Result<()> {
    let mut from = 0.0;
    for &t in var.times() {
        let base = counts.last().copied().unwrap_or(0);
        let window = t - from;
        let mut reached = base;
        if window > 0.0 {
            let table = policy.table(counts)?;
            let rate = |c: u32, s: f64| policy.pick(table.picks_upper(base + c, s));
            reached += sample_path_with(&rate, policy.rates, window, rng)?.total_jumps();
        }
        counts.push(reached);
        from = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectation::{upper_expectation_finitary, ConditioningPrefix};
    use crate::random_objects::Payoff;
    use crate::semigroup::poisson_pmf;

    fn rates(lo: f64, hi: f64) -> RateInterval {
        RateInterval::new(lo, hi).unwrap()
    }

    fn var(times: &[f64], payoff: Payoff) -> FinitaryVariable {
        FinitaryVariable::with_structural_bound(times.to_vec(), payoff).unwrap()
    }

    fn no_jump() -> FinitaryVariable {
        var(&[1.0], Payoff::Indicator { state: 0, coord: None })
    }

    fn capped() -> FinitaryVariable {
        var(&[1.0], Payoff::CappedCount { cap: 30, coord: None })
    }

    #[test]
    fn envelope_examples() {
        let up = constant_rate_envelope(&no_jump(), &[1.0, 1.5, 2.0], Mode::Upper).unwrap();
        assert!((up - (-1.0f64).exp()).abs() < 1e-15);
        let one = constant_rate_envelope(&no_jump(), &[1.7], Mode::Upper).unwrap();
        assert!((one - (-1.7f64).exp()).abs() < 1e-15);
        let c = constant_rate_envelope(&capped(), &[0.5, 2.0], Mode::Upper).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
        let c = constant_rate_envelope(&capped(), &[0.5, 2.0], Mode::Lower).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
        assert!(constant_rate_envelope(&capped(), &[], Mode::Upper).is_err());
    }

    #[test]
    fn forward_pmf_matches_log_space_pmf() {
        for &mu in &[0.01, 1.0, 3.7, 40.0] {
            let (pmf, rest) = increment_pmf(mu);
            for (z, p) in pmf.iter().enumerate() {
                assert!((p - poisson_pmf(mu, z as u32)).abs() < 1e-13, "mu={mu} z={z}");
            }
            assert!(rest < 1e-14);
        }
    }

    #[test]
    fn lower_envelope_is_conjugate() {
        let v = var(&[0.4, 1.1], Payoff::Table { n_max: 3, values: (0..16).map(|i| f64::from(i % 5) - 2.0).collect() });
        let grid = [0.5, 0.9, 1.3];
        let lo = constant_rate_envelope(&v, &grid, Mode::Lower).unwrap();
        let up_neg = constant_rate_envelope(&v.negated(), &grid, Mode::Upper).unwrap();
        assert_eq!(lo, -up_neg);
    }

    #[test]
    fn policy_examples() {
        let r = rates(1.0, 2.0);
        let p = extract_policy(&capped(), r, 1e-2, Mode::Upper).unwrap();
        assert!(p.decisions().all(|x| x == 2.0));

        let p = extract_policy(&no_jump(), r, 1e-2, Mode::Upper).unwrap();
        for b in 0..p.buckets(&[]).unwrap() {
            assert_eq!(p.decision(&[], b, 0).unwrap(), 1.0);
            assert_eq!(p.decision(&[], b, 3).unwrap(), 2.0);
        }
        let p = extract_policy(&no_jump(), rates(1.4, 1.4), 1e-2, Mode::Upper).unwrap();
        assert!(p.is_constant());
        assert!(extract_policy(&no_jump(), r, 0.6, Mode::Upper).is_err());
    }

    #[test]
    fn simulation_examples() {
        let r = rates(1.5, 1.5);
        let p = extract_policy(&capped(), r, 1e-2, Mode::Upper).unwrap();
        let s = policy_simulate(&capped(), &p, 200_000, 7).unwrap();
        assert!((s.mean - 1.5).abs() <= s.ci_halfwidth, "{s:?}");

        let z = rates(0.0, 0.0);
        let p = extract_policy(&no_jump(), z, 1e-2, Mode::Upper).unwrap();
        let s = policy_simulate(&no_jump(), &p, 1000, 1).unwrap();
        assert_eq!((s.mean, s.ci_halfwidth), (1.0, 0.0));
        assert!(policy_simulate(&no_jump(), &p, 1, 1).is_err());
    }

    #[test]
    fn simulation_is_reproducible() {
        let r = rates(1.0, 2.0);
        let v = var(&[0.5, 1.0], Payoff::NoIncrement { from: 0, to: 1 });
        let p = extract_policy(&v, r, 1e-2, Mode::Upper).unwrap();
        let a = policy_simulate(&v, &p, 10_000, 42).unwrap();
        let b = policy_simulate(&v, &p, 10_000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extracted_policy_attains_engine_value() {
        let r = rates(1.0, 2.0);
        let v = no_jump();
        let cfg = SemigroupConfig::with_tol(1e-5);
        let engine = upper_expectation_finitary(&v, r, &ConditioningPrefix::unconditional(), &cfg).unwrap();
        let p = extract_policy(&v, r, 1e-3, Mode::Upper).unwrap();
        let s = policy_simulate(&v, &p, 400_000, 3).unwrap();
        assert!((s.mean - engine.value).abs() <= s.ci_halfwidth + engine.error_bound, "{s:?} vs {engine:?}");
    }
}
