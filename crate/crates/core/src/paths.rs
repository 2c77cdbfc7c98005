//! Counting paths and the path algebra.
//!
//! A [`CountingPath`] is one finite-horizon realisation of the counting
//! process: it starts at zero, is right-continuous, and increases by unit jumps
//! at strictly increasing times. Everything else in the crate evaluates
//! variables, stopping times and capital processes on these paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds `[lower, upper]` on the jump intensity, per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RateIntervalRepr", into = "RateIntervalRepr")]
pub struct RateInterval {
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
struct RateIntervalRepr {
    lower: f64,
    upper: f64,
}

impl TryFrom<RateIntervalRepr> for RateInterval {
    type Error = Error;
    fn try_from(r: RateIntervalRepr) -> Result<Self> {
        RateInterval::new(r.lower, r.upper)
    }
}

impl From<RateInterval> for RateIntervalRepr {
    fn from(r: RateInterval) -> Self {
        RateIntervalRepr {
            lower: r.lower,
            upper: r.upper,
        }
    }
}

impl RateInterval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidRate(format!(
                "rates must be finite, got [{lower}, {upper}]"
            )));
        }
        if lower < 0.0 {
            return Err(Error::InvalidRate(format!(
                "rates must be nonnegative, got lower {lower}"
            )));
        }
        if lower > upper {
            return Err(Error::RateOrder { lower, upper });
        }
        Ok(RateInterval { lower, upper })
    }

    /// The degenerate interval `[rate, rate]` of the precise Poisson process.
    pub fn precise(rate: f64) -> Result<Self> {
        RateInterval::new(rate, rate)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }

    pub fn contains(&self, rate: f64) -> bool {
        self.lower <= rate && rate <= self.upper
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    /// Whether `self` is nested inside `outer`.
    pub fn is_within(&self, outer: &RateInterval) -> bool {
        outer.lower <= self.lower && self.upper <= outer.upper
    }
}

/// A counting path on `[0, horizon]`.
///
/// Invariants: jump times are finite, strictly positive, strictly increasing
/// and at most `horizon`. The value at `t` counts the jumps at or before `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathRepr", into = "PathRepr")]
pub struct CountingPath {
    jumps: Vec<f64>,
    horizon: f64,
}

#[derive(Serialize, Deserialize)]
struct PathRepr {
    horizon: f64,
    jumps: Vec<f64>,
}

impl TryFrom<PathRepr> for CountingPath {
    type Error = Error;
    fn try_from(r: PathRepr) -> Result<Self> {
        CountingPath::new(r.jumps, r.horizon)
    }
}

impl From<CountingPath> for PathRepr {
    fn from(p: CountingPath) -> Self {
        PathRepr {
            horizon: p.horizon,
            jumps: p.jumps,
        }
    }
}

impl CountingPath {
    pub fn new(jumps: Vec<f64>, horizon: f64) -> Result<Self> {
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::InvalidPath(format!(
                "horizon must be finite and nonnegative, got {horizon}"
            )));
        }
        let mut prev = 0.0;
        for (i, &j) in jumps.iter().enumerate() {
            if !j.is_finite() || j <= prev {
                return Err(Error::InvalidPath(format!(
                    "jump {i} at {j} is not strictly after {prev}"
                )));
            }
            if j > horizon {
                return Err(Error::InvalidPath(format!(
                    "jump {i} at {j} exceeds horizon {horizon}"
                )));
            }
            prev = j;
        }
        Ok(CountingPath { jumps, horizon })
    }

    /// The path that never jumps on `[0, horizon]`.
    pub fn empty(horizon: f64) -> Result<Self> {
        CountingPath::new(Vec::new(), horizon)
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jumps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn total_jumps(&self) -> u32 {
        self.jumps.len() as u32
    }

    /// `N_t`: the number of jumps at or before `t`.
    pub fn eval(&self, t: f64) -> Result<u32> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfHorizon {
                time: t,
                horizon: self.horizon,
            });
        }
        Ok(self.count_le(t))
    }

    pub(crate) fn count_le(&self, t: f64) -> u32 {
        self.jumps.partition_point(|&j| j <= t) as u32
    }

    /// First jump strictly after `t`, if any.
    pub fn next_jump_after(&self, t: f64) -> Option<f64> {
        let i = self.jumps.partition_point(|&j| j <= t);
        self.jumps.get(i).copied()
    }

    /// Whether two paths coincide on `[0, t]`. Both horizons must reach `t`.
    pub fn agrees_until(&self, other: &CountingPath, t: f64) -> bool {
        if self.horizon < t || other.horizon < t {
            return false;
        }
        let a = self.count_le(t) as usize;
        let b = other.count_le(t) as usize;
        a == b && self.jumps[..a] == other.jumps[..b]
    }

    /// Keep the jumps at or before `t` and extend the horizon to `horizon`
    /// without further jumps.
    pub fn truncate(&self, t: f64, horizon: f64) -> Result<CountingPath> {
        let n = self.count_le(t) as usize;
        CountingPath::new(self.jumps[..n].to_vec(), horizon)
    }

    /// Stitch `varpi` onto `self` at time `tau`: the result follows `self`
    /// before `tau` and `self(tau) + varpi(t - tau)` afterwards. A jump of
    /// `self` exactly at `tau` is kept.
    pub fn stitch(&self, tau: f64, varpi: &CountingPath) -> Result<CountingPath> {
        if !(0.0..=self.horizon).contains(&tau) {
            return Err(Error::OutOfHorizon {
                time: tau,
                horizon: self.horizon,
            });
        }
        let n = self.count_le(tau) as usize;
        let mut jumps = Vec::with_capacity(n + varpi.jumps.len());
        jumps.extend_from_slice(&self.jumps[..n]);
        jumps.extend(varpi.jumps.iter().map(|&r| tau + r));
        CountingPath::new(jumps, tau + varpi.horizon)
    }

    /// The increments of `self` from time `s` on, as a path starting at zero.
    pub fn shift(&self, s: f64) -> Result<CountingPath> {
        if !(0.0..=self.horizon).contains(&s) {
            return Err(Error::OutOfHorizon {
                time: s,
                horizon: self.horizon,
            });
        }
        let start = self.count_le(s) as usize;
        let jumps = self.jumps[start..]
            .iter()
            .map(|&r| exact_offset(r, s))
            .collect();
        CountingPath::new(jumps, exact_offset(self.horizon, s))
    }

    /// CSV with columns `index,jump_time`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,jump_time\n");
        for (i, j) in self.jumps.iter().enumerate() {
            out.push_str(&format!("{i},{j}\n"));
        }
        out
    }
}

/// `r - s`, nudged by an ulp if needed so that `s + (r - s) == r` holds exactly.
fn exact_offset(r: f64, s: f64) -> f64 {
    let d = r - s;
    if s + d == r {
        return d;
    }
    let (up, down) = (d.next_up(), d.next_down());
    if s + up == r {
        up
    } else if s + down == r {
        down
    } else {
        d
    }
}

/// A jump intensity that may depend on the current count and time.
pub trait IntensityPolicy {
    fn rate(&self, count: u32, time: f64) -> f64;
}

impl<F: Fn(u32, f64) -> f64> IntensityPolicy for F {
    fn rate(&self, count: u32, time: f64) -> f64 {
        self(count, time)
    }
}

/// Simulate a counting path on `[0, horizon]` by thinning a rate-`upper`
/// Poisson stream; each candidate at time `t` is accepted with probability
/// `policy(n, t) / upper`, where `n` is the count just before `t`.
pub fn sample_path<P: IntensityPolicy + ?Sized>(
    policy: &P,
    rates: RateInterval,
    horizon: f64,
    seed: u64,
) -> Result<CountingPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_path_with(policy, rates, horizon, &mut rng)
}

/// As [`sample_path`], drawing from a caller-supplied generator.
pub fn sample_path_with<P: IntensityPolicy + ?Sized, R: Rng + ?Sized>(
    policy: &P,
    rates: RateInterval,
    horizon: f64,
    rng: &mut R,
) -> Result<CountingPath> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Precondition(format!(
            "sampling horizon must be positive, got {horizon}"
        )));
    }
    let mut jumps = Vec::new();
    let upper = rates.upper();
    if upper == 0.0 {
        let rate = policy.rate(0, 0.0);
        check_rate(rate, rates, 0, 0.0)?;
        return CountingPath::new(jumps, horizon);
    }
    let gap = Exp::new(upper).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t > horizon {
            break;
        }
        let count = jumps.len() as u32;
        let rate = policy.rate(count, t);
        check_rate(rate, rates, count, t)?;
        let u: f64 = rng.random();
        if u * upper < rate && jumps.last().is_none_or(|&last| t > last) {
            jumps.push(t);
        }
    }
    CountingPath::new(jumps, horizon)
}

fn check_rate(rate: f64, rates: RateInterval, count: u32, time: f64) -> Result<()> {
    if rates.contains(rate) {
        Ok(())
    } else {
        Err(Error::InvalidPolicy {
            rate,
            lower: rates.lower(),
            upper: rates.upper(),
            count,
            time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(jumps: &[f64], horizon: f64) -> CountingPath {
        CountingPath::new(jumps.to_vec(), horizon).unwrap()
    }

    #[test]
    fn eval_counts_jumps_at_or_before() {
        let p = path(&[0.3, 0.9], 1.0);
        assert_eq!(p.eval(0.0).unwrap(), 0);
        assert_eq!(p.eval(0.3).unwrap(), 1);
        assert_eq!(p.eval(0.5).unwrap(), 1);
        assert_eq!(p.eval(1.0).unwrap(), 2);
        assert!(matches!(p.eval(1.5), Err(Error::OutOfHorizon { .. })));
        assert!(p.eval(-0.1).is_err());
    }

    #[test]
    fn construction_rejects_bad_jumps() {
        assert!(CountingPath::new(vec![0.5, 0.5], 1.0).is_err());
        assert!(CountingPath::new(vec![0.6, 0.5], 1.0).is_err());
        assert!(CountingPath::new(vec![0.0], 1.0).is_err());
        assert!(CountingPath::new(vec![1.5], 1.0).is_err());
        assert!(CountingPath::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn stitch_examples() {
        let omega = path(&[0.3], 1.0);
        let varpi = path(&[0.2], 1.0);
        let s = omega.stitch(0.5, &varpi).unwrap();
        assert_eq!(s.jump_times(), &[0.3, 0.7]);
        assert_eq!(s.horizon(), 1.5);

        let s0 = omega.stitch(0.0, &varpi).unwrap();
        assert_eq!(s0.jump_times(), varpi.jump_times());

        let none = CountingPath::empty(2.0).unwrap();
        let t = path(&[0.3, 0.6, 0.9], 1.0).stitch(0.6, &none).unwrap();
        assert_eq!(t.jump_times(), &[0.3, 0.6]);
    }

    #[test]
    fn shift_examples() {
        let p = path(&[0.3, 0.9], 1.0);
        let s = p.shift(0.5).unwrap();
        assert_eq!(s.jump_times().len(), 1);
        assert!((s.jump_times()[0] - 0.4).abs() < 1e-15);
        assert_eq!(p.shift(0.0).unwrap(), p);
        assert!(p.shift(1.0).unwrap().jump_times().is_empty());
    }

    #[test]
    fn zero_policy_never_jumps() {
        let rates = RateInterval::new(0.0, 3.0).unwrap();
        let p = sample_path(&|_: u32, _: f64| 0.0, rates, 5.0, 7).unwrap();
        assert!(p.jump_times().is_empty());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let rates = RateInterval::new(1.0, 2.0).unwrap();
        let pol = |n: u32, _: f64| if n.is_multiple_of(2) { 1.0 } else { 2.0 };
        let a = sample_path(&pol, rates, 10.0, 42).unwrap();
        let b = sample_path(&pol, rates, 10.0, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn policy_outside_interval_is_rejected() {
        let rates = RateInterval::new(1.0, 2.0).unwrap();
        let err = sample_path(&|_: u32, _: f64| 2.5, rates, 10.0, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidPolicy { .. }));
    }

    #[test]
    fn rate_interval_validation() {
        assert!(matches!(
            RateInterval::new(2.0, 0.5),
            Err(Error::RateOrder { .. })
        ));
        assert!(RateInterval::new(-1.0, 0.5).is_err());
        assert!(RateInterval::new(0.0, f64::INFINITY).is_err());
        let r = RateInterval::new(1.2, 1.8).unwrap();
        assert!(r.is_within(&RateInterval::new(1.0, 2.0).unwrap()));
    }

    #[test]
    fn json_and_csv_formats() {
        let p = path(&[0.25, 0.5], 1.0);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"horizon":1.0,"jumps":[0.25,0.5]}"#);
        let back: CountingPath = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<CountingPath>(r#"{"horizon":1.0,"jumps":[0.5,0.25]}"#).is_err());
        assert_eq!(p.to_csv(), "index,jump_time\n0,0.25\n1,0.5\n");
    }
}
