//! Stopping times and finitary variables.
//!
//! Only a closed family of stopping times is representable, so every one of
//! them is a genuine stopping time by construction; [`measurability_check`]
//! exists to test that claim (and to catch hand-written functionals that peek
//! ahead).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::CountingPath;

/// The value of a stopping time on a finite-horizon path.
///
/// `BeyondHorizon` orders above every finite time and stands in for `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopTime {
    Finite(f64),
    BeyondHorizon,
}

impl StopTime {
    pub fn finite(self) -> Option<f64> {
        match self {
            StopTime::Finite(t) => Some(t),
            StopTime::BeyondHorizon => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, StopTime::Finite(_))
    }

    /// `self ∧ t`, a finite time for any finite `t` no later than the horizon.
    pub fn min_with(self, t: f64) -> f64 {
        match self {
            StopTime::Finite(s) => s.min(t),
            StopTime::BeyondHorizon => t,
        }
    }
}

impl Eq for StopTime {}

impl PartialOrd for StopTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for StopTime {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (StopTime::Finite(a), StopTime::Finite(b)) => a.total_cmp(b),
            (StopTime::Finite(_), StopTime::BeyondHorizon) => Ordering::Less,
            (StopTime::BeyondHorizon, StopTime::Finite(_)) => Ordering::Greater,
            (StopTime::BeyondHorizon, StopTime::BeyondHorizon) => Ordering::Equal,
        }
    }
}

/// Anything that maps a path to a (possibly infinite) time.
pub trait TimeFunctional {
    fn stop_time(&self, path: &CountingPath) -> StopTime;
}

impl<F: Fn(&CountingPath) -> StopTime> TimeFunctional for F {
    fn stop_time(&self, path: &CountingPath) -> StopTime {
        self(path)
    }
}

/// The representable stopping times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoppingTime {
    /// A fixed time point.
    Constant { t: f64 },
    /// First time the count reaches `level`.
    HitLevel { level: u32 },
    /// First jump strictly after the inner stopping time.
    NextJumpAfter { inner: Box<StoppingTime> },
    Min {
        a: Box<StoppingTime>,
        b: Box<StoppingTime>,
    },
    Max {
        a: Box<StoppingTime>,
        b: Box<StoppingTime>,
    },
    /// The `rank`-th smallest (0-based) of several stopping times.
    OrderStatistic { times: Vec<StoppingTime>, rank: usize },
    /// First time some cell of the uniform `cells`-cell grid on
    /// `[start, end]` has seen two jumps.
    TwoJumpsInCell { start: f64, end: f64, cells: usize },
}

impl StoppingTime {
    pub fn constant(t: f64) -> Self {
        StoppingTime::Constant { t }
    }

    pub fn hit_level(level: u32) -> Self {
        StoppingTime::HitLevel { level }
    }

    pub fn next_jump_after(inner: StoppingTime) -> Self {
        StoppingTime::NextJumpAfter {
            inner: Box::new(inner),
        }
    }

    pub fn min(a: StoppingTime, b: StoppingTime) -> Self {
        StoppingTime::Min {
            a: Box::new(a),
            b: Box::new(b),
        }
    }

    pub fn max(a: StoppingTime, b: StoppingTime) -> Self {
        StoppingTime::Max {
            a: Box::new(a),
            b: Box::new(b),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StoppingTime::Constant { t } => {
                if !t.is_finite() || *t < 0.0 {
                    return Err(Error::Precondition(format!(
                        "constant stopping time must be finite and nonnegative, got {t}"
                    )));
                }
                Ok(())
            }
            StoppingTime::HitLevel { .. } => Ok(()),
            StoppingTime::NextJumpAfter { inner } => inner.validate(),
            StoppingTime::Min { a, b } | StoppingTime::Max { a, b } => {
                a.validate()?;
                b.validate()
            }
            StoppingTime::OrderStatistic { times, rank } => {
                if *rank >= times.len() {
                    return Err(Error::Precondition(format!(
                        "order statistic rank {rank} out of {} times",
                        times.len()
                    )));
                }
                times.iter().try_for_each(StoppingTime::validate)
            }
            StoppingTime::TwoJumpsInCell { start, end, cells } => {
                if !(start.is_finite() && end.is_finite() && 0.0 <= *start && start < end)
                    || *cells == 0
                {
                    return Err(Error::Precondition(format!(
                        "two-jump detector needs 0 <= start < end and cells >= 1, got [{start}, {end}] / {cells}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, path: &CountingPath) -> StopTime {
        match self {
            StoppingTime::Constant { t } => {
                if *t <= path.horizon() {
                    StopTime::Finite(t.max(0.0))
                } else {
                    StopTime::BeyondHorizon
                }
            }
            StoppingTime::HitLevel { level } => {
                if *level == 0 {
                    return StopTime::Finite(0.0);
                }
                path.jump_times()
                    .get(*level as usize - 1)
                    .map_or(StopTime::BeyondHorizon, |&t| StopTime::Finite(t))
            }
            StoppingTime::NextJumpAfter { inner } => match inner.eval(path) {
                StopTime::Finite(t) => path
                    .next_jump_after(t)
                    .map_or(StopTime::BeyondHorizon, StopTime::Finite),
                StopTime::BeyondHorizon => StopTime::BeyondHorizon,
            },
            StoppingTime::Min { a, b } => a.eval(path).min(b.eval(path)),
            StoppingTime::Max { a, b } => a.eval(path).max(b.eval(path)),
            StoppingTime::OrderStatistic { times, rank } => {
                let mut values: Vec<StopTime> = times.iter().map(|s| s.eval(path)).collect();
                values.sort();
                values[*rank]
            }
            StoppingTime::TwoJumpsInCell { start, end, cells } => {
                two_jumps_in_cell(path, *start, *end, *cells)
            }
        }
    }

    /// Largest constant appearing anywhere in the expression.
    pub fn max_constant(&self) -> Option<f64> {
        match self {
            StoppingTime::Constant { t } => Some(*t),
            StoppingTime::HitLevel { .. } => None,
            StoppingTime::NextJumpAfter { inner } => inner.max_constant(),
            StoppingTime::Min { a, b } | StoppingTime::Max { a, b } => {
                max_opt(a.max_constant(), b.max_constant())
            }
            StoppingTime::OrderStatistic { times, .. } => times
                .iter()
                .map(StoppingTime::max_constant)
                .fold(None, max_opt),
            StoppingTime::TwoJumpsInCell { end, .. } => Some(*end),
        }
    }
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

impl TimeFunctional for StoppingTime {
    fn stop_time(&self, path: &CountingPath) -> StopTime {
        self.eval(path)
    }
}

/// The `k`-th point of the uniform `cells`-cell grid on `[start, end]`.
/// The last point is `end` exactly.
pub fn grid_time(start: f64, end: f64, cells: usize, k: usize) -> f64 {
    if k >= cells {
        end
    } else {
        start + (end - start) * (k as f64) / (cells as f64)
    }
}

fn two_jumps_in_cell(path: &CountingPath, start: f64, end: f64, cells: usize) -> StopTime {
    let cell_of = |t: f64| {
        let guess = ((t - start) / (end - start) * cells as f64).ceil() as usize;
        let mut k = guess.clamp(1, cells);
        while k > 1 && t <= grid_time(start, end, cells, k - 1) {
            k -= 1;
        }
        while k < cells && t > grid_time(start, end, cells, k) {
            k += 1;
        }
        k
    };
    for pair in path.jump_times().windows(2) {
        let (first, second) = (pair[0], pair[1]);
        if first <= start {
            continue;
        }
        if second > end {
            break;
        }
        if cell_of(first) == cell_of(second) {
            return StopTime::Finite(second);
        }
    }
    StopTime::BeyondHorizon
}

/// Result of checking the stopping-time property on sample pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MeasurabilityReport {
    pub checked: usize,
    /// Ordered pairs whose paths agree up to the first path's stopping time.
    pub agreeing: usize,
    /// Indices of pairs where agreement did not imply equal values.
    pub violations: Vec<usize>,
}

impl MeasurabilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// For each pair, and in both orders: if the paths agree on `[0, τ(ω₁)]`,
/// the values `τ(ω₁)` and `τ(ω₂)` must be equal.
pub fn measurability_check<T: TimeFunctional + ?Sized>(
    st: &T,
    pairs: &[(CountingPath, CountingPath)],
) -> MeasurabilityReport {
    let mut report = MeasurabilityReport::default();
    for (i, (a, b)) in pairs.iter().enumerate() {
        let mut bad = false;
        for (w1, w2) in [(a, b), (b, a)] {
            report.checked += 1;
            let v1 = st.stop_time(w1);
            let agree = match v1 {
                StopTime::Finite(t) => w1.agrees_until(w2, t),
                StopTime::BeyondHorizon => {
                    w1.horizon() == w2.horizon() && w1.jump_times() == w2.jump_times()
                }
            };
            if agree {
                report.agreeing += 1;
                if st.stop_time(w2) != v1 {
                    bad = true;
                }
            }
        }
        if bad {
            report.violations.push(i);
        }
    }
    report
}

/// A bounded payoff on tuples of counts `(n_1, …, n_k)`.
///
/// Coordinates are 0-based; an omitted `coord` means the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Constant {
        value: f64,
    },
    /// `1{n_coord = state}`.
    Indicator {
        state: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coord: Option<usize>,
    },
    /// `1{n_coord >= level}`.
    Threshold {
        level: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coord: Option<usize>,
    },
    /// `min(n_coord, cap)`.
    CappedCount {
        cap: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coord: Option<usize>,
    },
    /// `min(n_to - n_from, cap)`.
    CappedIncrement { cap: u32, from: usize, to: usize },
    /// `1{n_to = n_from}`.
    NoIncrement { from: usize, to: usize },
    /// Dense row-major table over `{0..=n_max}^k`; counts above `n_max` read
    /// the `n_max` entry.
    Table { n_max: u32, values: Vec<f64> },
    /// `scale * inner + offset`.
    Affine {
        scale: f64,
        offset: f64,
        inner: Box<Payoff>,
    },
    Sum { terms: Vec<Payoff> },
    /// `inner` applied to the selected coordinates only.
    Project { coords: Vec<usize>, inner: Box<Payoff> },
}

impl Payoff {
    pub fn affine(scale: f64, offset: f64, inner: Payoff) -> Payoff {
        Payoff::Affine {
            scale,
            offset,
            inner: Box::new(inner),
        }
    }

    pub fn negated(&self) -> Payoff {
        Payoff::affine(-1.0, 0.0, self.clone())
    }

    pub fn eval(&self, counts: &[u32]) -> f64 {
        let last = counts.len() - 1;
        let pick = |c: &Option<usize>| counts[c.unwrap_or(last)];
        match self {
            Payoff::Constant { value } => *value,
            Payoff::Indicator { state, coord } => f64::from(u8::from(pick(coord) == *state)),
            Payoff::Threshold { level, coord } => f64::from(u8::from(pick(coord) >= *level)),
            Payoff::CappedCount { cap, coord } => f64::from(pick(coord).min(*cap)),
            Payoff::CappedIncrement { cap, from, to } => {
                f64::from(counts[*to].saturating_sub(counts[*from]).min(*cap))
            }
            Payoff::NoIncrement { from, to } => f64::from(u8::from(counts[*to] == counts[*from])),
            Payoff::Table { n_max, values } => {
                let side = *n_max as usize + 1;
                let idx = counts
                    .iter()
                    .fold(0usize, |acc, &c| acc * side + c.min(*n_max) as usize);
                values[idx]
            }
            Payoff::Affine {
                scale,
                offset,
                inner,
            } => scale * inner.eval(counts) + offset,
            Payoff::Sum { terms } => terms.iter().map(|t| t.eval(counts)).sum(),
            Payoff::Project { coords, inner } => {
                let sub: Vec<u32> = coords.iter().map(|&c| counts[c]).collect();
                inner.eval(&sub)
            }
        }
    }

    /// A structural bound on `|payoff|`.
    pub fn abs_bound(&self) -> f64 {
        match self {
            Payoff::Constant { value } => value.abs(),
            Payoff::Indicator { .. } | Payoff::Threshold { .. } | Payoff::NoIncrement { .. } => 1.0,
            Payoff::CappedCount { cap, .. } | Payoff::CappedIncrement { cap, .. } => f64::from(*cap),
            Payoff::Table { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            Payoff::Affine {
                scale,
                offset,
                inner,
            } => scale.abs() * inner.abs_bound() + offset.abs(),
            Payoff::Sum { terms } => terms.iter().map(Payoff::abs_bound).sum(),
            Payoff::Project { inner, .. } => inner.abs_bound(),
        }
    }

    /// Check coordinate references and table shapes against arity `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let coord_ok = |c: &Option<usize>| match c {
            Some(c) if *c >= k => Err(Error::InvalidVariable(format!(
                "coordinate {c} out of range for {k} times"
            ))),
            _ => Ok(()),
        };
        match self {
            Payoff::Constant { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidVariable("non-finite constant".into()))
                }
            }
            Payoff::Indicator { coord, .. }
            | Payoff::Threshold { coord, .. }
            | Payoff::CappedCount { coord, .. } => coord_ok(coord),
            Payoff::CappedIncrement { from, to, .. } | Payoff::NoIncrement { from, to } => {
                coord_ok(&Some(*from))?;
                coord_ok(&Some(*to))
            }
            Payoff::Table { n_max, values } => {
                let expected = (*n_max as usize + 1)
                    .checked_pow(k as u32)
                    .ok_or_else(|| Error::InvalidVariable("table too large".into()))?;
                if values.len() != expected {
                    return Err(Error::InvalidVariable(format!(
                        "table has {} entries, expected {expected} = ({}+1)^{k}",
                        values.len(),
                        n_max
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidVariable("non-finite table entry".into()));
                }
                Ok(())
            }
            Payoff::Affine {
                scale,
                offset,
                inner,
            } => {
                if !scale.is_finite() || !offset.is_finite() {
                    return Err(Error::InvalidVariable("non-finite affine map".into()));
                }
                inner.validate(k)
            }
            Payoff::Sum { terms } => terms.iter().try_for_each(|t| t.validate(k)),
            Payoff::Project { coords, inner } => {
                for &c in coords {
                    coord_ok(&Some(c))?;
                }
                if coords.is_empty() {
                    return Err(Error::InvalidVariable("projection onto no coordinates".into()));
                }
                inner.validate(coords.len())
            }
        }
    }
}

/// `g(N_{t_1}, …, N_{t_k})` with a declared bound `|g| <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VariableRepr", into = "VariableRepr")]
pub struct FinitaryVariable {
    times: Vec<f64>,
    payoff: Payoff,
    bound: f64,
}

#[derive(Serialize, Deserialize)]
struct VariableRepr {
    times: Vec<f64>,
    payoff: Payoff,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bound: Option<f64>,
}

impl TryFrom<VariableRepr> for FinitaryVariable {
    type Error = Error;
    fn try_from(r: VariableRepr) -> Result<Self> {
        match r.bound {
            Some(b) => FinitaryVariable::new(r.times, r.payoff, b),
            None => FinitaryVariable::with_structural_bound(r.times, r.payoff),
        }
    }
}

impl From<FinitaryVariable> for VariableRepr {
    fn from(v: FinitaryVariable) -> Self {
        VariableRepr {
            times: v.times,
            payoff: v.payoff,
            bound: Some(v.bound),
        }
    }
}

/// Per-coordinate extent of the lattice used to spot-check declared bounds.
const SPOT_CHECK_SIDE: u32 = 12;

impl FinitaryVariable {
    pub fn new(times: Vec<f64>, payoff: Payoff, bound: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidVariable("need at least one time".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &times {
            if !t.is_finite() || t < 0.0 || t <= prev {
                return Err(Error::InvalidVariable(format!(
                    "times must be finite, nonnegative and strictly increasing: {times:?}"
                )));
            }
            prev = t;
        }
        if !bound.is_finite() || bound < 0.0 {
            return Err(Error::InvalidVariable(format!("invalid bound {bound}")));
        }
        payoff.validate(times.len())?;
        let var = FinitaryVariable {
            times,
            payoff,
            bound,
        };
        var.spot_check_bound()?;
        Ok(var)
    }

    /// Declare the structural bound of `payoff` as the bound.
    pub fn with_structural_bound(times: Vec<f64>, payoff: Payoff) -> Result<Self> {
        let b = payoff.abs_bound();
        FinitaryVariable::new(times, payoff, b)
    }

    fn spot_check_bound(&self) -> Result<()> {
        let mut bad = None;
        for_each_monotone_tuple(self.arity(), 0, SPOT_CHECK_SIDE, &mut |counts| {
            let v = self.payoff.eval(counts);
            if bad.is_none() && (!v.is_finite() || v.abs() > self.bound * (1.0 + 1e-12)) {
                bad = Some((counts.to_vec(), v));
            }
        });
        match bad {
            Some((c, v)) => Err(Error::InvalidVariable(format!(
                "payoff {v} at {c:?} exceeds declared bound {}",
                self.bound
            ))),
            None => Ok(()),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn payoff(&self) -> &Payoff {
        &self.payoff
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn arity(&self) -> usize {
        self.times.len()
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn eval_counts(&self, counts: &[u32]) -> f64 {
        self.payoff.eval(counts)
    }

    /// `-f`, with the same bound.
    pub fn negated(&self) -> FinitaryVariable {
        FinitaryVariable {
            times: self.times.clone(),
            payoff: self.payoff.negated(),
            bound: self.bound,
        }
    }

    /// `f(ω) = g(ω(t_1), …, ω(t_k))`.
    pub fn eval(&self, path: &CountingPath) -> Result<f64> {
        let counts = self
            .times
            .iter()
            .map(|&t| path.eval(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.payoff.eval(&counts))
    }
}

/// Visit every nondecreasing tuple of length `k` with entries in `[lo, hi]`.
pub(crate) fn for_each_monotone_tuple(k: usize, lo: u32, hi: u32, f: &mut dyn FnMut(&[u32])) {
    fn rec(buf: &mut Vec<u32>, k: usize, lo: u32, hi: u32, f: &mut dyn FnMut(&[u32])) {
        if buf.len() == k {
            f(buf);
            return;
        }
        for v in lo..=hi {
            buf.push(v);
            rec(buf, k, v, hi, f);
            buf.pop();
        }
    }
    let mut buf = Vec::with_capacity(k);
    rec(&mut buf, k, lo, hi, f);
}
