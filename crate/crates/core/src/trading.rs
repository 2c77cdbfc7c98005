//! The betting game: elementary strategies, their capital processes, a
//! constructive grid superhedge and a falsifier for coherence.
//!
//! A round `k` runs from `τ_k` to `τ_{k+1}`. A one-sided round holds a long
//! stake `h̄ >= 0`, paid `ΔN - λ̄ Δt`, and a short stake `h̲ >= 0`, paid
//! `λ̲ Δt - ΔN`. A two-sided round holds a single real stake `h`, paid
//! `ΔN - λ Δt`, and needs a degenerate rate interval.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{CountingPath, RateInterval};
use crate::random_objects::{grid_time, FinitaryVariable, StopTime, StoppingTime};
use crate::semigroup::{euler_factor, LatticeFunction, Mode};

/// Which component of a round's stakes an [`StakeRule::ActiveSum`] collects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Long,
    Short,
    /// `long - short`, the two-sided stake.
    Net,
}

/// A stake as a functional of the path up to the round's start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StakeRule {
    Constant { value: f64 },
    /// Indexed by the count at the round's start; larger counts read the
    /// last entry.
    StateTable { values: Vec<f64> },
    /// Sum over `parts` of the stake each part holds at the round's start.
    ActiveSum { side: Side, parts: Vec<Strategy> },
}

impl StakeRule {
    fn eval(&self, path: &CountingPath, at: f64) -> Result<f64> {
        match self {
            StakeRule::Constant { value } => Ok(*value),
            StakeRule::StateTable { values } => {
                let n = path.count_le(at) as usize;
                Ok(values[n.min(values.len() - 1)])
            }
            StakeRule::ActiveSum { side, parts } => {
                let mut sum = 0.0;
                for part in parts {
                    let bounds = part.boundaries(path)?;
                    if let Some(k) = active_round(&bounds, at) {
                        let start = bounds[k].finite().expect("active round has started");
                        let (long, short) = part.stakes(k, path, start)?;
                        sum += match side {
                            Side::Long => long,
                            Side::Short => short,
                            Side::Net => long - short,
                        };
                    }
                }
                Ok(sum)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            StakeRule::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidStrategy(format!("non-finite stake {value}")))
            }
            StakeRule::StateTable { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidStrategy("stake table must be nonempty and finite".into()));
                }
                Ok(())
            }
            StakeRule::ActiveSum { parts, .. } => parts.iter().try_for_each(Strategy::validate),
            StakeRule::Constant { .. } => Ok(()),
        }
    }

    /// True when the rule is zero on every path.
    pub fn is_zero(&self) -> bool {
        match self {
            StakeRule::Constant { value } => *value == 0.0,
            StakeRule::StateTable { values } => values.iter().all(|&v| v == 0.0),
            StakeRule::ActiveSum { parts, .. } => parts.iter().all(Strategy::is_idle),
        }
    }
}

/// The stakes of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sides", rename_all = "snake_case")]
pub enum RoundStakes {
    Two { stake: StakeRule },
    One { long: StakeRule, short: StakeRule },
}

/// An elementary strategy: `n + 1` stopping times and `n` rounds of stakes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub times: Vec<StoppingTime>,
    pub rounds: Vec<RoundStakes>,
    pub rates: RateInterval,
    /// Declared bound on every stake's magnitude.
    pub stake_bound: f64,
}

/// Index of the round with `τ_k <= at < τ_{k+1}`.
fn active_round(bounds: &[StopTime], at: f64) -> Option<usize> {
    (0..bounds.len().saturating_sub(1)).find(|&k| {
        bounds[k] <= StopTime::Finite(at) && StopTime::Finite(at) < bounds[k + 1]
    })
}

impl Strategy {
    pub fn new(
        times: Vec<StoppingTime>,
        rounds: Vec<RoundStakes>,
        rates: RateInterval,
        stake_bound: f64,
    ) -> Result<Self> {
        let s = Strategy {
            times,
            rounds,
            rates,
            stake_bound,
        };
        s.validate()?;
        Ok(s)
    }

    /// No rounds at all.
    pub fn idle(rates: RateInterval) -> Self {
        Strategy {
            times: Vec::new(),
            rounds: Vec::new(),
            rates,
            stake_bound: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.rounds.len() {
            0 => self.times.len() <= 1,
            n => self.times.len() == n + 1,
        };
        if !ok {
            return Err(Error::InvalidStrategy(format!(
                "{} rounds need {} stopping times, got {}",
                self.rounds.len(),
                self.rounds.len() + 1,
                self.times.len()
            )));
        }
        if !(self.stake_bound >= 0.0 && self.stake_bound.is_finite()) {
            return Err(Error::InvalidStrategy(format!("invalid stake bound {}", self.stake_bound)));
        }
        self.times.iter().try_for_each(StoppingTime::validate)?;
        let two = self.rounds.iter().filter(|r| matches!(r, RoundStakes::Two { .. })).count();
        if two != 0 && two != self.rounds.len() {
            return Err(Error::InvalidStrategy("rounds mix one- and two-sided stakes".into()));
        }
        if two != 0 && !self.rates.is_degenerate() {
            return Err(Error::InvalidStrategy(
                "two-sided stakes need a degenerate rate interval".into(),
            ));
        }
        for r in &self.rounds {
            match r {
                RoundStakes::Two { stake } => stake.validate()?,
                RoundStakes::One { long, short } => {
                    long.validate()?;
                    short.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn is_two_sided(&self) -> bool {
        matches!(self.rounds.first(), Some(RoundStakes::Two { .. }))
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    /// True when every stake is zero on every path.
    pub fn is_idle(&self) -> bool {
        self.rounds.iter().all(|r| match r {
            RoundStakes::Two { stake } => stake.is_zero(),
            RoundStakes::One { long, short } => long.is_zero() && short.is_zero(),
        })
    }

    /// The round boundaries on `path`, checked to be nondecreasing.
    pub fn boundaries(&self, path: &CountingPath) -> Result<Vec<StopTime>> {
        let b: Vec<StopTime> = self.times.iter().map(|s| s.eval(path)).collect();
        if let Some(w) = b.windows(2).find(|w| w[0] > w[1]) {
            return Err(Error::InvalidStrategy(format!(
                "stopping times are not nondecreasing on this path: {:?} > {:?}",
                w[0], w[1]
            )));
        }
        Ok(b)
    }

    /// `(long, short)` stakes of round `k` started at `start`. A two-sided
    /// stake `h` is returned as `(h⁺, h⁻)`.
    fn stakes(&self, k: usize, path: &CountingPath, start: f64) -> Result<(f64, f64)> {
        let bound_check = |stake: f64| {
            if stake.abs() > self.stake_bound * (1.0 + 1e-12) + 1e-300 {
                Err(Error::StakeBound {
                    stake,
                    bound: self.stake_bound,
                    round: k,
                })
            } else {
                Ok(stake)
            }
        };
        match &self.rounds[k] {
            RoundStakes::Two { stake } => {
                let h = bound_check(stake.eval(path, start)?)?;
                Ok((h.max(0.0), (-h).max(0.0)))
            }
            RoundStakes::One { long, short } => {
                let hl = bound_check(long.eval(path, start)?)?;
                let hs = bound_check(short.eval(path, start)?)?;
                if hl < 0.0 || hs < 0.0 {
                    return Err(Error::InvalidStrategy(format!(
                        "one-sided stakes must be nonnegative, got ({hl}, {hs}) in round {k}"
                    )));
                }
                Ok((hl, hs))
            }
        }
    }
}

/// A strategy together with its initial capital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalLedger {
    pub initial: f64,
    pub strategy: Strategy,
}

fn round_gain(long: f64, short: f64, dn: f64, dt: f64, rates: RateInterval) -> f64 {
    long * (dn - rates.upper() * dt) + short * (rates.lower() * dt - dn)
}

impl CapitalLedger {
    pub fn new(initial: f64, strategy: Strategy) -> Result<Self> {
        if !initial.is_finite() {
            return Err(Error::InvalidStrategy(format!("initial capital {initial} is not finite")));
        }
        strategy.validate()?;
        Ok(CapitalLedger { initial, strategy })
    }

    /// Capital at `t` given precomputed round boundaries, plus the sum of the
    /// magnitudes of all terms (a scale for rounding error).
    fn capital_parts(&self, path: &CountingPath, bounds: &[StopTime], t: f64) -> Result<(f64, f64)> {
        if !(0.0..=path.horizon()).contains(&t) {
            return Err(Error::OutOfHorizon {
                time: t,
                horizon: path.horizon(),
            });
        }
        let rates = self.strategy.rates;
        let mut total = self.initial;
        let mut scale = self.initial.abs();
        for k in 0..self.strategy.n_rounds() {
            let a = bounds[k].min_with(t);
            let b = bounds[k + 1].min_with(t);
            if a >= b {
                continue;
            }
            let (long, short) = self.strategy.stakes(k, path, a)?;
            let dn = f64::from(path.count_le(b) - path.count_le(a));
            let gain = round_gain(long, short, dn, b - a, rates);
            total += gain;
            scale += (long + short) * (dn + rates.upper() * (b - a));
        }
        Ok((total, scale))
    }

    /// Capital at `t` using round boundaries from [`Strategy::boundaries`].
    pub fn capital_with(&self, path: &CountingPath, bounds: &[StopTime], t: f64) -> Result<f64> {
        Ok(self.capital_parts(path, bounds, t)?.0)
    }
}

/// `𝒦_t(ω)`.
pub fn capital_process_eval(ledger: &CapitalLedger, path: &CountingPath, t: f64) -> Result<f64> {
    let bounds = ledger.strategy.boundaries(path)?;
    ledger.capital_with(path, &bounds, t)
}

/// Outcome of comparing a within-round capital change to its closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub passed: bool,
    pub change: f64,
    pub predicted: f64,
    /// `|change - predicted|` relative to the magnitude of the terms involved.
    pub residual: f64,
}

/// Relative tolerance of [`increment_identity_check`].
pub const IDENTITY_TOL: f64 = 1e-12;

/// Check `𝒦_r - 𝒦_t = h̃ (ω(r) - ω(t) - λ̲ (r - t)) - h̄ (λ̄ - λ̲)(r - t)` with
/// `h̃ = h̄ - h̲`, for `t <= r` inside one round (or inside an idle stretch
/// before the first or after the last round).
pub fn increment_identity_check(
    ledger: &CapitalLedger,
    path: &CountingPath,
    t: f64,
    r: f64,
) -> Result<IdentityCheck> {
    if t.is_nan() || r.is_nan() || t > r {
        return Err(Error::Precondition(format!("need t <= r, got t={t}, r={r}")));
    }
    let bounds = ledger.strategy.boundaries(path)?;
    let n = ledger.strategy.n_rounds();
    let within = (0..n).find(|&k| bounds[k] <= StopTime::Finite(t) && StopTime::Finite(r) <= bounds[k + 1]);
    let (long, short) = match within {
        Some(k) => ledger.strategy.stakes(k, path, bounds[k].finite().expect("round started"))?,
        None => {
            let before = bounds.first().is_none_or(|&b| StopTime::Finite(r) <= b);
            let after = bounds.last().is_none_or(|&b| b <= StopTime::Finite(t));
            if !(before || after) {
                return Err(Error::Precondition(format!(
                    "[{t}, {r}] straddles a round boundary"
                )));
            }
            (0.0, 0.0)
        }
    };
    let (kt, st) = ledger.capital_parts(path, &bounds, t)?;
    let (kr, sr) = ledger.capital_parts(path, &bounds, r)?;
    let rates = ledger.strategy.rates;
    let dn = f64::from(path.count_le(r) - path.count_le(t));
    let dt = r - t;
    let net = long - short;
    let predicted = net * (dn - rates.lower() * dt) - long * (rates.upper() - rates.lower()) * dt;
    let change = kr - kt;
    let scale = 1.0_f64.max(st).max(sr);
    let residual = (change - predicted).abs() / scale;
    Ok(IdentityCheck {
        passed: residual <= IDENTITY_TOL,
        change,
        predicted,
        residual,
    })
}

/// A ledger whose capital is the pointwise sum of the inputs' capitals.
///
/// Rounds are cut at every stopping time of either strategy (as order
/// statistics), and each merged round stakes the sum of the stakes active in
/// the components.
pub fn merge(a: &CapitalLedger, b: &CapitalLedger) -> Result<CapitalLedger> {
    let (sa, sb) = (&a.strategy, &b.strategy);
    if sa.rates != sb.rates {
        return Err(Error::InvalidStrategy("merged strategies must share the rate interval".into()));
    }
    let parts: Vec<Strategy> = [sa, sb].into_iter().filter(|s| s.n_rounds() > 0).cloned().collect();
    if parts.len() == 2 && sa.is_two_sided() != sb.is_two_sided() {
        return Err(Error::InvalidStrategy("cannot merge one- and two-sided strategies".into()));
    }
    let initial = a.initial + b.initial;
    if parts.is_empty() {
        return CapitalLedger::new(initial, Strategy::idle(sa.rates));
    }
    let all: Vec<StoppingTime> = parts.iter().flat_map(|s| s.times.iter().cloned()).collect();
    let times: Vec<StoppingTime> = (0..all.len())
        .map(|rank| StoppingTime::OrderStatistic {
            times: all.clone(),
            rank,
        })
        .collect();
    let two = parts[0].is_two_sided();
    let sum = |side| StakeRule::ActiveSum {
        side,
        parts: parts.clone(),
    };
    let rounds = (1..times.len())
        .map(|_| {
            if two {
                RoundStakes::Two { stake: sum(Side::Net) }
            } else {
                RoundStakes::One {
                    long: sum(Side::Long),
                    short: sum(Side::Short),
                }
            }
        })
        .collect();
    let bound = parts.iter().map(|s| s.stake_bound).sum::<f64>();
    CapitalLedger::new(initial, Strategy::new(times, rounds, sa.rates, bound)?)
}

/// A grid superhedge of `g(N_end)` started at `start` from count `start_state`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Superhedge {
    pub strategy: Strategy,
    pub initial_capital: f64,
    /// Extra capital covering paths with two jumps in one cell.
    pub cushion: f64,
    pub start: f64,
    pub end: f64,
    pub cells: usize,
    pub start_state: u32,
    pub grid: Vec<f64>,
    /// `ladder[k]` is the value function at grid point `k`; the last is `g`.
    pub ladder: Vec<LatticeFunction>,
}

impl Superhedge {
    /// The detector of a cell with two jumps, at which every round freezes.
    pub fn detector(&self) -> StoppingTime {
        StoppingTime::TwoJumpsInCell {
            start: self.start,
            end: self.end,
            cells: self.cells,
        }
    }

    /// Whether every grid cell of `path` holds at most one jump.
    pub fn is_good_path(&self, path: &CountingPath) -> bool {
        !matches!(self.detector().eval(path), StopTime::Finite(s) if s <= self.end)
    }

    pub fn ledger(&self) -> CapitalLedger {
        CapitalLedger {
            initial: self.initial_capital,
            strategy: self.strategy.clone(),
        }
    }
}

/// Largest ladder size (cells times lattice states) built before giving up.
const LADDER_BUDGET: usize = 50_000_000;

/// Build the grid superhedge: the value ladder `g_k = (I + Δ Ḡ)^{n+1-k} g`,
/// stakes `(g_{k+1}(x+1) - g_{k+1}(x))^±` at the round's starting count `x`,
/// rounds cut at grid points and frozen at the first cell with two jumps, and
/// initial capital `g_1(start_state) + span(g) λ̲ Δ`.
pub fn synthesize_superhedge(
    g: &LatticeFunction,
    s: f64,
    t: f64,
    n: usize,
    rates: RateInterval,
    start_state: u32,
) -> Result<Superhedge> {
    if !(s.is_finite() && t.is_finite() && 0.0 <= s && s < t) {
        return Err(Error::Precondition(format!("need 0 <= s < t, got s={s}, t={t}")));
    }
    if n == 0 {
        return Err(Error::Precondition("need at least one grid cell".into()));
    }
    let step = (t - s) / n as f64;
    if step * rates.upper() > 1.0 {
        return Err(Error::Precondition(format!(
            "grid step {step} times upper rate {} exceeds 1; refine the grid",
            rates.upper()
        )));
    }
    let states = g.n_max() as usize + 1;
    if states.saturating_mul(n + 1) > LADDER_BUDGET {
        return Err(Error::LatticeBudget(format!(
            "ladder of {} x {states} values exceeds {LADDER_BUDGET}",
            n + 1
        )));
    }
    let mut ladder = vec![g.clone()];
    for _ in 0..n {
        let next = euler_factor(ladder.last().expect("nonempty"), step, rates, Mode::Upper);
        ladder.push(next);
    }
    ladder.reverse();

    let detector = StoppingTime::TwoJumpsInCell { start: s, end: t, cells: n };
    let grid: Vec<f64> = (0..=n).map(|k| grid_time(s, t, n, k)).collect();
    let times = grid
        .iter()
        .map(|&p| StoppingTime::min(StoppingTime::constant(p), detector.clone()))
        .collect();
    let rounds = ladder[1..]
        .iter()
        .map(|next| {
            let v = next.values();
            let diff: Vec<f64> = (0..states).map(|x| next.at(x as u32 + 1) - v[x]).collect();
            RoundStakes::One {
                long: StakeRule::StateTable {
                    values: diff.iter().map(|d| d.max(0.0)).collect(),
                },
                short: StakeRule::StateTable {
                    values: diff.iter().map(|d| (-d).max(0.0)).collect(),
                },
            }
        })
        .collect();
    let span = g.span();
    let cushion = span * rates.lower() * step;
    let strategy = Strategy::new(times, rounds, rates, span)?;
    Ok(Superhedge {
        strategy,
        initial_capital: ladder[0].at(start_state) + cushion,
        cushion,
        start: s,
        end: t,
        cells: n,
        start_state,
        grid,
        ladder,
    })
}

/// Outcome of checking a superhedge on a set of paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperhedgeReport {
    pub paths: usize,
    /// Paths with at most one jump per cell.
    pub good: usize,
    pub complement_frequency: f64,
    /// Union bound on the upper probability of a cell with two jumps.
    pub complement_bound: f64,
    /// Good paths whose capital at the end falls below the payoff minus tol.
    pub violations: usize,
    /// Smallest `capital - payoff` over good paths.
    pub min_margin: f64,
    /// `2 inf g - sup g`.
    pub floor: f64,
    /// Other paths whose capital at the end falls below the floor minus tol.
    pub floor_violations: usize,
}

impl SuperhedgeReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.floor_violations == 0
    }
}

/// Evaluate the superhedge's capital at its end time on every path.
pub fn superhedge_verify(
    hedge: &Superhedge,
    var: &FinitaryVariable,
    paths: &[CountingPath],
    tol: f64,
) -> Result<SuperhedgeReport> {
    if var.arity() != 1 || var.times()[0] != hedge.end {
        return Err(Error::Precondition(format!(
            "need a single-time variable at the hedge's end {}, got times {:?}",
            hedge.end,
            var.times()
        )));
    }
    let g = hedge.ladder.last().expect("nonempty ladder");
    let floor = 2.0 * g.min() - g.max();
    let ledger = hedge.ledger();
    let outcomes: Vec<(bool, f64, f64)> = paths
        .par_iter()
        .map(|p| {
            if p.horizon() < hedge.end {
                return Err(Error::Precondition(format!(
                    "path horizon {} ends before {}",
                    p.horizon(),
                    hedge.end
                )));
            }
            if p.count_le(hedge.start) != hedge.start_state {
                return Err(Error::Precondition(format!(
                    "path count at {} differs from the hedge's start state {}",
                    hedge.start, hedge.start_state
                )));
            }
            let capital = capital_process_eval(&ledger, p, hedge.end)?;
            Ok((hedge.is_good_path(p), capital, var.eval(p)?))
        })
        .collect::<Result<_>>()?;
    let good = outcomes.iter().filter(|o| o.0).count();
    let mu = hedge.strategy.rates.upper() * (hedge.end - hedge.start) / hedge.cells as f64;
    let two_in_cell = 1.0 - (-mu).exp() * (1.0 + mu);
    Ok(SuperhedgeReport {
        paths: paths.len(),
        good,
        complement_frequency: if paths.is_empty() {
            0.0
        } else {
            (paths.len() - good) as f64 / paths.len() as f64
        },
        complement_bound: (hedge.cells as f64 * two_in_cell.max(0.0)).min(1.0),
        violations: outcomes.iter().filter(|o| o.0 && o.1 < o.2 - tol).count(),
        min_margin: outcomes
            .iter()
            .filter(|o| o.0)
            .map(|o| o.1 - o.2)
            .fold(f64::INFINITY, f64::min),
        floor,
        floor_violations: outcomes.iter().filter(|o| !o.0 && o.1 < floor - tol).count(),
    })
}

/// A continuation on which a ledger fails to beat its current capital.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Falsification {
    pub path: CountingPath,
    pub settlement_time: f64,
    pub settlement_capital: f64,
    /// `𝒦_t(ω)`.
    pub reference_capital: f64,
    pub epsilon: f64,
}

impl Falsification {
    pub fn succeeded(&self) -> bool {
        self.settlement_capital < self.reference_capital + self.epsilon
    }
}

/// Build `ϖ`, agreeing with `ω` on `[0, t]`, on which the ledger's capital at a
/// finite settlement time stays below `𝒦_t(ω) + ε`.
///
/// From each round boundary on, the continuation has no jumps when the round's
/// net stake `h̄ - h̲` is nonnegative (or `λ̲ = 0`), and otherwise jumps at
/// `δ + j/λ̲` after the boundary, with `δ` small enough that the round gains
/// less than `ε` divided by the number of rounds.
pub fn coherence_falsify(
    ledger: &CapitalLedger,
    t: f64,
    omega: &CountingPath,
    epsilon: f64,
) -> Result<Falsification> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
    }
    let reference = capital_process_eval(ledger, omega, t)?;
    let strategy = &ledger.strategy;
    if strategy.is_idle() {
        return Ok(Falsification {
            path: omega.clone(),
            settlement_time: omega.horizon(),
            settlement_capital: capital_process_eval(ledger, omega, omega.horizon())?,
            reference_capital: reference,
            epsilon,
        });
    }
    let rates = strategy.rates;
    let lower = rates.lower();
    let last_constant = strategy
        .times
        .iter()
        .filter_map(StoppingTime::max_constant)
        .fold(t, f64::max);
    let settle = last_constant + if lower > 0.0 { 1.0 / lower } else { 1.0 };
    let budget = epsilon / (2.0 * strategy.n_rounds() as f64);

    let mut path = omega.truncate(t, settle)?;
    let mut cur = t;
    for _ in 0..=2 * strategy.n_rounds() + 1 {
        let bounds = strategy.boundaries(&path)?;
        let Some(k) = (0..strategy.n_rounds()).find(|&k| bounds[k + 1] > StopTime::Finite(cur)) else {
            break;
        };
        let start = match bounds[k] {
            StopTime::Finite(s) => s,
            StopTime::BeyondHorizon => break,
        };
        if start > cur {
            // Idle until the next round opens on the jump-free continuation.
            cur = start;
            continue;
        }
        let (long, short) = strategy.stakes(k, &path, start)?;
        let net = long - short;
        if net >= 0.0 || lower == 0.0 {
            match bounds[k + 1] {
                StopTime::Finite(end) => cur = end,
                StopTime::BeyondHorizon => break,
            }
            continue;
        }
        let delta = (budget / (-net * lower)).min(1.0 / lower);
        let mut jumps = path.jump_times().to_vec();
        let mut j = 0u32;
        loop {
            let at = cur + delta + f64::from(j) / lower;
            if at > settle {
                break;
            }
            jumps.push(at);
            j += 1;
        }
        let candidate = CountingPath::new(jumps, settle)?;
        match strategy.times[k + 1].eval(&candidate) {
            StopTime::Finite(end) => {
                path = candidate.truncate(end, settle)?;
                cur = end;
            }
            StopTime::BeyondHorizon => {
                path = candidate;
                break;
            }
        }
    }
    Ok(Falsification {
        settlement_capital: capital_process_eval(ledger, &path, settle)?,
        path,
        settlement_time: settle,
        reference_capital: reference,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::{semigroup_apply, SemigroupConfig};

    fn rates(lo: f64, hi: f64) -> RateInterval {
        RateInterval::new(lo, hi).unwrap()
    }

    fn path(jumps: &[f64], horizon: f64) -> CountingPath {
        CountingPath::new(jumps.to_vec(), horizon).unwrap()
    }

    fn one_round(long: f64, short: f64, r: RateInterval) -> CapitalLedger {
        one_round_bounded(long, short, r, long.abs().max(short.abs()))
    }

    fn one_round_bounded(long: f64, short: f64, r: RateInterval, bound: f64) -> CapitalLedger {
        let s = Strategy::new(
            vec![StoppingTime::constant(0.0), StoppingTime::constant(1.0)],
            vec![RoundStakes::One {
                long: StakeRule::Constant { value: long },
                short: StakeRule::Constant { value: short },
            }],
            r,
            bound,
        )
        .unwrap();
        CapitalLedger::new(0.0, s).unwrap()
    }

    #[test]
    fn capital_examples() {
        let idle = CapitalLedger::new(1.25, Strategy::idle(rates(1.0, 2.0))).unwrap();
        let p = path(&[0.3, 0.9], 2.0);
        for t in [0.0, 0.5, 2.0] {
            assert_eq!(capital_process_eval(&idle, &p, t).unwrap(), 1.25);
        }
        let long = one_round(1.0, 0.0, rates(1.0, 2.0));
        assert_eq!(capital_process_eval(&long, &p, 1.0).unwrap(), 0.0);
        assert_eq!(capital_process_eval(&long, &p, 0.0).unwrap(), 0.0);
        let short = one_round(0.0, 1.0, rates(1.0, 2.0));
        assert_eq!(capital_process_eval(&short, &CountingPath::empty(1.0).unwrap(), 1.0).unwrap(), 1.0);
        assert!(matches!(
            capital_process_eval(&long, &p, 2.5),
            Err(Error::OutOfHorizon { .. })
        ));
    }

    #[test]
    fn stake_bounds_and_signs_are_enforced() {
        let s = Strategy::new(
            vec![StoppingTime::constant(0.0), StoppingTime::constant(1.0)],
            vec![RoundStakes::One {
                long: StakeRule::Constant { value: 3.0 },
                short: StakeRule::Constant { value: 0.0 },
            }],
            rates(1.0, 2.0),
            1.0,
        )
        .unwrap();
        let l = CapitalLedger::new(0.0, s).unwrap();
        assert!(matches!(
            capital_process_eval(&l, &path(&[], 1.0), 1.0),
            Err(Error::StakeBound { round: 0, .. })
        ));
        let neg = one_round(-1.0, 0.0, rates(1.0, 2.0));
        assert!(matches!(
            capital_process_eval(&neg, &path(&[], 1.0), 1.0),
            Err(Error::InvalidStrategy(_))
        ));
        let two = Strategy::new(
            vec![StoppingTime::constant(0.0), StoppingTime::constant(1.0)],
            vec![RoundStakes::Two {
                stake: StakeRule::Constant { value: 1.0 },
            }],
            rates(1.0, 2.0),
            1.0,
        );
        assert!(matches!(two, Err(Error::InvalidStrategy(_))));
    }

    #[test]
    fn boundaries_must_be_ordered() {
        let s = Strategy::new(
            vec![StoppingTime::constant(1.0), StoppingTime::constant(0.5)],
            vec![RoundStakes::One {
                long: StakeRule::Constant { value: 0.0 },
                short: StakeRule::Constant { value: 0.0 },
            }],
            rates(1.0, 2.0),
            0.0,
        )
        .unwrap();
        assert!(s.boundaries(&path(&[], 2.0)).is_err());
    }

    #[test]
    fn identity_examples() {
        let r = rates(1.0, 2.0);
        let long = one_round(1.0, 0.0, r);
        let p = path(&[0.3, 0.9], 2.0);
        let c = increment_identity_check(&long, &p, 0.1, 0.2).unwrap();
        assert!(c.passed);
        assert!((c.change + 0.2).abs() < 1e-15);
        let flat = one_round(0.7, 0.7, rates(1.5, 1.5));
        let c = increment_identity_check(&flat, &p, 0.2, 0.95).unwrap();
        assert!(c.passed && c.change.abs() < 1e-15);
        // Before and after the round the capital is constant.
        let c = increment_identity_check(&long, &p, 1.2, 1.9).unwrap();
        assert!(c.passed && c.change == 0.0);
        let two_rounds = Strategy::new(
            vec![StoppingTime::constant(0.0), StoppingTime::constant(0.5), StoppingTime::constant(1.0)],
            vec![
                RoundStakes::One {
                    long: StakeRule::Constant { value: 1.0 },
                    short: StakeRule::Constant { value: 0.0 },
                },
                RoundStakes::One {
                    long: StakeRule::Constant { value: 0.0 },
                    short: StakeRule::Constant { value: 1.0 },
                },
            ],
            r,
            1.0,
        )
        .unwrap();
        let l = CapitalLedger::new(0.0, two_rounds).unwrap();
        assert!(matches!(
            increment_identity_check(&l, &p, 0.4, 0.6),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn degenerate_one_sided_matches_two_sided() {
        let r = rates(1.3, 1.3);
        let times = vec![
            StoppingTime::constant(0.2),
            StoppingTime::min(
                StoppingTime::max(StoppingTime::constant(0.2), StoppingTime::hit_level(1)),
                StoppingTime::constant(1.5),
            ),
            StoppingTime::constant(1.5),
        ];
        let table = vec![0.5, -1.0, 2.0, -0.25];
        let two = Strategy::new(
            times.clone(),
            vec![
                RoundStakes::Two { stake: StakeRule::StateTable { values: table.clone() } };
                2
            ],
            r,
            2.0,
        )
        .unwrap();
        let split = |f: fn(f64) -> f64| StakeRule::StateTable {
            values: table.iter().map(|&v| f(v)).collect(),
        };
        let one = Strategy::new(
            times,
            vec![
                RoundStakes::One {
                    long: split(|v| v.max(0.0)),
                    short: split(|v| (-v).max(0.0)),
                };
                2
            ],
            r,
            2.0,
        )
        .unwrap();
        let (a, b) = (CapitalLedger::new(0.3, two).unwrap(), CapitalLedger::new(0.3, one).unwrap());
        let p = path(&[0.1, 0.4, 0.45, 1.2, 1.8], 2.0);
        for i in 0..=20 {
            let t = 0.1 * f64::from(i);
            assert_eq!(
                capital_process_eval(&a, &p, t).unwrap(),
                capital_process_eval(&b, &p, t).unwrap()
            );
        }
    }

    #[test]
    fn merge_adds_capitals() {
        let r = rates(0.5, 1.5);
        let a = CapitalLedger::new(
            1.0,
            Strategy::new(
                vec![
                    StoppingTime::constant(0.1),
                    StoppingTime::min(
                        StoppingTime::max(StoppingTime::constant(0.1), StoppingTime::hit_level(2)),
                        StoppingTime::constant(1.4),
                    ),
                    StoppingTime::constant(1.4),
                ],
                vec![
                    RoundStakes::One {
                        long: StakeRule::Constant { value: 0.5 },
                        short: StakeRule::StateTable { values: vec![0.0, 1.0] },
                    };
                    2
                ],
                r,
                1.0,
            )
            .unwrap(),
        )
        .unwrap();
        let b = CapitalLedger::new(
            -0.5,
            Strategy::new(
                vec![
                    StoppingTime::next_jump_after(StoppingTime::constant(0.0)),
                    StoppingTime::max(StoppingTime::constant(0.7), StoppingTime::hit_level(1)),
                ],
                vec![RoundStakes::One {
                    long: StakeRule::Constant { value: 0.0 },
                    short: StakeRule::Constant { value: 2.0 },
                }],
                r,
                2.0,
            )
            .unwrap(),
        )
        .unwrap();
        let m = merge(&a, &b).unwrap();
        for jumps in [vec![], vec![0.3], vec![0.05, 0.5, 0.9, 1.1], vec![0.8, 0.85, 1.9]] {
            let p = path(&jumps, 2.0);
            for i in 0..=20 {
                let t = 0.1 * f64::from(i);
                let sum = capital_process_eval(&a, &p, t).unwrap() + capital_process_eval(&b, &p, t).unwrap();
                let merged = capital_process_eval(&m, &p, t).unwrap();
                assert!((sum - merged).abs() < 1e-12, "t={t} jumps={jumps:?}: {sum} vs {merged}");
            }
        }
    }

    #[test]
    fn superhedge_of_constant_is_idle() {
        let g = LatticeFunction::constant(0.4, 10).unwrap();
        let h = synthesize_superhedge(&g, 0.0, 1.0, 16, rates(1.0, 2.0), 0).unwrap();
        assert!(h.strategy.is_idle());
        assert_eq!(h.cushion, 0.0);
        assert_eq!(h.initial_capital, 0.4);
    }

    #[test]
    fn superhedge_prices_no_jump_indicator() {
        let r = rates(1.0, 2.0);
        let g = LatticeFunction::indicator(0, 12).unwrap();
        let h = synthesize_superhedge(&g, 0.0, 1.0, 1 << 10, r, 0).unwrap();
        let exact = semigroup_apply(&g, 1.0, r, Mode::Upper, &SemigroupConfig::default()).unwrap();
        assert!((h.initial_capital - (exact.function.at(0) + h.cushion)).abs() < 1e-2);
        let empty = CountingPath::empty(1.0).unwrap();
        assert!(capital_process_eval(&h.ledger(), &empty, 1.0).unwrap() >= 1.0 - 1e-9);
    }

    #[test]
    fn superhedge_floor_off_good_set() {
        let r = rates(1.0, 2.0);
        let g = LatticeFunction::from_fn(8, |n| f64::from(n % 3) - 1.0).unwrap();
        let h = synthesize_superhedge(&g, 0.0, 1.0, 8, r, 0).unwrap();
        let var = FinitaryVariable::with_structural_bound(
            vec![1.0],
            crate::random_objects::Payoff::Table { n_max: 8, values: g.values().to_vec() },
        )
        .unwrap();
        let bad = path(&[0.3, 0.33, 0.7], 1.0);
        let fine = path(&[0.05, 0.3, 0.6, 0.99], 1.0);
        assert!(!h.is_good_path(&bad) && h.is_good_path(&fine));
        let rep = superhedge_verify(&h, &var, &[bad, fine], 1e-9).unwrap();
        assert_eq!((rep.paths, rep.good), (2, 1));
        assert!(rep.passed(), "{rep:?}");
        let empty = superhedge_verify(&h, &var, &[], 1e-9).unwrap();
        assert!(empty.passed() && empty.paths == 0);
    }

    #[test]
    fn falsifier_examples() {
        let r = rates(1.0, 2.0);
        let omega = path(&[0.2, 0.4], 0.5);
        let idle = CapitalLedger::new(3.0, Strategy::idle(r)).unwrap();
        let f = coherence_falsify(&idle, 0.5, &omega, 1e-3).unwrap();
        assert_eq!(f.path, omega);
        assert!(f.succeeded());

        let long = one_round(1.0, 0.0, r);
        let f = coherence_falsify(&long, 0.5, &omega, 1e-3).unwrap();
        assert!(f.path.agrees_until(&omega, 0.5));
        assert_eq!(f.path.total_jumps(), 2);
        assert!((f.settlement_capital - (f.reference_capital - 2.0 * 0.5)).abs() < 1e-12);

        let short = one_round(0.0, 1.0, r);
        let f = coherence_falsify(&short, 0.5, &omega, 1e-3).unwrap();
        assert!(f.path.agrees_until(&omega, 0.5));
        assert!(f.path.total_jumps() > 2);
        let gain = f.settlement_capital - f.reference_capital;
        assert!(gain < 1e-3, "gain {gain}");
    }
}
