//! Conditional upper and lower expectations.
//!
//! Finitary variables are evaluated by backward induction over their time
//! points: each layer replaces the last free coordinate by the sublinear
//! semigroup applied to the payoff as a function of that coordinate, started
//! from the previous count. Closed forms for increments, renewal delays and
//! no-jump probabilities are exposed directly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::RateInterval;
use crate::random_objects::FinitaryVariable;
use crate::semigroup::{semigroup_apply, truncation_depth, LatticeFunction, Mode, SemigroupConfig};

/// Observed `(time, count)` pairs at the leading time points of a variable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, u32)>", into = "Vec<(f64, u32)>")]
pub struct ConditioningPrefix {
    observed: Vec<(f64, u32)>,
}

impl TryFrom<Vec<(f64, u32)>> for ConditioningPrefix {
    type Error = Error;
    fn try_from(observed: Vec<(f64, u32)>) -> Result<Self> {
        ConditioningPrefix::new(observed)
    }
}

impl From<ConditioningPrefix> for Vec<(f64, u32)> {
    fn from(p: ConditioningPrefix) -> Self {
        p.observed
    }
}

impl ConditioningPrefix {
    pub fn new(observed: Vec<(f64, u32)>) -> Result<Self> {
        for w in observed.windows(2) {
            if w[1].0 <= w[0].0 || w[1].0.is_nan() || w[1].1 < w[0].1 {
                return Err(Error::Precondition(format!(
                    "prefix needs strictly increasing times and nondecreasing counts: {observed:?}"
                )));
            }
        }
        if let Some(&(t, n)) = observed.first() {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Precondition(format!("invalid prefix time {t}")));
            }
            if t == 0.0 && n != 0 {
                return Err(Error::Precondition("a path starts at 0, so the count at time 0 must be 0".into()));
            }
        }
        Ok(ConditioningPrefix { observed })
    }

    pub fn unconditional() -> Self {
        ConditioningPrefix::default()
    }

    pub fn observed(&self) -> &[(f64, u32)] {
        &self.observed
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    fn check_against(&self, var: &FinitaryVariable) -> Result<()> {
        if self.len() > var.arity() {
            return Err(Error::Precondition(format!(
                "prefix has {} observations but the variable has {} times",
                self.len(),
                var.arity()
            )));
        }
        for (i, (&(t, _), &vt)) in self.observed.iter().zip(var.times()).enumerate() {
            if t != vt {
                return Err(Error::Precondition(format!(
                    "prefix time {t} at position {i} does not match variable time {vt}"
                )));
            }
        }
        Ok(())
    }
}

/// A value with its accumulated numerical error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub value: f64,
    pub error_bound: f64,
    pub mode: Mode,
}

/// Conditional upper expectation of a finitary variable given its observed
/// leading counts.
pub fn upper_expectation_finitary(
    var: &FinitaryVariable,
    rates: RateInterval,
    prefix: &ConditioningPrefix,
    cfg: &SemigroupConfig,
) -> Result<ExpectationResult> {
    prefix.check_against(var)?;
    cfg.validate()?;
    let (value, error_bound) = backward_induction(var, rates, prefix, cfg)?;
    Ok(ExpectationResult {
        value,
        error_bound,
        mode: Mode::Upper,
    })
}

/// `-Ē[-f]`.
pub fn lower_expectation_finitary(
    var: &FinitaryVariable,
    rates: RateInterval,
    prefix: &ConditioningPrefix,
    cfg: &SemigroupConfig,
) -> Result<ExpectationResult> {
    let up = upper_expectation_finitary(&var.negated(), rates, prefix, cfg)?;
    Ok(ExpectationResult {
        value: -up.value,
        error_bound: up.error_bound,
        mode: Mode::Lower,
    })
}

pub fn expectation_finitary(
    var: &FinitaryVariable,
    rates: RateInterval,
    prefix: &ConditioningPrefix,
    mode: Mode,
    cfg: &SemigroupConfig,
) -> Result<ExpectationResult> {
    match mode {
        Mode::Upper => upper_expectation_finitary(var, rates, prefix, cfg),
        Mode::Lower => lower_expectation_finitary(var, rates, prefix, cfg),
    }
}

struct Induction<'a> {
    var: &'a FinitaryVariable,
    rates: RateInterval,
    cfg: &'a SemigroupConfig,
    top: u32,
}

impl Induction<'_> {
    /// Value and error of the variable given the counts in `prefix`.
    fn value(&self, prefix: &[u32]) -> Result<(f64, f64)> {
        let j = prefix.len();
        if j == self.var.arity() {
            return Ok((self.var.eval_counts(prefix), 0.0));
        }
        let times = self.var.times();
        let (from_time, from) = match j {
            0 => (0.0, 0),
            _ => (times[j - 1], prefix[j - 1]),
        };
        let delta = times[j] - from_time;
        let children: Vec<(f64, f64)> = (from..=self.top.max(from))
            .into_par_iter()
            .map(|n| {
                let mut next = prefix.to_vec();
                next.push(n);
                self.value(&next)
            })
            .collect::<Result<_>>()?;
        let child_err = children.iter().fold(0.0f64, |m, c| m.max(c.1));
        let u = LatticeFunction::new(children.into_iter().map(|c| c.0).collect())?;
        let s = semigroup_apply(&u, delta, self.rates, Mode::Upper, self.cfg)?;
        Ok((s.function.at(0), child_err + s.error_bound))
    }
}

fn backward_induction(
    var: &FinitaryVariable,
    rates: RateInterval,
    prefix: &ConditioningPrefix,
    cfg: &SemigroupConfig,
) -> Result<(f64, f64)> {
    let counts: Vec<u32> = prefix.observed().iter().map(|&(_, n)| n).collect();
    if counts.len() == var.arity() {
        return Ok((var.eval_counts(&counts), 0.0));
    }
    let (start_time, start) = prefix.observed().last().copied().unwrap_or((0.0, 0));
    let mass = rates.upper() * (var.last_time() - start_time);
    // Payoffs are read with counts clamped at `top`; they differ from the true
    // payoff only when the remaining increment reaches `depth + 1`.
    let (depth, truncation) = truncation_depth(mass, 2.0 * var.bound(), cfg.tol, cfg)?;
    let top = start
        .checked_add(depth)
        .ok_or_else(|| Error::LatticeBudget("lattice top overflows u32".into()))?;
    let ind = Induction { var, rates, cfg, top };
    let (value, err) = ind.value(&counts)?;
    Ok((value, err + truncation))
}

/// `(λ̲ (t - s), λ̄ (t - s))`.
pub fn expected_increment_bounds(s: f64, t: f64, rates: RateInterval) -> Result<(f64, f64)> {
    if !s.is_finite() || !t.is_finite() || s > t {
        return Err(Error::Precondition(format!("need finite s <= t, got s={s}, t={t}")));
    }
    let d = t - s;
    Ok((rates.lower() * d, rates.upper() * d))
}

/// `(1/λ̄, 1/λ̲)`, with `1/0 = +∞`.
pub fn renewal_time_bounds(rates: RateInterval) -> (f64, f64) {
    let inv = |x: f64| if x == 0.0 { f64::INFINITY } else { 1.0 / x };
    (inv(rates.upper()), inv(rates.lower()))
}

/// Upper probability of no jump in a window of length `delta`: `e^{-Δ λ̲}`.
pub fn no_jump_upper_prob(delta: f64, rates: RateInterval) -> Result<f64> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!("duration must be finite and nonnegative, got {delta}")));
    }
    Ok((-delta * rates.lower()).exp())
}

/// `min(1, λ̄ Δ / m)`, a bound on the upper probability of at least `m` jumps.
pub fn jump_count_tail_bound(delta: f64, m: u32, rates: RateInterval) -> Result<f64> {
    if m == 0 {
        return Err(Error::Precondition("jump count threshold must be at least 1".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!("duration must be finite and nonnegative, got {delta}")));
    }
    Ok((rates.upper() * delta / f64::from(m)).min(1.0))
}

/// `Ē[g(n + N_Δ)]` from state `n`, i.e. `(Ŝ_Δ g)(n)` (or its lower twin).
pub fn conditional_markov(
    g: &LatticeFunction,
    state: u32,
    delta: f64,
    rates: RateInterval,
    mode: Mode,
    cfg: &SemigroupConfig,
) -> Result<ExpectationResult> {
    if state > g.n_max() {
        return Err(Error::Precondition(format!(
            "state {state} beyond lattice top {}",
            g.n_max()
        )));
    }
    let s = semigroup_apply(g, delta, rates, mode, cfg)?;
    Ok(ExpectationResult {
        value: s.function.at(state),
        error_bound: s.error_bound,
        mode,
    })
}
