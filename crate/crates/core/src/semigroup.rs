//! The Poisson generators and their semigroups on a truncated state lattice.
//!
//! States are `0..=n_max`; a [`LatticeFunction`] is extended to all of `ℤ≥0`
//! by holding its last value (`g(n) = g(n_max)` for `n > n_max`). Under that
//! extension the lattice computations below are exact representations of the
//! operators on bounded functions, so the only numerical error is the Euler
//! discretisation of the exponential, which every result reports.

use serde::{Deserialize, Serialize};
use libm::lgamma;

use crate::error::{Error, Result};
use crate::paths::RateInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Upper,
    Lower,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(Mode::Upper),
            "lower" => Ok(Mode::Lower),
            other => Err(Error::Parse(format!("mode must be upper or lower, got {other:?}"))),
        }
    }
}

/// A bounded function on `{0, …, n_max}` with absorbing extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatticeFunction {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for LatticeFunction {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        LatticeFunction::new(values)
    }
}

impl From<LatticeFunction> for Vec<f64> {
    fn from(g: LatticeFunction) -> Self {
        g.values
    }
}

impl LatticeFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("lattice function needs at least one state".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("lattice function values must be finite".into()));
        }
        Ok(LatticeFunction { values })
    }

    pub fn from_fn(n_max: u32, f: impl Fn(u32) -> f64) -> Result<Self> {
        LatticeFunction::new((0..=n_max).map(f).collect())
    }

    pub fn constant(value: f64, n_max: u32) -> Result<Self> {
        LatticeFunction::from_fn(n_max, |_| value)
    }

    /// `1{n = state}` on `{0, …, n_max}`; `n_max` must exceed `state`.
    pub fn indicator(state: u32, n_max: u32) -> Result<Self> {
        if n_max <= state {
            return Err(Error::Precondition(format!(
                "indicator of {state} needs n_max > {state}, got {n_max}"
            )));
        }
        LatticeFunction::from_fn(n_max, |n| f64::from(u8::from(n == state)))
    }

    pub fn n_max(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at any state, using the absorbing extension.
    pub fn at(&self, n: u32) -> f64 {
        self.values[(n as usize).min(self.values.len() - 1)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn span(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> LatticeFunction {
        LatticeFunction {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn negated(&self) -> LatticeFunction {
        self.map(|v| -v)
    }

    /// Pointwise combination; the shorter function is extended by its last value.
    pub fn zip_with(&self, other: &LatticeFunction, f: impl Fn(f64, f64) -> f64) -> LatticeFunction {
        let n = self.n_max().max(other.n_max());
        LatticeFunction {
            values: (0..=n).map(|i| f(self.at(i), other.at(i))).collect(),
        }
    }

    /// `n ↦ g(n + offset)` on `{0, …, n_max - offset}`.
    pub fn translated(&self, offset: u32) -> LatticeFunction {
        let start = (offset as usize).min(self.values.len() - 1);
        LatticeFunction {
            values: self.values[start..].to_vec(),
        }
    }
}

/// Discretisation and truncation controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemigroupConfig {
    /// Upper bound on `h * upper_rate` for each Euler factor.
    pub theta: f64,
    /// Absolute error budget per semigroup application.
    pub tol: f64,
    /// Ceiling on the number of Euler steps in one application.
    pub max_steps: u64,
    /// Constant margin added to the lattice depth.
    pub lattice_margin: u32,
    /// Standard deviations of the jump count covered by the lattice depth.
    pub lattice_sigmas: f64,
    /// Ceiling on the lattice depth.
    pub max_lattice: u32,
}

impl Default for SemigroupConfig {
    fn default() -> Self {
        SemigroupConfig {
            theta: 0.1,
            tol: 1e-6,
            max_steps: 200_000_000,
            lattice_margin: 16,
            lattice_sigmas: 6.0,
            max_lattice: 100_000,
        }
    }
}

impl SemigroupConfig {
    pub fn with_tol(tol: f64) -> Self {
        SemigroupConfig {
            tol,
            ..SemigroupConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Precondition(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::Precondition(format!("tol must be finite and nonnegative, got {}", self.tol)));
        }
        if !(self.lattice_sigmas >= 0.0 && self.lattice_sigmas.is_finite()) {
            return Err(Error::Precondition("lattice_sigmas must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// A semigroup evaluation together with its a-priori error bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemigroupResult {
    pub function: LatticeFunction,
    pub error_bound: f64,
    pub steps: u64,
}

/// `Gg(n) = λ (g(n+1) - g(n))`, zero at the top state.
pub fn precise_generator_apply(g: &LatticeFunction, lambda: f64) -> Result<LatticeFunction> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidRate(format!("rate must be finite and nonnegative, got {lambda}")));
    }
    let v = &g.values;
    let mut out: Vec<f64> = v.windows(2).map(|w| lambda * (w[1] - w[0])).collect();
    out.push(0.0);
    Ok(LatticeFunction { values: out })
}

/// The sublinear generator: `max` (upper) or `min` (lower) of `λ d` over the
/// two endpoint rates, with `d = g(n+1) - g(n)`.
pub fn generator_apply(g: &LatticeFunction, rates: RateInterval, mode: Mode) -> LatticeFunction {
    match mode {
        Mode::Upper => upper_generator(g, rates),
        Mode::Lower => upper_generator(&g.negated(), rates).negated(),
    }
}

fn upper_generator(g: &LatticeFunction, rates: RateInterval) -> LatticeFunction {
    let (lo, hi) = (rates.lower(), rates.upper());
    let v = &g.values;
    let mut out: Vec<f64> = v
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            if d >= 0.0 {
                hi * d
            } else {
                lo * d
            }
        })
        .collect();
    out.push(0.0);
    LatticeFunction { values: out }
}

/// Number of Euler steps for duration `delta`: enough to keep each factor
/// monotone (`h * upper <= theta`) and to meet `tol` under the first-order
/// bound `delta² (2 upper)² span / (2k)`.
pub fn euler_steps(delta: f64, upper: f64, span: f64, cfg: &SemigroupConfig) -> Result<u64> {
    let monotone = (delta * upper / cfg.theta).ceil();
    let accuracy = if span == 0.0 || delta * upper == 0.0 {
        0.0
    } else if cfg.tol == 0.0 {
        f64::INFINITY
    } else {
        (delta * delta * (2.0 * upper).powi(2) * span / (2.0 * cfg.tol)).ceil()
    };
    let k = monotone.max(accuracy).max(1.0);
    if k > cfg.max_steps as f64 {
        return Err(Error::StepBudget {
            required: if k.is_finite() { k as u64 } else { u64::MAX },
            ceiling: cfg.max_steps,
        });
    }
    Ok(k as u64)
}

/// A-priori error of `k` Euler steps.
pub fn euler_error_bound(delta: f64, upper: f64, span: f64, k: u64) -> f64 {
    delta * delta * (2.0 * upper).powi(2) * span / (2.0 * k as f64)
}

/// `Ŝ_Δ g ≈ (I + hḠ)^k g` with `h = Δ/k`.
///
/// Lower mode is computed as `-Ŝ_Δ(-g)` through the same code path.
pub fn semigroup_apply(
    g: &LatticeFunction,
    delta: f64,
    rates: RateInterval,
    mode: Mode,
    cfg: &SemigroupConfig,
) -> Result<SemigroupResult> {
    match mode {
        Mode::Upper => upper_semigroup(g, delta, rates, cfg),
        Mode::Lower => {
            let r = upper_semigroup(&g.negated(), delta, rates, cfg)?;
            Ok(SemigroupResult {
                function: r.function.negated(),
                ..r
            })
        }
    }
}

fn upper_semigroup(
    g: &LatticeFunction,
    delta: f64,
    rates: RateInterval,
    cfg: &SemigroupConfig,
) -> Result<SemigroupResult> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!("duration must be finite and nonnegative, got {delta}")));
    }
    cfg.validate()?;
    let span = g.span();
    let upper = rates.upper();
    if delta == 0.0 || upper == 0.0 || span == 0.0 {
        return Ok(SemigroupResult {
            function: g.clone(),
            error_bound: 0.0,
            steps: 0,
        });
    }
    let k = euler_steps(delta, upper, span, cfg)?;
    let h = delta / k as f64;
    let a = h * upper;
    let b = h * rates.lower();
    debug_assert!(a <= 1.0);
    let mut v = g.values.clone();
    let top = v.len() - 1;
    for _ in 0..k {
        for n in 0..top {
            let d = v[n + 1] - v[n];
            v[n] += if d >= 0.0 { a * d } else { b * d };
        }
    }
    Ok(SemigroupResult {
        function: LatticeFunction { values: v },
        error_bound: euler_error_bound(delta, upper, span, k),
        steps: k,
    })
}

/// One Euler factor `(I + hḠ) g`, exposed for ladder construction.
pub fn euler_factor(g: &LatticeFunction, h: f64, rates: RateInterval, mode: Mode) -> LatticeFunction {
    let gen = generator_apply(g, rates, mode);
    g.zip_with(&gen, |x, y| x + h * y)
}

/// The precise semigroup `S_Δ g(n) = Σ_z g(n+z) ψ_{λΔ}(z)`, summed exactly
/// under the absorbing extension (the tail beyond `n_max` contributes
/// `g(n_max)` times the Poisson tail mass).
pub fn precise_semigroup_apply(g: &LatticeFunction, delta: f64, lambda: f64) -> Result<SemigroupResult> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!("duration must be finite and nonnegative, got {delta}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidRate(format!("rate must be finite and nonnegative, got {lambda}")));
    }
    let mu = lambda * delta;
    if mu == 0.0 {
        return Ok(SemigroupResult {
            function: g.clone(),
            error_bound: 0.0,
            steps: 0,
        });
    }
    let v = &g.values;
    let top = v.len() - 1;
    let pmf: Vec<f64> = (0..top as u32).map(|z| poisson_pmf(mu, z)).collect();
    let out = (0..=top)
        .map(|n| {
            let reach = top - n;
            let body: f64 = (0..reach).map(|z| v[n + z] * pmf[z]).sum();
            body + v[top] * poisson_upper_tail(mu, reach as u32)
        })
        .collect();
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(SemigroupResult {
        function: LatticeFunction { values: out },
        error_bound: 8.0 * (top as f64 + 2.0) * f64::EPSILON * scale,
        steps: 0,
    })
}

/// `e^{-μ} μ^z / z!`, evaluated in log space.
pub fn poisson_pmf(mu: f64, z: u32) -> f64 {
    if mu == 0.0 {
        return if z == 0 { 1.0 } else { 0.0 };
    }
    (f64::from(z) * mu.ln() - mu - lgamma(f64::from(z) + 1.0)).exp()
}

/// `P(Z >= m)` for `Z ~ Poisson(μ)`.
pub fn poisson_upper_tail(mu: f64, m: u32) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if mu == 0.0 {
        return 0.0;
    }
    if f64::from(m) <= mu {
        let cdf: f64 = (0..m).map(|z| poisson_pmf(mu, z)).sum();
        return (1.0 - cdf).max(0.0);
    }
    // Terms decrease geometrically once z > μ.
    let mut term = poisson_pmf(mu, m);
    let mut sum = 0.0;
    let mut z = m;
    while term > 0.0 && term > sum * 1e-17 {
        sum += term;
        z += 1;
        term *= mu / f64::from(z);
    }
    sum.min(1.0)
}

/// Lattice depth (number of states above the start state) for a horizon with
/// upper jump mass `mu = upper * T`, together with the truncation bound
/// `span * P(Poisson(mu) >= depth)`.
///
/// The depth starts at `⌈μ⌉ + ⌈σ·√μ⌉ + margin` and grows until the bound fits
/// `budget`. The bound is exact for the upper probability of reaching the
/// boundary: `1{N >= depth}` is increasing, so the sublinear semigroup acts on
/// it through the upper rate alone.
pub fn truncation_depth(mu: f64, span: f64, budget: f64, cfg: &SemigroupConfig) -> Result<(u32, f64)> {
    let base = mu.ceil() + (cfg.lattice_sigmas * mu.sqrt()).ceil() + f64::from(cfg.lattice_margin);
    let mut depth = base.max(1.0).min(f64::from(u32::MAX)) as u32;
    loop {
        let bound = span * poisson_upper_tail(mu, depth);
        if bound <= budget {
            return Ok((depth, bound));
        }
        if depth >= cfg.max_lattice {
            return Err(Error::LatticeBudget(format!(
                "truncation bound {bound:e} exceeds budget {budget:e} at depth {depth} (ceiling {})",
                cfg.max_lattice
            )));
        }
        depth = depth.saturating_add((depth / 8).max(1)).min(cfg.max_lattice);
    }
}
