//! Bracket the engine's upper expectation between a constant-rate envelope
//! (from below) and a simulated rate policy that attains it.

use imprecise_poisson::expectation::{upper_expectation_finitary, ConditioningPrefix};
use imprecise_poisson::oracle::{constant_rate_envelope, extract_policy, policy_simulate};
use imprecise_poisson::{FinitaryVariable, Mode, Payoff, RateInterval, SemigroupConfig};

fn main() -> imprecise_poisson::Result<()> {
    let rates = RateInterval::new(0.5, 2.5)?;
    // Exactly one jump by t=1, and none between t=1 and t=1.5.
    let var = FinitaryVariable::with_structural_bound(
        vec![1.0, 1.5],
        Payoff::Table {
            n_max: 2,
            values: vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        },
    )?;
    let cfg = SemigroupConfig::with_tol(1e-6);
    let engine = upper_expectation_finitary(&var, rates, &ConditioningPrefix::unconditional(), &cfg)?;
    let grid: Vec<f64> = (0..=8).map(|i| 0.5 + 0.25 * f64::from(i)).collect();
    let envelope = constant_rate_envelope(&var, &grid, Mode::Upper)?;
    let policy = extract_policy(&var, rates, 1e-3, Mode::Upper)?;
    let sim = policy_simulate(&var, &policy, 200_000, 17)?;

    println!("best constant rate:   {envelope:.6}");
    println!("engine upper value:   {:.6} (+/- {:.1e})", engine.value, engine.error_bound);
    println!("policy simulation:    {:.6} (+/- {:.1e})", sim.mean, sim.ci_halfwidth);
    println!("policy switches rate: {}", !policy.is_constant());
    Ok(())
}
