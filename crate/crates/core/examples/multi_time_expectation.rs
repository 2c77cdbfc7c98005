//! Upper and lower expectations of variables that depend on the count at
//! several times, with and without conditioning on observed counts.

use imprecise_poisson::expectation::{expectation_finitary, ConditioningPrefix};
use imprecise_poisson::{FinitaryVariable, Mode, Payoff, RateInterval, SemigroupConfig};

fn main() -> imprecise_poisson::Result<()> {
    let rates = RateInterval::new(1.0, 3.0)?;
    let cfg = SemigroupConfig::with_tol(1e-4);

    // Jumps between t=0.5 and t=1.5, capped at two.
    let capped = FinitaryVariable::with_structural_bound(
        vec![0.5, 1.5],
        Payoff::CappedIncrement { cap: 2, from: 0, to: 1 },
    )?;
    // A quiet stretch, penalised if the count was already high.
    let pattern = FinitaryVariable::with_structural_bound(
        vec![1.0, 2.0],
        Payoff::Sum {
            terms: vec![
                Payoff::NoIncrement { from: 0, to: 1 },
                Payoff::affine(-0.5, 0.0, Payoff::Threshold { level: 2, coord: Some(0) }),
            ],
        },
    )?;

    for (name, var) in [("capped increment", &capped), ("pattern", &pattern)] {
        let none = ConditioningPrefix::unconditional();
        let hi = expectation_finitary(var, rates, &none, Mode::Upper, &cfg)?;
        let lo = expectation_finitary(var, rates, &none, Mode::Lower, &cfg)?;
        println!(
            "{name}: [{:.6}, {:.6}] (bounds {:.1e}, {:.1e})",
            lo.value, hi.value, lo.error_bound, hi.error_bound
        );
    }

    let seen = ConditioningPrefix::new(vec![(1.0, 3)])?;
    let hi = expectation_finitary(&pattern, rates, &seen, Mode::Upper, &cfg)?;
    println!("pattern given N(1) = 3: upper {:.6}", hi.value);
    Ok(())
}
