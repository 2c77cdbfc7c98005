//! Apply the upper and lower transition semigroups to a lattice function and
//! compare with the precise Poisson semigroup at the interval's endpoints.

use imprecise_poisson::semigroup::{precise_semigroup_apply, semigroup_apply};
use imprecise_poisson::{LatticeFunction, Mode, RateInterval, SemigroupConfig};

fn main() -> imprecise_poisson::Result<()> {
    let rates = RateInterval::new(1.0, 2.0)?;
    let cfg = SemigroupConfig::with_tol(1e-6);
    // Payoff rewards an even count.
    let g = LatticeFunction::from_fn(30, |n| if n % 2 == 0 { 1.0 } else { 0.0 })?;
    let delta = 0.8;

    let up = semigroup_apply(&g, delta, rates, Mode::Upper, &cfg)?;
    let lo = semigroup_apply(&g, delta, rates, Mode::Lower, &cfg)?;
    let slow = precise_semigroup_apply(&g, delta, rates.lower())?;
    let fast = precise_semigroup_apply(&g, delta, rates.upper())?;

    println!("{} Euler steps, error bound {:.2e}", up.steps, up.error_bound);
    println!("state  lower      rate=1     rate=2     upper");
    for n in 0..6 {
        println!(
            "{n:>5}  {:.7}  {:.7}  {:.7}  {:.7}",
            lo.function.at(n),
            slow.function.at(n),
            fast.function.at(n),
            up.function.at(n)
        );
    }
    Ok(())
}
