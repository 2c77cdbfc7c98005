//! Closed-form bounds that need no numerics.

use imprecise_poisson::expectation::{
    expected_increment_bounds, jump_count_tail_bound, no_jump_upper_prob, renewal_time_bounds,
};
use imprecise_poisson::RateInterval;

fn main() -> imprecise_poisson::Result<()> {
    for (lo, hi) in [(0.5, 2.0), (0.0, 1.0), (1.5, 1.5)] {
        let r = RateInterval::new(lo, hi)?;
        let (inc_lo, inc_hi) = expected_increment_bounds(0.0, 2.0, r)?;
        let (ren_lo, ren_hi) = renewal_time_bounds(r);
        println!("rates [{lo}, {hi}]");
        println!("  E[N(2) - N(0)] in [{inc_lo}, {inc_hi}]");
        println!("  mean waiting time in [{ren_lo}, {ren_hi}]");
        println!("  upper P(no jump in 1) = {:.6}", no_jump_upper_prob(1.0, r)?);
        println!("  upper P(at least 4 jumps in 1) <= {:.4}", jump_count_tail_bound(1.0, 4, r)?);
    }
    Ok(())
}
