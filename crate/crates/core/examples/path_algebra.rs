//! Sample a counting path, then cut, shift and stitch it.

use imprecise_poisson::paths::sample_path;
use imprecise_poisson::random_objects::measurability_check;
use imprecise_poisson::{CountingPath, RateInterval, StoppingTime};

fn main() -> imprecise_poisson::Result<()> {
    let rates = RateInterval::new(0.5, 2.0)?;
    // A count-dependent intensity: fast while few jumps have happened.
    let policy = |n: u32, _t: f64| if n < 3 { 2.0 } else { 0.5 };
    let omega = sample_path(&policy, rates, 6.0, 2024)?;
    println!("jumps: {:?}", omega.jump_times());
    println!("N(3) = {}", omega.eval(3.0)?);

    let tail = omega.shift(3.0)?;
    println!("increments after t=3: {:?} (horizon {})", tail.jump_times(), tail.horizon());

    let quiet = CountingPath::new(vec![0.25], 1.0)?;
    let stitched = omega.stitch(3.0, &quiet)?;
    assert!(stitched.agrees_until(&omega, 3.0));
    println!("stitched: {:?}", stitched.jump_times());

    let second_jump = StoppingTime::hit_level(2);
    let capped = StoppingTime::min(second_jump.clone(), StoppingTime::constant(4.0));
    println!("second jump at {:?}, capped at {:?}", second_jump.eval(&omega), capped.eval(&omega));

    let pairs = vec![(omega.clone(), stitched.clone()), (omega, tail)];
    let report = measurability_check(&capped, &pairs);
    println!("stopping-time check: {} comparisons, passed = {}", report.checked, report.passed());
    Ok(())
}
