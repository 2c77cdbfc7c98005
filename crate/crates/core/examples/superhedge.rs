//! Build a grid superhedge for a terminal payoff and check it on simulated
//! paths.

use imprecise_poisson::paths::sample_path;
use imprecise_poisson::trading::{superhedge_verify, synthesize_superhedge};
use imprecise_poisson::{CountingPath, FinitaryVariable, LatticeFunction, Payoff, RateInterval};

fn main() -> imprecise_poisson::Result<()> {
    let rates = RateInterval::new(1.0, 2.0)?;
    let g = LatticeFunction::from_fn(10, |n| f64::from(n.min(3)))?;
    let var = FinitaryVariable::with_structural_bound(vec![1.0], Payoff::CappedCount { cap: 3, coord: None })?;

    let switching = |_: u32, t: f64| if t < 0.5 { 1.0 } else { 2.0 };
    let paths: Vec<CountingPath> = (0..2000)
        .map(|seed| sample_path(&switching, rates, 1.0, seed))
        .collect::<Result<_, _>>()?;

    for cells in [32, 128, 512] {
        let hedge = synthesize_superhedge(&g, 0.0, 1.0, cells, rates, 0)?;
        let report = superhedge_verify(&hedge, &var, &paths, 1e-9)?;
        println!(
            "{cells:>4} cells: initial capital {:.5}, good paths {}/{}, violations {}, margin {:.2e}, bad-path bound {:.3}",
            hedge.initial_capital,
            report.good,
            report.paths,
            report.violations,
            report.min_margin,
            report.complement_bound
        );
    }
    Ok(())
}
