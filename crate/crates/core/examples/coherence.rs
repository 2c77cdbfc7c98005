//! For any trading ledger, construct a continuation of an observed path on
//! which the ledger ends no better than its current capital plus epsilon.

use imprecise_poisson::trading::{
    capital_process_eval, coherence_falsify, CapitalLedger, RoundStakes, StakeRule, Strategy,
};
use imprecise_poisson::{CountingPath, RateInterval, StoppingTime};

fn main() -> imprecise_poisson::Result<()> {
    let rates = RateInterval::new(0.8, 1.6)?;
    let times = vec![
        StoppingTime::constant(0.0),
        StoppingTime::hit_level(2),
        StoppingTime::max(StoppingTime::hit_level(2), StoppingTime::constant(3.0)),
    ];
    let rounds = vec![
        RoundStakes::One {
            long: StakeRule::Constant { value: 1.0 },
            short: StakeRule::Constant { value: 0.0 },
        },
        RoundStakes::One {
            long: StakeRule::StateTable { values: vec![0.0, 0.0, 0.2, 0.5] },
            short: StakeRule::Constant { value: 0.7 },
        },
    ];
    let ledger = CapitalLedger::new(1.0, Strategy::new(times, rounds, rates, 1.0)?)?;
    let omega = CountingPath::new(vec![0.4, 1.1, 1.3], 2.0)?;

    for t in [0.5, 1.2, 1.9] {
        let f = coherence_falsify(&ledger, t, &omega, 1e-3)?;
        let now = capital_process_eval(&ledger, &omega, t)?;
        println!(
            "t = {t}: capital now {now:.5}, settles at {:.5} at time {:.3} after {} jumps, succeeded = {}",
            f.settlement_capital,
            f.settlement_time,
            f.path.total_jumps(),
            f.succeeded()
        );
    }
    Ok(())
}
