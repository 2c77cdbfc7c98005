use thiserror::Error;

/// Errors raised across the crate.
///
/// The variants split into two families that the CLI maps onto distinct exit
/// codes: validation failures (bad input, violated preconditions) and
/// resource failures (a discretization or lattice budget that cannot be met).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time {time} outside horizon [0, {horizon}]")]
    OutOfHorizon { time: f64, horizon: f64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("lower exceeds upper: {lower} > {upper}")]
    RateOrder { lower: f64, upper: f64 },

    #[error("invalid rate: {0}")]
    InvalidRate(String),

    #[error("policy returned rate {rate} outside [{lower}, {upper}] at count {count}, time {time}")]
    InvalidPolicy {
        rate: f64,
        lower: f64,
        upper: f64,
        count: u32,
        time: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid variable: {0}")]
    InvalidVariable(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("stake {stake} exceeds declared bound {bound} in round {round}")]
    StakeBound { stake: f64, bound: f64, round: usize },

    #[error("step budget exceeded: {required} Euler steps required, ceiling is {ceiling}")]
    StepBudget { required: u64, ceiling: u64 },

    #[error("lattice budget exceeded: {0}")]
    LatticeBudget(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by exhausting a computational budget rather than by
    /// bad input.
    pub fn is_resource(&self) -> bool {
        matches!(self, Error::StepBudget { .. } | Error::LatticeBudget(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
