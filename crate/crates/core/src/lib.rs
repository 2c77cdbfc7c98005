//! Imprecise Poisson processes as a continuous-time betting game.
//!
//! The crate provides counting paths and their algebra, stopping times and
//! finitary variables, the sublinear Poisson semigroup, an upper/lower
//! expectation engine, the trading game itself (capital processes,
//! superhedging, coherence), and independent numerical oracles.

pub mod cli;
pub mod error;
pub mod expectation;
pub mod oracle;
pub mod paths;
pub mod random_objects;
pub mod semigroup;
pub mod trading;

pub use error::{Error, Result};
pub use paths::{CountingPath, IntensityPolicy, RateInterval};
pub use random_objects::{FinitaryVariable, Payoff, StopTime, StoppingTime};
pub use semigroup::{LatticeFunction, Mode, SemigroupConfig};
