//! Simulation substrate: event queue, node clocks and seeded randomness.
//!
//! Time is integer microseconds of true simulation time throughout.

mod clock;
mod queue;
mod rng;

pub use clock::NodeClock;
pub use queue::{EventHandle, EventQueue};
pub use rng::{mix_seed, splitmix64, SeededRng};

/// Microseconds. Signed so that clock offsets and delay differences share
/// the same type as absolute times.
pub type Micros = i64;

pub const MICROS_PER_SEC: Micros = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("causality violation: cannot schedule at {requested} us, simulation time is {now} us")]
    CausalityViolation { now: Micros, requested: Micros },
}
