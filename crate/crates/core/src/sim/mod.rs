//! Simulation engine: fixed-point clock, event scheduler and seeded RNG streams.

mod rng;
mod scheduler;
mod time;

pub use rng::{pareto_quantile, RngStream, StreamId};
pub use scheduler::{EventHandle, Scheduler};
pub use time::SimTime;
