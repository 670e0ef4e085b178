//! Grid/HPC co-simulation.
//!
//! Flexible compute load is placed across a small power network either by
//! a cost-ordered scheduler or through a uniform-price spot market for HPC
//! capacity, over seeded random-walk scenarios.

pub mod allocation;
pub mod dispatch;
pub mod error;
pub mod market;
pub mod metrics;
pub mod output;
pub mod pipeline;
pub mod scenario;
pub mod traces;

pub use error::{Error, Result};
pub use scenario::{load_scenario, validate_scenario, ScenarioConfig};
