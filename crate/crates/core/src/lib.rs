//! Discrete-event simulation of block propagation over a random peer overlay,
//! comparing legacy inventory relay with compact block relay.
//!
//! Simulated time is integer milliseconds. Numeric models are generic over
//! the float type; the aliases below fix them to `f64`.

// Validation negates float comparisons on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod metrics;
pub mod mining;
pub mod netmodel;
pub mod protocol;
pub mod scenario;
pub mod sim;
pub mod stats;
pub mod topology;

pub use engine::{Millis, Scheduler, StopCondition};
pub use error::{Error, Result};
pub use metrics::RunReport;
pub use netmodel::Internet;
pub use scenario::{load_scenario, run_scenario, Report, ScenarioConfig, SweepSpec};
pub use sim::Simulation;

pub type NetParams = netmodel::NetParams<f64>;
pub type FailureSizeModel = protocol::FailureSizeModel<f64>;
pub type HashPowerProfile = mining::HashPowerProfile<f64>;
