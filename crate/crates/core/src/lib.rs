//! Online matching of arriving cases to capacity-limited affiliates whose
//! servers build up a backlog, with dual-learning policies, hindsight
//! benchmarks and an experiment harness.

pub mod algorithms;
pub mod error;
pub mod generalized;
pub mod grid;
pub mod instances;
pub mod model;
pub mod harness;
pub mod offline;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{ArrivalType, Decision, Instance, PathState, RunResult, SamplePath, ServiceDraw, ServiceMode};
