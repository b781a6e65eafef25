//! Procedurally generated travel-planning tasks for evaluating cost-aware
//! tool-use agents.
//!
//! The crate synthesizes task instances (tool libraries with seeded costs and
//! templated queries), runs single-threaded sessions against them, injects
//! blocking events, computes exact and greedy reference trajectories, and
//! scores agent trajectories.

pub mod blocking;
pub mod cost;
pub mod domain;
pub mod engine;
pub mod metrics;
pub mod oracle;
pub mod querygen;
pub mod rng;
pub mod toolgen;

pub use cost::Cost;
pub use domain::{
    BlockType, DataKind, DataTypeInstance, EnvConfig, Redundancy, TaskName, TaskSpec,
    ToolCallRecord, ToolKind, ToolLibrary, ToolSpec, Trajectory, Validity,
};
pub use rng::SeededRng;
