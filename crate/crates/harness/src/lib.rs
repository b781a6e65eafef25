//! Batch runner, wire protocol and persistence around `costenv-core`.

pub mod agents;
pub mod error;
pub mod instances;
pub mod prompt;
pub mod runner;
pub mod transcript;
pub mod wire;

pub use error::HarnessError;
