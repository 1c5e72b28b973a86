//! Configuration, persistence and run orchestration.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod series;

pub use checkpoint::{Checkpoint, CheckpointState, RngState};
pub use commands::{execute, Command, Outcome};
pub use config::{RunConfig, Scenario, Suite};
pub use series::{SeriesRow, CSV_COLUMNS};
