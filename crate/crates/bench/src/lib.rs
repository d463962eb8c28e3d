//! Experiment drivers, data loading and CSV plumbing for the `hesscale`
//! command-line tool.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod records;

pub use config::{Config, Resolved};
pub use error::{BenchError, Result};
pub use records::TrialRecord;
