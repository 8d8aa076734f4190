//! File formats, configuration, parallel execution and the experiment
//! runner on top of `roughskew-core`.

pub mod config;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod stats;
pub mod tsv;

pub use config::ExperimentConfig;
pub use error::{AppError, AppResult};
pub use exec::Parallel;
