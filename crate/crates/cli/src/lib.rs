//! Command-line front end: configuration, WAV I/O and the restoration
//! driver.

pub mod config;
pub mod error;
pub mod run;
pub mod wav;

pub use config::PipelineConfig;
pub use error::CliError;
pub use run::{run_restoration, RunSummary};
