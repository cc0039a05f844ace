//! Scenario files, batch execution and exporters for the `hmpcc` binary.

pub mod batch;
pub mod error;
pub mod output;
pub mod scenario;
pub mod svg;

pub use error::CliError;
pub use scenario::ScenarioFile;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "HMPCC_OUT_DIR";
