//! Command-line front end for the graph OOD benchmark: suite configuration,
//! the cached cell runner and report rendering.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{SuiteConfig, OUTPUT_ENV};
pub use report::{render_report, ReportError};
pub use runner::{run_suite, RunError, RunOptions, RunSummary};
