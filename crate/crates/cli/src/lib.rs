//! Batch pipeline for maximum consensus localization: configuration,
//! per-epoch reports, and the work behind each `maxcon` verb.

pub mod batch;
pub mod config;
pub mod report;

pub use batch::{evaluate_epoch, generate, icp_batch, run_batch, BatchError, BatchOutcome};
pub use config::{ConfigError, Mode, RunConfig};
pub use report::{aggregate_csv, EpochReport, CSV_HEADER};
