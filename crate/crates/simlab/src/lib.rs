#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Experiment harness for the missing-data simulation study: config parsing,
//! parallel replicate runs and results tables.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod results;

pub use config::{ExperimentConfig, InstanceConfig};
pub use error::{LabError, Result};
pub use experiment::{build_builtin_instance, build_instance, run_experiment};
pub use report::{elbow_report, ElbowRow};
pub use results::{read_results_csv, write_results_csv, ResultRow, ResultsTable, RESULTS_HEADER};
