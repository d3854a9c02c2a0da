//! Experiment harness: configuration, seeded sweeps, metric aggregation
//! and CSV output.

// `!(x > 0.0)` style guards reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod seeds;

pub use config::{ExperimentConfig, SweepAxis};
pub use experiment::{run_experiment, run_replication, threshold_trace, HarnessError, MetricRow, RunRecord};
