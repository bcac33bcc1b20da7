//! Reproducible experiment harness behind the command-line tool.
//!
//! Every trial draws from its own `ChaCha8Rng` seeded by [`trial_seed`],
//! and results are collected in (value, trial) order, so output does not
//! depend on the worker count.

mod config;
mod runner;
mod selftest;

pub use config::{trial_seed, ExperimentConfig, ExperimentKind, KEYS};
pub use runner::{
    fmt_num, loglog_slope, quantile, register_files, run_diagnostics, run_register, run_scaling, run_sweep, with_threads,
    DiagnosticsOutput, DiagnosticsRow, SummaryRecord, SweepOutput, TrialRecord, DATA_HEADER,
};
pub use selftest::{run_selftest, SelftestOptions, SelftestReport, SelftestRow};
