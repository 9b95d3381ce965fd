//! Experiment runner for heterogeneous multi-output GP training: TOML run
//! configurations, multi-seed runs, run-directory output, evaluation of saved
//! states, the 1-D VO demonstrator and toy data generation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod demo;
pub mod error;
pub mod runner;
pub mod state;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
