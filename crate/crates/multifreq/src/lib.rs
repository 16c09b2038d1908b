//! Configuration, file formats and the experiment runner around
//! `multifreq-core`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod record;

pub use config::ScenarioConfig;
pub use error::HarnessError;
pub use harness::{run, RunContext, Subcommand};
pub use record::RunRecord;
