//! File formats, experiment runner and command-line front end for the
//! multi-learner market simulator in `mlmarket-core`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod probe_csv;
pub mod report;
pub mod runner;

pub use error::{CliError, Result};

/// Floats in every written artifact: 17 significant digits, lossless.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn hex(v: u64) -> String {
    format!("{v:#018x}")
}
