//! Simulation core for machine-learning markets in which users choose among
//! competing linear learners.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. It provides:
//!
//! * [`model`]: populations, labels, parameters and the market instance.
//! * [`losses`]: squared and softmax cross-entropy losses with analytic gradients.
//! * [`market`]: the user selection rule and partition-mass estimates.
//! * [`probing`]: offline pseudo-label collection with median aggregation.
//! * [`dynamics`]: streaming multi-learner SGD, with and without probing.
//! * [`analytics`]: risk, potentials, stationarity residuals, the closed-form
//!   one-dimensional oracle and the probing risk-bound calculators.
//! * [`datagen`]: synthetic instances, dataset assembly and k-means preferences.
//!
//! File formats, configuration and the command line live in the `mlmarket`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analytics;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod losses;
pub mod market;
pub mod math;
pub mod model;
pub mod probing;

pub use error::{Error, Result};
