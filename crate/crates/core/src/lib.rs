//! Backtesting of univariate and bivariate daily risk forecasts.
//!
//! The processing chain is: prices -> returns -> LM-ARCH volatility ->
//! innovations -> probability integral transforms -> Student copula ->
//! Rosenblatt transform -> uniformity tests with Monte-Carlo calibrated
//! p-values. Everything is deterministic given a global seed; random
//! streams are derived per task so results do not depend on thread count.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod copula;
pub mod dist;
pub mod error;
pub mod market_data;
pub mod pipelines;
pub mod rng;
pub mod stat_tests;
pub mod transforms;
pub mod volatility;

mod optim;

pub use error::{Error, Result};

/// Version string embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
