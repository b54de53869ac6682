//! Double machine learning for macroeconomic time series.
//!
//! The crate implements reverse cross-fitting (RCF) and neighbours-left-out
//! (NLO) fold schemes, penalized linear nuisance learners, Goldilocks-zone
//! hyperparameter selection, residual-on-residual estimation with HAC
//! inference, a local-projections extension, the simulation designs used to
//! study the estimator, and a reproducible Monte Carlo engine.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity, clippy::needless_range_loop)]

pub mod dataset;
pub mod dgp;
pub mod empirical_io;
pub mod error;
pub mod estimator;
pub mod folds;
pub mod learners;
pub mod montecarlo;
pub mod numerics;
pub mod tuning;

pub use dataset::{Role, TimeSeriesDataset};
pub use error::{Error, Result};
