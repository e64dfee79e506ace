//! Spiked separable covariance matrices.

// `!(x > 0.0)` style guards deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dequiv;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod par;
pub mod sampling;
pub mod spectra;
pub mod spike_theory;

pub use error::{Error, Result};
