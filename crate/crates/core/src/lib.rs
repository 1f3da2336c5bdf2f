//! Risk-aware policy selection under estimation uncertainty.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod cli;
pub mod conic;
pub mod drscore;
pub mod error;
pub mod estimates;
pub mod frontier;
pub mod rules;
pub mod simlab;

pub use error::{Error, Result};
