//! Graph condensation by gradient matching, with an adversarial shock absorber.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod absorber;
pub mod autodiff;
pub mod condense;
pub mod config;
pub mod coreset;
pub mod error;
pub mod eval;
pub mod export;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod pipeline;

pub use error::{Error, Result};
