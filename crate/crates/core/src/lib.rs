//! Multi-class SHAP analysis: classifiers with a common margin interface,
//! exact and kernel SHAP tensors, SHAP-space subgroup discovery and
//! high-dimensional waterfall plots.

// `!(a < b)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod data;
pub mod error;
pub mod models;
pub mod rng;
pub mod shap;
pub mod subgroup;
pub mod viz;

pub use error::{Error, Result};
