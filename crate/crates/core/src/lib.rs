// `!(x > 0.0)` is the NaN-rejecting form used throughout for validation,
// and the dense linear algebra reads best with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod learning;
pub mod reparam;
pub mod rng;
pub mod sampler;
pub mod zoo;

pub use error::{Error, Result};
