//! Convolutional predictive sparse decomposition (CPSD) feature learning,
//! multi-stage convolutional networks for pedestrian detection, and the
//! DET-curve / AUC evaluation protocol used to benchmark them.

// `!(a > b)` is used deliberately so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod checkpoint;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod predictor;
pub mod signal;
pub mod sparse_coding;
pub mod synthetic;
pub mod transforms;
pub mod unsup;

pub use error::{Error, Result};
pub use signal::{FeatureMaps, Kernel2D, Plane};
