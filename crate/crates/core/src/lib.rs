//! Deep bilinear blind image quality assessment workbench.
//!
//! Modules, bottom-up:
//! - [`forge`]: synthesizes the 39-class distorted corpus from pristine
//!   sources.
//! - [`nn`]: dense tensors, layers with exact backward passes, Adam and
//!   checkpoints; generic over the element type.
//! - [`bilinear`]: bilinear pooling with signed square-root and L2
//!   normalization, forward and backward.
//! - [`model`]: the distortion-classification stream, the auxiliary stream
//!   and the two-stream bilinear quality model.
//! - [`eval`]: SRCC/PLCC with logistic mapping, split protocols, D/L/P
//!   tests and gMAD corpus search.

pub mod bilinear;
pub mod error;
pub mod eval;
pub mod forge;
mod fsutil;
pub mod gradcheck;
pub mod hash;
pub mod image;
pub mod model;
pub mod nn;
mod scalar;
pub mod toy;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use scalar::Scalar;

/// Training precision.
pub type Tensor32 = nn::Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = nn::Tensor<f64>;
pub type Network32 = nn::Network<f32>;
pub type Network64 = nn::Network<f64>;
pub type DbCnn32 = model::DbCnnModel<f32>;
pub type DbCnn64 = model::DbCnnModel<f64>;
