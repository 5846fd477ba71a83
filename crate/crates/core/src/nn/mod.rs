//! Minimal dense-tensor network engine: layers with exact backward passes,
//! softmax/cross-entropy, Adam, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gemm;
mod layers;
pub mod loss;
mod network;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use layers::{softmax, Cache, Layer, LayerSpec, Mode, BN_EPS, BN_MOMENTUM};
pub use loss::{cross_entropy, one_hot, softmax_cross_entropy};
pub use network::{Gradients, Network, NetworkSpec};
pub use tensor::Tensor;
