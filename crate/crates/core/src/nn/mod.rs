//! Minimal CPU convolutional-network engine with explicit backward passes.
//!
//! Activations use a channel-major `[channels, batch, height, width]` layout so
//! that every convolution over a whole batch is a single GEMM and per-channel
//! reductions (batch norm, bias) read contiguous memory. All kernels are
//! deterministic: reductions run in a fixed order regardless of thread count.

mod blocks;
mod checkpoint;
mod layers;
mod optim;
mod params;
mod tensor;

pub use blocks::{ConvBn, ConvBnCache};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use layers::{BatchNorm2d, BnCache, Conv2d, GlobalAvgPool, Linear, MaxPool2d, PoolCache};
pub use optim::Adam;
pub use params::{Grads, Param, ParamId, ParamStore};
pub use tensor::Tensor;
