//! Modular training for small bias-free networks.
//!
//! - [`net`] forward/backward engine, Adam, checkpoints
//! - [`data`] MNIST IDX / CIFAR-10 binary loaders and synthetic blobs
//! - [`bsgc`] bipartite spectral clustering of one linear layer
//! - [`modularity`] enmeshment measure and its differentiable loss
//! - [`pipeline`] warmup → cluster → regularized training
//! - [`evaluation`] cluster ablation accuracy and effective circuit size
//! - [`report`] CSV and image emitters

pub mod bsgc;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod modularity;
pub mod net;
pub mod pipeline;
pub mod report;
pub mod tensor;

pub use config::TrainConfig;
pub use error::{Error, Result};
pub use tensor::Tensor;
