//! Dual graph-convolutional image captioning with a transformer decoder
//! and cross-review curriculum training.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the two
//! widths used in practice: `f32` for training and `f64` for gradient
//! verification.

pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pool;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
