//! Attention-augmented convolutional recurrent networks for cloud-image
//! sequence forecasting, the solar-power forecasters that consume their
//! output, and the training and verification machinery around both.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the crate-root
//! aliases fix the 64-bit precision used throughout the pipeline.

pub mod autodiff;
pub mod cells;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod params;
pub mod report;
pub mod scalar;
pub mod solar;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Graph, Padding, PoolMode, Var};
pub use error::{Result, TensorError};
pub use params::{Bound, Initializer, ParamId, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type ParamSet64 = ParamSet<f64>;
