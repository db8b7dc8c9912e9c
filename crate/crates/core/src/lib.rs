//! Desk-scale style-based GAN toolkit.
//!
//! Trains a weight-demodulated generator against a convolutional
//! discriminator on a directory of images, samples new images, scores real
//! against generated sets with FID and KID, and aggregates human rating
//! studies into summary tables.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type to the 64-bit default.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod survey;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
