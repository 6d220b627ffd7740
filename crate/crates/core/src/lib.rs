//! Multi-level deep representation networks (MldrNet) for image emotion
//! classification, built on a small NCHW tensor library with hand-written
//! backward passes.
//!
//! A convolutional trunk is tapped after every stage; each tap feeds a branch
//! that produces class logits, and a fusion layer (concat, min, max or mean)
//! merges the branches before the softmax. Baseline single-path networks,
//! SGD training, dataset protocols, metrics and reports live alongside.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod error;
pub mod ndcore;
pub mod rng;
pub mod scalar;
pub mod nn;
pub mod fusion;
pub mod model;
pub mod optim;
pub mod diagnostics;
pub mod data;
pub mod metrics;
pub mod train;

pub use error::{Error, Result};
pub use fusion::FusionKind;
pub use model::{Model, ModelConfig};
pub use ndcore::Tensor;
pub use rng::Rng;
pub use scalar::Scalar;

pub type TensorF64 = ndcore::Tensor<f64>;
pub type TensorF32 = ndcore::Tensor<f32>;
pub type ModelF64 = model::Model<f64>;
pub type ModelF32 = model::Model<f32>;
pub type DatasetF64 = data::Dataset<f64>;
pub type DatasetF32 = data::Dataset<f32>;
pub type TrainerF64 = train::Trainer<f64>;
pub type TrainerF32 = train::Trainer<f32>;
