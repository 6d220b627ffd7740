//! Differentiable layers with explicit forward/backward passes, the
//! softmax cross-entropy head, and finite-difference gradient checking.

mod gradcheck;
mod layer;
mod loss;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, GradTarget, LayerProbe};
pub use layer::{
    Conv2d, Dropout, Flatten, Layer, LayerKind, Linear, Mode, Param, Pool, Relu, Sequential,
};
pub use loss::{relative_cross_entropy, softmax, softmax_cross_entropy, LossOutput};
