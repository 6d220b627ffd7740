//! Dense tensors and the raw numeric kernels the layers are built from.
//!
//! Layout is row-major; 4-D tensors are NCHW and 2-D tensors are
//! `[batch, features]`. Convolution is cross-correlation with zero padding.
//! Every kernel iterates the batch in order and reduces in a fixed order, so
//! results are bitwise reproducible.

mod conv;
mod gemm;
mod ops;
mod pool;
mod tensor;

pub(crate) use gemm::dot;
pub use conv::{conv2d, conv2d_backward, conv_output_size, Conv2dGrads};
pub use ops::{elementwise, matmul, BinaryOp};
pub use pool::{pool2d, pool2d_backward, pool_output_size, PoolKind, PoolOutput};
pub use tensor::Tensor;
