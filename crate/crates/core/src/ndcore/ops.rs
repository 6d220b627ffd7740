use std::str::FromStr;

use super::gemm::gemm_nn;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
    Min,
}

impl BinaryOp {
    #[inline]
    pub fn apply<T: Scalar>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            // ties keep the left operand
            BinaryOp::Max => {
                if b > a {
                    b
                } else {
                    a
                }
            }
            BinaryOp::Min => {
                if b < a {
                    b
                } else {
                    a
                }
            }
        }
    }
}

impl FromStr for BinaryOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "add" => BinaryOp::Add,
            "sub" => BinaryOp::Sub,
            "mul" => BinaryOp::Mul,
            "max" => BinaryOp::Max,
            "min" => BinaryOp::Min,
            _ => return Err(Error::InvalidArgument(format!("unknown elementwise op {s:?}"))),
        })
    }
}

pub fn elementwise<T: Scalar>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "elementwise",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| op.apply(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Product of `[m,k]` and `[k,p]` matrices.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros([m, p]);
    gemm_nn(m, k, p, a.data(), b.data(), out.data_mut());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn componentwise_examples() {
        let a = t(&[2], &[1., 2.]);
        let b = t(&[2], &[3., 4.]);
        assert_eq!(elementwise(BinaryOp::Add, &a, &b).unwrap().data(), &[4., 6.]);
        let c = t(&[2], &[1., 5.]);
        let d = t(&[2], &[4., 2.]);
        assert_eq!(elementwise(BinaryOp::Max, &c, &d).unwrap().data(), &[4., 5.]);
        assert_eq!(elementwise(BinaryOp::Min, &c, &d).unwrap().data(), &[1., 2.]);
        assert_eq!(elementwise(BinaryOp::Sub, &c, &d).unwrap().data(), &[-3., 3.]);
        let z = a.zeros_like();
        assert_eq!(elementwise(BinaryOp::Mul, &a, &z).unwrap(), z);
    }

    #[test]
    fn elementwise_shape_error_names_both() {
        let err = elementwise(BinaryOp::Add, &t(&[2], &[1., 2.]), &t(&[1, 2], &[1., 2.]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[2]") && err.contains("[1, 2]"), "{err}");
    }

    #[test]
    fn matmul_small_cases() {
        let b = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(matmul(&Tensor::identity(3), &b).unwrap(), b);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let ones = t(&[2, 1], &[1., 1.]);
        assert_eq!(matmul(&a, &ones).unwrap().data(), &[3., 7.]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn op_names_parse() {
        assert_eq!("max".parse::<BinaryOp>().unwrap(), BinaryOp::Max);
        assert!("pow".parse::<BinaryOp>().is_err());
    }
}
