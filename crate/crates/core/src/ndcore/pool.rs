use std::str::FromStr;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolKind::Max),
            "avg" => Ok(PoolKind::Avg),
            _ => Err(Error::InvalidArgument(format!("unknown pool kind {s:?}"))),
        }
    }
}

pub fn pool_output_size(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool kernel and stride must be positive".into()));
    }
    if kernel > input {
        return Err(Error::InvalidArgument(format!(
            "pool kernel {kernel} exceeds spatial extent {input}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

/// Pooled values plus, for max pooling, the flat input index chosen in each window.
#[derive(Clone, Debug)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Option<Vec<usize>>,
}

/// Square-window max or mean pooling over `[N,C,H,W]`.
///
/// Max-pool ties resolve to the lowest flat input index.
pub fn pool2d<T: Scalar>(
    input: &Tensor<T>,
    kind: PoolKind,
    kernel: usize,
    stride: usize,
) -> Result<PoolOutput<T>> {
    if input.rank() != 4 {
        return Err(Error::InvalidArgument(format!(
            "pool2d expects a 4-D tensor, got {:?}",
            input.shape()
        )));
    }
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let ho = pool_output_size(h, kernel, stride)?;
    let wo = pool_output_size(w, kernel, stride)?;
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = match kind {
        PoolKind::Max => Some(vec![0usize; n * c * ho * wo]),
        PoolKind::Avg => None,
    };
    let inv = T::one() / T::of_usize(kernel * kernel);
    let x = input.data();
    let o = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let oi = (plane * ho + oy) * wo + ox;
                let (y0, x0) = (oy * stride, ox * stride);
                match kind {
                    PoolKind::Max => {
                        let mut best = base + y0 * w + x0;
                        for dy in 0..kernel {
                            let row = base + (y0 + dy) * w + x0;
                            for idx in row..row + kernel {
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        o[oi] = x[best];
                        argmax.as_mut().unwrap()[oi] = best;
                    }
                    PoolKind::Avg => {
                        let mut s = T::zero();
                        for dy in 0..kernel {
                            let row = base + (y0 + dy) * w + x0;
                            for &v in &x[row..row + kernel] {
                                s = s + v;
                            }
                        }
                        o[oi] = s * inv;
                    }
                }
            }
        }
    }
    Ok(PoolOutput {
        output: out,
        argmax,
    })
}

/// Routes `grad_out` back through a [`pool2d`] call.
///
/// `argmax` must be the indices returned by the forward max pool; it is
/// ignored for average pooling.
pub fn pool2d_backward<T: Scalar>(
    input_shape: &[usize],
    kind: PoolKind,
    kernel: usize,
    stride: usize,
    argmax: Option<&[usize]>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let ho = pool_output_size(h, kernel, stride)?;
    let wo = pool_output_size(w, kernel, stride)?;
    if grad_out.shape() != [n, c, ho, wo] {
        return Err(Error::ShapeMismatch {
            op: "pool2d_backward",
            left: vec![n, c, ho, wo],
            right: grad_out.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let g = grad_out.data();
    let d = dx.data_mut();
    match kind {
        PoolKind::Max => {
            let argmax = argmax.ok_or_else(|| {
                Error::InvalidArgument("max-pool backward needs forward argmax".into())
            })?;
            for (&src, &gv) in argmax.iter().zip(g) {
                d[src] = d[src] + gv;
            }
        }
        PoolKind::Avg => {
            let inv = T::one() / T::of_usize(kernel * kernel);
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = g[(plane * ho + oy) * wo + ox] * inv;
                        for dy in 0..kernel {
                            let row = base + (oy * stride + dy) * w + ox * stride;
                            for v in &mut d[row..row + kernel] {
                                *v = *v + gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Tensor<f64> {
        Tensor::from_f64([1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap()
    }

    #[test]
    fn max_and_avg_of_two_by_two() {
        let m = pool2d(&square(), PoolKind::Max, 2, 2).unwrap();
        assert_eq!(m.output.data(), &[4.0]);
        assert_eq!(m.argmax.unwrap(), vec![3]);
        let a = pool2d(&square(), PoolKind::Avg, 2, 2).unwrap();
        assert_eq!(a.output.data(), &[2.5]);
    }

    #[test]
    fn kernel_larger_than_extent_fails() {
        assert!(pool2d(&square(), PoolKind::Max, 3, 1).is_err());
    }

    #[test]
    fn max_tie_goes_to_lowest_index() {
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[7., 7., 7., 7.]).unwrap();
        let m = pool2d(&x, PoolKind::Max, 2, 2).unwrap();
        assert_eq!(m.argmax.unwrap(), vec![0]);
    }

    #[test]
    fn avg_backward_spreads_evenly() {
        let g = Tensor::<f64>::from_f64([1, 1, 1, 1], &[2.0]).unwrap();
        let dx = pool2d_backward(&[1, 1, 2, 2], PoolKind::Avg, 2, 2, None, &g).unwrap();
        assert_eq!(dx.data(), &[0.5; 4]);
    }

    #[test]
    fn max_backward_routes_to_argmax() {
        let m = pool2d(&square(), PoolKind::Max, 2, 2).unwrap();
        let g = Tensor::<f64>::from_f64([1, 1, 1, 1], &[5.0]).unwrap();
        let dx = pool2d_backward(&[1, 1, 2, 2], PoolKind::Max, 2, 2, m.argmax.as_deref(), &g)
            .unwrap();
        assert_eq!(dx.data(), &[0., 0., 0., 5.]);
    }
}
