use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Output extent of a convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("convolution stride must be positive".into()));
    }
    if kernel == 0 || kernel > input + 2 * pad {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} larger than padded input {input}+2*{pad}"
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one `[C,H,W]` sample into a `[C*kh*kw, Ho*Wo]` patch matrix.
    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let p = self.p();
        let mut row = 0;
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let seg = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy as usize >= self.h {
                            seg.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in seg.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *v = if ix < 0 || ix as usize >= self.w {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters patch gradients back onto the image.
    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let p = self.p();
        let mut row = 0;
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] = dst[ix as usize] + src[oy * self.wo + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Geometry> {
    if input.rank() != 4 || kernels.rank() != 4 || input.shape()[1] != kernels.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernels.shape().to_vec(),
        });
    }
    let (c, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    let ho = conv_output_size(h, kh, stride, pad)?;
    let wo = conv_output_size(w, kw, stride, pad)?;
    Ok(Geometry {
        c,
        h,
        w,
        kh,
        kw,
        ho,
        wo,
        stride,
        pad,
    })
}

/// 2-D cross-correlation of `[N,C,H,W]` input with `[F,C,kh,kw]` kernels.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = geometry(input, kernels, stride, pad)?;
    let f = kernels.shape()[0];
    if bias.shape() != [f] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: vec![f],
            right: bias.shape().to_vec(),
        });
    }
    let n = input.batch();
    let (k, p) = (g.k(), g.p());
    let mut out = Tensor::zeros([n, f, g.ho, g.wo]);
    let mut col = vec![T::zero(); k * p];
    let per = f * p;
    for s in 0..n {
        g.im2col(input.sample(s), &mut col);
        let dst = &mut out.data_mut()[s * per..(s + 1) * per];
        for (row, &b) in dst.chunks_mut(p).zip(bias.data()) {
            row.fill(b);
        }
        gemm_nn(f, k, p, kernels.data(), &col, dst);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    /// Absent when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a [`conv2d`] call given the upstream gradient.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<Conv2dGrads<T>> {
    let g = geometry(input, kernels, stride, pad)?;
    let f = kernels.shape()[0];
    let n = input.batch();
    let expected = [n, f, g.ho, g.wo];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: expected.to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let (k, p) = (g.k(), g.p());
    let mut dk = kernels.zeros_like();
    let mut db = Tensor::zeros([f]);
    let mut dx = need_input_grad.then(|| input.zeros_like());
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); k * p];
    let in_per = g.c * g.h * g.w;
    for s in 0..n {
        let go = grad_out.sample(s);
        g.im2col(input.sample(s), &mut col);
        gemm_nt(f, p, k, go, &col, dk.data_mut());
        for (b, row) in db.data_mut().iter_mut().zip(go.chunks(p)) {
            *b = *b + row.iter().copied().sum();
        }
        if let Some(dx) = dx.as_mut() {
            dcol.fill(T::zero());
            gemm_tn(f, k, p, kernels.data(), go, &mut dcol);
            g.col2im(&dcol, &mut dx.data_mut()[s * in_per..(s + 1) * in_per]);
        }
    }
    Ok(Conv2dGrads {
        input: dx,
        kernels: dk,
        bias: db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_copies_single_channel() {
        let x = Tensor::<f64>::from_f64([1, 1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let k = Tensor::ones([1, 1, 1, 1]);
        let y = conv2d(&x, &k, &Tensor::zeros([1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn one_by_one_kernel_sums_channels() {
        let x = Tensor::<f64>::from_f64([1, 2, 1, 2], &[1., 2., 10., 20.]).unwrap();
        let k = Tensor::ones([1, 2, 1, 1]);
        let y = conv2d(&x, &k, &Tensor::zeros([1]), 1, 0).unwrap();
        assert_eq!(y.data(), &[11., 22.]);
    }

    #[test]
    fn ones_on_ones_gives_four() {
        let x = Tensor::<f64>::ones([1, 1, 2, 2]);
        let k = Tensor::ones([1, 1, 2, 2]);
        let y = conv2d(&x, &k, &Tensor::zeros([1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn rejects_oversized_kernel_and_zero_stride() {
        let x = Tensor::<f64>::ones([1, 1, 2, 2]);
        let k = Tensor::ones([1, 1, 5, 5]);
        assert!(conv2d(&x, &k, &Tensor::zeros([1]), 1, 1).is_err());
        assert!(conv2d(&x, &k, &Tensor::zeros([1]), 1, 2).is_ok());
        let k1 = Tensor::ones([1, 1, 1, 1]);
        assert!(conv2d(&x, &k1, &Tensor::zeros([1]), 0, 0).is_err());
    }

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_output_size(64, 11, 2, 2).unwrap(), 29);
        assert_eq!(conv_output_size(375, 11, 4, 2).unwrap(), 93);
        assert_eq!(conv_output_size(1, 5, 1, 2).unwrap(), 1);
    }
}
