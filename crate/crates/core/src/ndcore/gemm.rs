//! Slice-level matrix kernels shared by `matmul` and the convolutions.
//!
//! All three variants accumulate into `c`. Loop order keeps the innermost
//! loop contiguous; summation order is fixed.

use crate::scalar::Scalar;

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] = acc[0] + a[0] * b[0];
        acc[1] = acc[1] + a[1] * b[1];
        acc[2] = acc[2] + a[2] * b[2];
        acc[3] = acc[3] + a[3] * b[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&a, &b) in xr.iter().zip(yr) {
        s = s + a * b;
    }
    s
}

/// `c[m×p] += a[m×k] · b[k×p]`
pub(crate) fn gemm_nn<T: Scalar>(m: usize, k: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * p..(i + 1) * p];
        for t in 0..k {
            let av = a[i * k + t];
            if av != T::zero() {
                axpy(av, &b[t * p..(t + 1) * p], crow);
            }
        }
    }
}

/// `c[m×k] += a[m×p] · b[k×p]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(m: usize, p: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for t in 0..k {
            c[i * k + t] = c[i * k + t] + dot(arow, &b[t * p..(t + 1) * p]);
        }
    }
}

/// `c[k×p] += a[m×k]ᵀ · b[m×p]`
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let brow = &b[i * p..(i + 1) * p];
        for t in 0..k {
            let av = a[i * k + t];
            if av != T::zero() {
                axpy(av, brow, &mut c[t * p..(t + 1) * p]);
            }
        }
    }
}
