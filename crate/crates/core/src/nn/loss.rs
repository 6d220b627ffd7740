use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

/// Result of the softmax cross-entropy head.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean over the batch of `-ln p[label]`.
    pub loss: T,
    /// `[N, n]` class probabilities.
    pub probs: Tensor<T>,
    /// `(probs - onehot) / N`.
    pub grad_logits: Tensor<T>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "softmax expects [N, n] logits, got {:?}",
            logits.shape()
        )));
    }
    let n = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Ok(out)
}

/// Softmax over class logits followed by mean cross-entropy against integer labels.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<LossOutput<T>> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (batch, n) = (logits.shape()[0], logits.shape()[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: n,
        });
    }
    let probs = softmax(logits)?;
    let inv_n = T::one() / T::of_usize(batch);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (s, &label) in labels.iter().enumerate() {
        let row = &logits.data()[s * n..(s + 1) * n];
        // log-sum-exp form keeps the loss finite when p[label] underflows
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss = loss + (lse - row[label]);
        let g = &mut grad.data_mut()[s * n..(s + 1) * n];
        g[label] = g[label] - T::one();
        for v in g.iter_mut() {
            *v = *v * inv_n;
        }
    }
    Ok(LossOutput {
        loss: loss * inv_n,
        probs,
        grad_logits: grad,
    })
}

/// `L(logits) - L(reference)` for the mean cross-entropy, computed without
/// cancellation: `mean_i ln1p(sum_j p0_ij * expm1(δ_ij))`, where `p0` is the
/// softmax of `reference` and `δ_ij = (z_ij - z0_ij) - (z_iy - z0_iy)`.
///
/// For small perturbations the result is tiny and keeps full relative
/// precision even when the loss itself is far from zero, which is what
/// finite-difference probes need.
pub fn relative_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    reference: &Tensor<T>,
    labels: &[usize],
) -> Result<T> {
    if logits.shape() != reference.shape() {
        return Err(Error::InvalidArgument(format!(
            "logits {:?} and reference {:?} differ in shape",
            logits.shape(),
            reference.shape()
        )));
    }
    let p0 = softmax_cross_entropy(reference, labels)?.probs;
    let n = logits.shape()[1];
    let mut total = T::zero();
    for (s, &label) in labels.iter().enumerate() {
        let z = &logits.data()[s * n..(s + 1) * n];
        let z0 = &reference.data()[s * n..(s + 1) * n];
        let p = &p0.data()[s * n..(s + 1) * n];
        let shift = z[label] - z0[label];
        let u = (0..n).map(|j| p[j] * ((z[j] - z0[j]) - shift).exp_m1()).sum::<T>();
        total = total + u.ln_1p();
    }
    Ok(total / T::of_usize(labels.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_are_uniform() {
        let out = softmax_cross_entropy(&Tensor::<f64>::zeros([3, 8]), &[0, 4, 7]).unwrap();
        for &p in out.probs.data() {
            assert!((p - 0.125).abs() < 1e-15);
        }
        assert!((out.loss - 8f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.079442).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_cross_entropy(&Tensor::<f64>::zeros([1, 8]), &[8]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 8, n_classes: 8 }));
    }

    #[test]
    fn gradient_is_probs_minus_onehot_over_batch() {
        let logits = Tensor::<f64>::from_f64([2, 3], &[1., 2., 3., 0., 0., 0.]).unwrap();
        let out = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        let p = out.probs.data();
        let g = out.grad_logits.data();
        assert!((g[2] - (p[2] - 1.0) / 2.0).abs() < 1e-15);
        assert!((g[3] - (p[3] - 1.0) / 2.0).abs() < 1e-15);
        assert!((g[1] - p[1] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn relative_matches_loss_difference() {
        let base = Tensor::<f64>::from_f64([2, 3], &[0.3, -0.2, 0.05, 4.0, -3.0, 0.5]).unwrap();
        let moved = Tensor::<f64>::from_f64([2, 3], &[0.1, 0.4, 0.0, 3.0, -2.5, 1.5]).unwrap();
        let labels = [1, 0];
        let full = softmax_cross_entropy(&moved, &labels).unwrap().loss
            - softmax_cross_entropy(&base, &labels).unwrap().loss;
        let rel = relative_cross_entropy(&moved, &base, &labels).unwrap();
        assert!((full - rel).abs() < 1e-14);
        assert_eq!(relative_cross_entropy(&base, &base, &labels).unwrap(), 0.0);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits = Tensor::<f64>::from_f64([1, 3], &[1000., -1000., 0.]).unwrap();
        let out = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(out.loss.is_finite());
        assert!((out.loss - 2000.0).abs() < 1e-9);
    }
}
