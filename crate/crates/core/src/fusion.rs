//! Aggregation of per-branch representations into one.
//!
//! `min`/`max`/`mean` combine `k` equally shaped `[N,d]` tensors elementwise;
//! `concat` lays them side by side as `[N, k·d]`, branch 0 first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Concat,
    Min,
    Max,
    Mean,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [
        FusionKind::Concat,
        FusionKind::Min,
        FusionKind::Max,
        FusionKind::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Concat => "concat",
            FusionKind::Min => "min",
            FusionKind::Max => "max",
            FusionKind::Mean => "mean",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown fusion {s:?} (expected concat, min, max or mean)"
                ))
            })
    }
}

/// What the backward pass needs from a [`fuse`] call.
#[derive(Clone, Debug)]
pub struct FusionState<T> {
    pub kind: FusionKind,
    pub branch_count: usize,
    pub cached_inputs: Vec<Tensor<T>>,
    /// Selected branch per element, for `min` and `max`.
    pub argselect: Option<Vec<usize>>,
}

impl<T: Scalar> FusionState<T> {
    fn branch_shape(&self) -> &[usize] {
        self.cached_inputs[0].shape()
    }

    fn fused_shape(&self) -> Vec<usize> {
        let s = self.branch_shape();
        match self.kind {
            FusionKind::Concat => vec![s[0], s[1] * self.branch_count],
            _ => s.to_vec(),
        }
    }

    /// Smallest gap between the selected value and the best competitor.
    pub fn kink_margin(&self) -> f64 {
        let Some(sel) = &self.argselect else {
            return f64::INFINITY;
        };
        let mut margin = f64::INFINITY;
        for (i, &b) in sel.iter().enumerate() {
            let chosen = self.cached_inputs[b].data()[i].as_f64();
            for (j, t) in self.cached_inputs.iter().enumerate() {
                if j != b {
                    margin = margin.min((chosen - t.data()[i].as_f64()).abs());
                }
            }
        }
        margin
    }
}

/// Fuses `k ≥ 2` branch tensors of shape `[N,d]`.
///
/// Ties in `min`/`max` select the lowest branch index.
pub fn fuse<T: Scalar>(inputs: &[Tensor<T>], kind: FusionKind) -> Result<(Tensor<T>, FusionState<T>)> {
    if inputs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fusion needs at least 2 branches, got {}",
            inputs.len()
        )));
    }
    let shape = inputs[0].shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "fusion expects [N,d] branches, got {shape:?}"
        )));
    }
    for t in &inputs[1..] {
        if t.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                left: shape.clone(),
                right: t.shape().to_vec(),
            });
        }
    }
    let k = inputs.len();
    let len = inputs[0].len();
    let mut argselect = None;
    let out = match kind {
        FusionKind::Mean => {
            let kt = T::of_usize(k);
            let data = (0..len)
                .map(|i| {
                    let (mut sum, mut lo, mut hi) = (T::zero(), T::infinity(), T::neg_infinity());
                    for t in inputs {
                        let v = t.data()[i];
                        sum = sum + v;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    // rounding must not leave the branch range; identical branches return exactly
                    (sum / kt).max(lo).min(hi)
                })
                .collect();
            Tensor::new(shape.clone(), data)?
        }
        FusionKind::Max | FusionKind::Min => {
            let better = |cand: T, cur: T| match kind {
                FusionKind::Max => cand > cur,
                _ => cand < cur,
            };
            let mut sel = vec![0usize; len];
            let mut vals = inputs[0].data().to_vec();
            for (b, t) in inputs.iter().enumerate().skip(1) {
                for (i, &v) in t.data().iter().enumerate() {
                    if better(v, vals[i]) {
                        vals[i] = v;
                        sel[i] = b;
                    }
                }
            }
            argselect = Some(sel);
            Tensor::new(shape.clone(), vals)?
        }
        FusionKind::Concat => {
            let (n, d) = (shape[0], shape[1]);
            let mut data = Vec::with_capacity(len * k);
            for s in 0..n {
                for t in inputs {
                    data.extend_from_slice(&t.data()[s * d..(s + 1) * d]);
                }
            }
            Tensor::new([n, d * k], data)?
        }
    };
    let state = FusionState {
        kind,
        branch_count: k,
        cached_inputs: inputs.to_vec(),
        argselect,
    };
    Ok((out, state))
}

/// Splits the fused gradient back into one gradient per branch.
pub fn fuse_backward<T: Scalar>(state: &FusionState<T>, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let fused = state.fused_shape();
    if grad_out.shape() != fused.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "fuse_backward",
            left: fused,
            right: grad_out.shape().to_vec(),
        });
    }
    let k = state.branch_count;
    let shape = state.branch_shape().to_vec();
    Ok(match state.kind {
        FusionKind::Mean => {
            // the last branch takes the remainder so the branch gradients sum
            // back to the upstream gradient exactly
            let share = grad_out.map(|g| g / T::of_usize(k));
            let mut given = share.clone();
            for _ in 2..k {
                given.add_assign(&share)?;
            }
            let rest = Tensor::new(
                grad_out.shape().to_vec(),
                grad_out.data().iter().zip(given.data()).map(|(&g, &s)| g - s).collect(),
            )?;
            let mut grads = vec![share; k - 1];
            grads.push(rest);
            grads
        }
        FusionKind::Max | FusionKind::Min => {
            let sel = state.argselect.as_ref().expect("min/max record argselect");
            let mut grads = vec![Tensor::zeros(shape); k];
            for (i, (&b, &g)) in sel.iter().zip(grad_out.data()).enumerate() {
                grads[b].data_mut()[i] = g;
            }
            grads
        }
        FusionKind::Concat => {
            let (n, d) = (shape[0], shape[1]);
            let mut grads = vec![Tensor::zeros(shape); k];
            for s in 0..n {
                let row = &grad_out.data()[s * d * k..(s + 1) * d * k];
                for (b, g) in grads.iter_mut().enumerate() {
                    g.data_mut()[s * d..(s + 1) * d].copy_from_slice(&row[b * d..(b + 1) * d]);
                }
            }
            grads
        }
    })
}

/// Stateful wrapper holding the last forward's [`FusionState`].
#[derive(Clone, Debug)]
pub struct Fusion<T> {
    pub kind: FusionKind,
    state: Option<FusionState<T>>,
}

impl<T: Scalar> Fusion<T> {
    pub fn new(kind: FusionKind) -> Self {
        Self { kind, state: None }
    }

    pub fn forward(&mut self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let (out, state) = fuse(inputs, self.kind)?;
        self.state = Some(state);
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward(format!("{} fusion", self.kind)))?;
        fuse_backward(state, grad_out)
    }

    pub fn state(&self) -> Option<&FusionState<T>> {
        self.state.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64([1, v.len()], v).unwrap()
    }

    #[test]
    fn componentwise_examples() {
        let a = t(&[1., 3.]);
        let b = t(&[3., 1.]);
        let run = |k| fuse(&[a.clone(), b.clone()], k).unwrap().0;
        assert_eq!(run(FusionKind::Mean).data(), &[2., 2.]);
        assert_eq!(run(FusionKind::Max).data(), &[3., 3.]);
        assert_eq!(run(FusionKind::Min).data(), &[1., 1.]);
    }

    #[test]
    fn concat_layout() {
        let mut rng = crate::rng::Rng::new(0);
        let a = Tensor::<f64>::uniform([2, 8], -1., 1., &mut rng);
        let b = Tensor::<f64>::uniform([2, 8], -1., 1., &mut rng);
        let (c, _) = fuse(&[a.clone(), b.clone()], FusionKind::Concat).unwrap();
        assert_eq!(c.shape(), &[2, 16]);
        for s in 0..2 {
            assert_eq!(&c.sample(s)[..8], a.sample(s));
            assert_eq!(&c.sample(s)[8..], b.sample(s));
        }
    }

    #[test]
    fn errors() {
        assert!(fuse(&[t(&[1.])], FusionKind::Mean).is_err());
        assert!(fuse(&[t(&[1.]), t(&[1., 2.])], FusionKind::Max).is_err());
        let f = Fusion::<f64>::new(FusionKind::Mean);
        assert!(matches!(f.backward(&t(&[1.])), Err(Error::BackwardBeforeForward(_))));
    }

    #[test]
    fn mean_backward_quarter() {
        let xs: Vec<_> = (0..4).map(|i| t(&[i as f64, 1.0])).collect();
        let (_, st) = fuse(&xs, FusionKind::Mean).unwrap();
        for g in fuse_backward(&st, &t(&[1., 1.])).unwrap() {
            assert_eq!(g.data(), &[0.25, 0.25]);
        }
    }

    #[test]
    fn max_routes_to_selected_branch() {
        let xs = vec![t(&[0., 0.]), t(&[1., 1.]), t(&[5., 6.]), t(&[2., 2.])];
        let (_, st) = fuse(&xs, FusionKind::Max).unwrap();
        assert_eq!(st.argselect.as_deref(), Some(&[2usize, 2][..]));
        let g = fuse_backward(&st, &t(&[3., 4.])).unwrap();
        assert_eq!(g[2].data(), &[3., 4.]);
        for i in [0, 1, 3] {
            assert_eq!(g[i].data(), &[0., 0.]);
        }
    }

    #[test]
    fn ties_pick_lowest_branch() {
        let xs = vec![t(&[1.]), t(&[1.]), t(&[1.])];
        for k in [FusionKind::Max, FusionKind::Min] {
            let (_, st) = fuse(&xs, k).unwrap();
            assert_eq!(st.argselect.unwrap(), vec![0]);
        }
    }

    #[test]
    fn names_round_trip() {
        for k in FusionKind::ALL {
            assert_eq!(k.name().parse::<FusionKind>().unwrap(), k);
        }
        assert!("sum".parse::<FusionKind>().is_err());
    }
}
