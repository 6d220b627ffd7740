//! Central-difference gradient checking.
//!
//! Inputs sitting within `10·ε` of a ReLU or max-pool switching point make
//! the numeric derivative straddle a kink. [`GradTarget::kink_margin`] lets
//! callers detect that and redraw inputs before checking.

use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::nn::{Layer, Mode, Param};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// `|a-n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Something with a scalar loss of an input tensor and trainable parameters.
pub trait GradTarget<T: Scalar> {
    /// Forward pass only.
    fn loss(&mut self, input: &Tensor<T>) -> Result<T>;

    /// Loss, with parameter gradients written into the params and the input
    /// gradient returned.
    fn loss_and_grads(&mut self, input: &Tensor<T>) -> Result<(T, Tensor<T>)>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Distance of the last forward pass from a non-differentiable point.
    fn kink_margin(&self) -> f64 {
        f64::INFINITY
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter (or `input`) and flat index of the worst probe.
    pub worst: String,
    pub probes: usize,
}

/// Probes every parameter element and every input element.
pub fn grad_check<T: Scalar, G: GradTarget<T>>(
    target: &mut G,
    input: &Tensor<T>,
    epsilon: f64,
) -> Result<GradCheckReport> {
    check(target, input, epsilon, true)
}

fn check<T: Scalar, G: GradTarget<T>>(
    target: &mut G,
    input: &Tensor<T>,
    epsilon: f64,
    with_input: bool,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    for p in target.params_mut() {
        p.zero_grad();
    }
    let (loss, input_grad) = target.loss_and_grads(input)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("at the unperturbed point".into()));
    }
    let analytic: Vec<(String, Vec<f64>)> = target
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.to_f64_vec()))
        .collect();

    let eps = T::of(epsilon);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        probes: 0,
    };
    let mut record = |name: &str, i: usize, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.probes += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = format!("{name}[{i}] analytic={a:e} numeric={n:e}");
        }
    };

    let probe = |target: &mut G, at: &Tensor<T>, what: &str| -> Result<f64> {
        let l = target.loss(at)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss(format!("while probing {what}")));
        }
        Ok(l.as_f64())
    };

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = target.params_mut()[pi].value.data()[i];
            target.params_mut()[pi].value.data_mut()[i] = orig + eps;
            let plus = probe(target, input, name)?;
            target.params_mut()[pi].value.data_mut()[i] = orig - eps;
            let minus = probe(target, input, name)?;
            target.params_mut()[pi].value.data_mut()[i] = orig;
            record(name, i, a, (plus - minus) / (2.0 * epsilon));
        }
    }

    if !with_input {
        return Ok(report);
    }
    let mut x = input.clone();
    for (i, &a) in input_grad.to_f64_vec().iter().enumerate() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = probe(target, &x, "input")?;
        x.data_mut()[i] = orig - eps;
        let minus = probe(target, &x, "input")?;
        x.data_mut()[i] = orig;
        record("input", i, a, (plus - minus) / (2.0 * epsilon));
    }
    Ok(report)
}

/// A single layer under a fixed random linear read-out `L = Σ r ⊙ layer(x)`.
///
/// Dropout in train mode replays the same mask on every evaluation.
pub struct LayerProbe<T> {
    pub layer: Layer<T>,
    pub mode: Mode,
    readout: Option<Tensor<T>>,
    readout_seed: u64,
    rng: Rng,
}

impl<T: Scalar> LayerProbe<T> {
    pub fn new(layer: Layer<T>, mode: Mode, seed: u64) -> Self {
        Self {
            layer,
            mode,
            readout: None,
            readout_seed: seed,
            rng: Rng::derive(seed, "dropout-mask", 0),
        }
    }

    fn output(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = self.rng.clone();
        let y = self.layer.forward(x, self.mode, &mut rng)?;
        if self.readout.as_ref().map(|r| r.shape() != y.shape()).unwrap_or(true) {
            let mut r = Rng::derive(self.readout_seed, "readout", 0);
            self.readout = Some(Tensor::uniform(y.shape().to_vec(), -1.0, 1.0, &mut r));
        }
        Ok(y)
    }

    fn read(&self, y: &Tensor<T>) -> T {
        let r = self.readout.as_ref().expect("readout set by output()");
        crate::ndcore::dot(y.data(), r.data())
    }
}

impl<T: Scalar> GradTarget<T> for LayerProbe<T> {
    fn loss(&mut self, input: &Tensor<T>) -> Result<T> {
        let y = self.output(input)?;
        Ok(self.read(&y))
    }

    fn loss_and_grads(&mut self, input: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        let y = self.output(input)?;
        let l = self.read(&y);
        let r = self.readout.clone().expect("readout set");
        let dx = self.layer.backward(&r)?;
        Ok((l, dx))
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layer.params_mut()
    }

    fn kink_margin(&self) -> f64 {
        self.layer.kink_margin().unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::PoolKind;
    use crate::nn::{Conv2d, Dropout, Flatten, Linear, Pool, Relu};

    fn check(layer: Layer<f64>, mode: Mode, shape: &[usize], seed: u64) -> GradCheckReport {
        let eps = 1e-5;
        for attempt in 0..20 {
            let mut rng = Rng::derive(seed, "gc-input", attempt);
            let x = Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng);
            let mut probe = LayerProbe::new(layer.clone(), mode, seed);
            probe.loss(&x).unwrap();
            if probe.kink_margin() < 10.0 * eps {
                continue;
            }
            return grad_check(&mut probe, &x, eps).unwrap();
        }
        panic!("no kink-free input found");
    }

    #[test]
    fn linear_three_by_four() {
        let mut rng = Rng::new(1);
        let r = check(Layer::Linear(Linear::new("fc", 3, 4, &mut rng)), Mode::Eval, &[5, 3], 1);
        assert!(r.max_rel_error < 1e-5, "{r:?}");
        assert_eq!(r.probes, 12 + 4 + 15);
    }

    #[test]
    fn every_layer_kind_passes() {
        let mut rng = Rng::new(2);
        let mut conv = Conv2d::new("c", 2, 3, 3, 2, 1, &mut rng);
        conv.bias.value = Tensor::uniform([3], -0.5, 0.5, &mut rng);
        let cases: Vec<(Layer<f64>, Mode, Vec<usize>)> = vec![
            (Layer::Conv(conv), Mode::Eval, vec![2, 2, 6, 6]),
            (Layer::Relu(Relu::new()), Mode::Eval, vec![2, 3, 4]),
            (Layer::Pool(Pool::new(PoolKind::Max, 2, 2)), Mode::Eval, vec![2, 2, 4, 4]),
            (Layer::Pool(Pool::new(PoolKind::Max, 3, 2)), Mode::Eval, vec![1, 2, 7, 7]),
            (Layer::Pool(Pool::new(PoolKind::Avg, 3, 1)), Mode::Eval, vec![1, 2, 5, 5]),
            (Layer::Pool(Pool::global(PoolKind::Avg)), Mode::Eval, vec![2, 3, 4, 4]),
            (Layer::Flatten(Flatten::new()), Mode::Eval, vec![2, 3, 2, 2]),
            (Layer::Dropout(Dropout::new(0.5).unwrap()), Mode::Train, vec![3, 7]),
        ];
        for (i, (layer, mode, shape)) in cases.into_iter().enumerate() {
            let kind = layer.kind();
            let r = check(layer, mode, &shape, 10 + i as u64);
            assert!(r.max_rel_error < 1e-5, "{kind}: {r:?}");
        }
    }

    #[test]
    fn eval_dropout_has_constant_gradients() {
        let r = check(Layer::Dropout(Dropout::new(0.5).unwrap()), Mode::Eval, &[2, 4], 3);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut probe = LayerProbe::<f64>::new(Layer::Relu(Relu::new()), Mode::Eval, 0);
        let x = Tensor::ones([2]);
        assert!(grad_check(&mut probe, &x, 1e-2).is_err());
        assert!(grad_check(&mut probe, &x, 1e-9).is_err());
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut rng = Rng::new(4);
        let mut layer = Layer::Linear(Linear::<f64>::new("fc", 3, 4, &mut rng));
        layer.inject_grad_fault(1.01);
        let r = check(layer, Mode::Eval, &[2, 3], 4);
        assert!(r.max_rel_error > 1e-3, "{r:?}");
        assert!(r.worst.starts_with("fc.weight"), "{}", r.worst);
    }
}
