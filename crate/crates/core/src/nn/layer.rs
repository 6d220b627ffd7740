use std::fmt;

use crate::error::{Error, Result};
use crate::ndcore::{self, PoolKind, Tensor};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(g)
    }
}

/// Uniform fan-in initialisation, bound `sqrt(6 / fan_in)`.
fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub pad: usize,
    /// First layers skip the input gradient unless asked for it.
    pub input_grad: bool,
    cache: Option<Tensor<T>>,
    fault: Option<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let w = fan_in_uniform(&shape, in_channels * kernel * kernel, rng);
        Self {
            weight: Param::new(format!("{name}.weight"), w),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros([out_channels])),
            stride,
            pad,
            input_grad: true,
            cache: None,
            fault: None,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.weight.value.shape()[1];
        if x.rank() != 4 || x.shape()[1] != c {
            return Err(Error::LayerShape {
                layer: self.weight.name.clone(),
                expected: format!("[N,{c},H,W]"),
                got: x.shape().to_vec(),
            });
        }
        let y = ndcore::conv2d(x, &self.weight.value, &self.bias.value, self.stride, self.pad)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward(self.weight.name.clone()))?;
        let g = ndcore::conv2d_backward(
            x,
            &self.weight.value,
            grad,
            self.stride,
            self.pad,
            self.input_grad,
        )?;
        let mut dk = g.kernels;
        if let Some(f) = self.fault {
            dk = dk.scale(f);
        }
        self.weight.accumulate(&dk)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input.unwrap_or_else(|| x.zeros_like()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { cache: None }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.cache = Some(x.clone());
        y
    }

    fn backward(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("relu".into()))?;
        check_grad_shape("relu", x.shape(), grad)?;
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Max or average pooling over square windows.
///
/// `global` pools over the whole spatial extent of whatever arrives, which is
/// how the branch heads and the energy layer summarise feature maps.
#[derive(Clone, Debug)]
pub struct Pool<T> {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    pub global: bool,
    cache: Option<(Tensor<T>, usize, usize, Option<Vec<usize>>)>,
}

impl<T: Scalar> Pool<T> {
    pub fn new(kind: PoolKind, kernel: usize, stride: usize) -> Self {
        Self {
            kind,
            kernel,
            stride,
            global: false,
            cache: None,
        }
    }

    pub fn global(kind: PoolKind) -> Self {
        Self {
            global: true,
            ..Self::new(kind, 1, 1)
        }
    }

    fn window(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.rank() != 4 {
            return Err(Error::LayerShape {
                layer: format!("{:?}pool", self.kind).to_lowercase(),
                expected: "[N,C,H,W]".into(),
                got: x.shape().to_vec(),
            });
        }
        if self.global {
            let (h, w) = (x.shape()[2], x.shape()[3]);
            if h != w {
                return Err(Error::LayerShape {
                    layer: "global pool".into(),
                    expected: "square spatial extent".into(),
                    got: x.shape().to_vec(),
                });
            }
            Ok((h, h))
        } else {
            Ok((self.kernel, self.stride))
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (k, s) = self.window(x)?;
        let out = ndcore::pool2d(x, self.kind, k, s)?;
        self.cache = Some((x.clone(), k, s, out.argmax));
        Ok(out.output)
    }

    fn backward(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, k, s, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("pool".into()))?;
        ndcore::pool2d_backward(x.shape(), self.kind, *k, *s, argmax.as_deref(), grad)
    }

    /// Smallest gap between a window's winner and runner-up among positive values.
    fn kink_margin(&self) -> Option<f64> {
        let (x, k, s, _) = self.cache.as_ref()?;
        if self.kind != PoolKind::Max {
            return None;
        }
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
        let mut margin = f64::INFINITY;
        let d = x.data();
        for plane in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut vals: Vec<f64> = (0..k * k)
                        .map(|i| d[plane * h * w + (oy * s + i / k) * w + ox * s + i % k].as_f64())
                        .collect();
                    vals.sort_by(|a, b| b.total_cmp(a));
                    if vals.len() > 1 && vals[0] > 0.0 {
                        margin = margin.min(vals[0] - vals[1]);
                    }
                }
            }
        }
        Some(margin)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Flatten {
    cache: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self { cache: None }
    }

    fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = x.batch();
        self.cache = Some(x.shape().to_vec());
        x.clone().reshape([n, x.len() / n])
    }

    fn backward<T: Scalar>(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("flatten".into()))?;
        grad.clone().reshape(shape.clone())
    }
}

/// Affine map `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
    fault: Option<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let w = fan_in_uniform(&[inputs, outputs], inputs, rng);
        Self {
            weight: Param::new(format!("{name}.weight"), w),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros([outputs])),
            cache: None,
            fault: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 2 || x.shape()[1] != self.inputs() {
            return Err(Error::LayerShape {
                layer: self.weight.name.clone(),
                expected: format!("[N,{}]", self.inputs()),
                got: x.shape().to_vec(),
            });
        }
        let mut y = ndcore::matmul(x, &self.weight.value)?;
        let out = self.outputs();
        for row in y.data_mut().chunks_mut(out) {
            for (v, &b) in row.iter_mut().zip(self.bias.value.data()) {
                *v = *v + b;
            }
        }
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward(self.weight.name.clone()))?;
        let (n, i, o) = (x.shape()[0], self.inputs(), self.outputs());
        check_grad_shape(&self.weight.name, &[n, o], grad)?;
        let mut dw = Tensor::zeros([i, o]);
        for s in 0..n {
            let xs = x.sample(s);
            let gs = grad.sample(s);
            for (r, &xv) in xs.iter().enumerate() {
                let row = &mut dw.data_mut()[r * o..(r + 1) * o];
                for (d, &g) in row.iter_mut().zip(gs) {
                    *d = *d + xv * g;
                }
            }
        }
        if let Some(f) = self.fault {
            dw = dw.scale(f);
        }
        let mut db = Tensor::zeros([o]);
        for gs in grad.data().chunks(o) {
            for (d, &g) in db.data_mut().iter_mut().zip(gs) {
                *d = *d + g;
            }
        }
        self.weight.accumulate(&dw)?;
        self.bias.accumulate(&db)?;
        let mut dx = Tensor::zeros([n, i]);
        let w = self.weight.value.data();
        for s in 0..n {
            let gs = grad.sample(s);
            for (r, d) in dx.data_mut()[s * i..(s + 1) * i].iter_mut().enumerate() {
                *d = ndcore::dot(&w[r * o..(r + 1) * o], gs);
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)`; identity in eval mode.
#[derive(Clone, Debug)]
pub struct Dropout<T> {
    pub rate: f64,
    mask: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0,1)")));
        }
        Ok(Self { rate, mask: None })
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Tensor<T> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.mask = Some(Tensor::ones(x.shape().to_vec()));
            return x.clone();
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mut mask = x.zeros_like();
        for m in mask.data_mut() {
            if !rng.bernoulli(self.rate) {
                *m = keep;
            }
        }
        let y = ndcore::elementwise(ndcore::BinaryOp::Mul, x, &mask).expect("same shape");
        self.mask = Some(mask);
        y
    }

    fn backward(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::BackwardBeforeForward("dropout".into()))?;
        ndcore::elementwise(ndcore::BinaryOp::Mul, grad, mask)
    }
}

fn check_grad_shape<T: Scalar>(layer: &str, expected: &[usize], grad: &Tensor<T>) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::LayerShape {
            layer: format!("{layer} backward"),
            expected: format!("{expected:?}"),
            got: grad.shape().to_vec(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    AvgPool,
    Flatten,
    Linear,
    Dropout,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "maxpool",
            LayerKind::AvgPool => "avgpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear => "linear",
            LayerKind::Dropout => "dropout",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu(Relu<T>),
    Pool(Pool<T>),
    Flatten(Flatten),
    Linear(Linear<T>),
    Dropout(Dropout<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Pool(p) if p.kind == PoolKind::Max => LayerKind::MaxPool,
            Layer::Pool(_) => LayerKind::AvgPool,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Dropout(_) => LayerKind::Dropout,
        }
    }

    /// Computes the output and caches what `backward` needs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::Pool(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::Dropout(l) => Ok(l.forward(x, mode, rng)),
        }
    }

    /// Returns the input gradient and accumulates parameter gradients.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::Pool(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }

    /// Distance of the cached forward pass from a non-differentiable point,
    /// for layers that have one.
    pub fn kink_margin(&self) -> Option<f64> {
        match self {
            Layer::Relu(l) => l.cache.as_ref().map(|x| {
                x.data()
                    .iter()
                    .map(|v| v.as_f64().abs())
                    .fold(f64::INFINITY, f64::min)
            }),
            Layer::Pool(l) => l.kink_margin(),
            _ => None,
        }
    }

    /// Test hook: scales this layer's weight gradient by `factor`.
    #[doc(hidden)]
    pub fn inject_grad_fault(&mut self, factor: T) {
        match self {
            Layer::Conv(l) => l.fault = Some(factor),
            Layer::Linear(l) => l.fault = Some(factor),
            _ => {}
        }
    }
}

/// Layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode, rng)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn kink_margin(&self) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| l.kink_margin())
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut rng = Rng::new(0);
        let mut l = Layer::Relu(Relu::new());
        let y = l.forward(&t(&[3], &[-1., 0., 2.]), Mode::Eval, &mut rng).unwrap();
        assert_eq!(y.data(), &[0., 0., 2.]);

        let mut l = Layer::Relu(Relu::new());
        l.forward(&t(&[2], &[-1., 2.]), Mode::Eval, &mut rng).unwrap();
        let g = l.backward(&t(&[2], &[5., 5.])).unwrap();
        assert_eq!(g.data(), &[0., 5.]);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let mut l = Layer::Relu(Relu::new());
        l.forward(&t(&[1], &[0.]), Mode::Eval, &mut Rng::new(0)).unwrap();
        assert_eq!(l.backward(&t(&[1], &[1.])).unwrap().data(), &[0.]);
    }

    #[test]
    fn zero_weight_linear_emits_bias() {
        let mut rng = Rng::new(1);
        let mut lin = Linear::<f64>::new("fc", 3, 2, &mut rng);
        lin.weight.value.fill(0.0);
        lin.bias.value = t(&[2], &[0.5, -1.5]);
        let y = Layer::Linear(lin)
            .forward(&Tensor::uniform([4, 3], -1., 1., &mut rng), Mode::Eval, &mut rng)
            .unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.5, -1.5]);
        }
    }

    #[test]
    fn conv_layer_matches_kernel() {
        let mut rng = Rng::new(2);
        let conv = Conv2d::<f64>::new("c", 2, 3, 3, 1, 1, &mut rng);
        let x = Tensor::uniform([2, 2, 5, 5], -1., 1., &mut rng);
        let direct =
            ndcore::conv2d(&x, &conv.weight.value, &conv.bias.value, 1, 1).unwrap();
        let y = Layer::Conv(conv).forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, direct);
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut rng = Rng::new(3);
        let mut l = Layer::Linear(Linear::<f64>::new("fc", 2, 2, &mut rng));
        assert!(matches!(
            l.backward(&Tensor::ones([1, 2])),
            Err(Error::BackwardBeforeForward(_))
        ));
        let mut r = Layer::<f64>::Relu(Relu::new());
        assert!(r.backward(&Tensor::ones([1])).is_err());
    }

    #[test]
    fn linear_shape_error_names_layer() {
        let mut rng = Rng::new(4);
        let mut l = Layer::Linear(Linear::<f64>::new("head", 3, 2, &mut rng));
        let err = l.forward(&Tensor::ones([1, 4]), Mode::Eval, &mut rng).unwrap_err();
        assert!(err.to_string().contains("head.weight"), "{err}");
    }

    #[test]
    fn backward_accumulates_but_never_applies() {
        let mut rng = Rng::new(5);
        let mut l = Layer::Linear(Linear::<f64>::new("fc", 3, 4, &mut rng));
        let before: Vec<_> = l.params().iter().map(|p| p.value.clone()).collect();
        l.forward(&Tensor::uniform([2, 3], -1., 1., &mut rng), Mode::Train, &mut rng)
            .unwrap();
        l.backward(&Tensor::ones([2, 4])).unwrap();
        for (p, b) in l.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
            assert_eq!(p.grad.shape(), p.value.shape());
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_preserves_expectation() {
        let mut rng = Rng::new(6);
        let x = Tensor::<f64>::ones([10_000]);
        let mut d = Layer::Dropout(Dropout::new(0.3).unwrap());
        assert_eq!(d.forward(&x, Mode::Eval, &mut rng).unwrap(), x);
        let y = d.forward(&x, Mode::Train, &mut rng).unwrap();
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
        assert!((dropped - 0.3).abs() < 0.02, "{dropped}");
        for &v in y.data().iter().filter(|&&v| v != 0.0) {
            assert!((v - 1.0 / 0.7).abs() < 1e-12);
        }
        assert!(Dropout::<f64>::new(1.0).is_err());
    }
}
