use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionKind};
use crate::ndcore::{conv_output_size, pool_output_size, PoolKind, Tensor};
use crate::nn::{
    relative_cross_entropy, softmax_cross_entropy, Conv2d, Dropout, Flatten, GradTarget, Layer, Linear, Mode, Param, Pool,
    Relu, Sequential,
};
use crate::rng::Rng;
use crate::scalar::Scalar;

use super::config::{Arch, ModelConfig};

/// Images in `[0, 1]` are standardized as `(x - INPUT_MEAN) / INPUT_STD`
/// before the first convolution.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct ModelOutput<T> {
    /// One `[N, n_classes]` tensor per branch (a single entry for baselines).
    pub branch_logits: Vec<Tensor<T>>,
    pub fused_logits: Tensor<T>,
}

#[derive(Clone, Debug)]
enum Body<T> {
    Multi {
        trunk: Vec<Sequential<T>>,
        branches: Vec<Sequential<T>>,
        fusion: Fusion<T>,
        head: Option<Layer<T>>,
    },
    Plain(Sequential<T>),
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    body: Body<T>,
    rng: Rng,
}

fn stage<T: Scalar>(
    name: &str,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    pool: Option<(usize, usize)>,
    rng: &mut Rng,
) -> Vec<Layer<T>> {
    let mut layers = vec![
        Layer::Conv(Conv2d::new(name, in_c, out_c, kernel, stride, pad, rng)),
        Layer::Relu(Relu::new()),
    ];
    if let Some((k, s)) = pool {
        layers.push(Layer::Pool(Pool::new(PoolKind::Max, k, s)));
    }
    layers
}

fn branch<T: Scalar>(i: usize, in_c: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Sequential<T>> {
    Ok(Sequential::new(vec![
        Layer::Conv(Conv2d::new(
            &format!("branch.{i}.reduce"),
            in_c,
            cfg.reduce_channels,
            1,
            1,
            0,
            rng,
        )),
        Layer::Relu(Relu::new()),
        Layer::Pool(Pool::global(PoolKind::Avg)),
        Layer::Flatten(Flatten::new()),
        Layer::Linear(Linear::new(
            &format!("branch.{i}.fc1"),
            cfg.reduce_channels,
            cfg.branch_hidden,
            rng,
        )),
        Layer::Relu(Relu::new()),
        Layer::Dropout(Dropout::new(cfg.dropout_rate)?),
        Layer::Linear(Linear::new(
            &format!("branch.{i}.fc2"),
            cfg.branch_hidden,
            cfg.n_classes,
            rng,
        )),
    ]))
}

/// Spatial bookkeeping while assembling a single-path baseline.
struct Tracker {
    size: usize,
    trace: Vec<String>,
    input: usize,
}

impl Tracker {
    fn conv(&mut self, kernel: usize, stride: usize, pad: usize) -> Result<()> {
        self.size = conv_output_size(self.size, kernel, stride, pad).map_err(|_| self.underflow())?;
        self.trace.push(format!("conv{kernel} -> {}", self.size));
        Ok(())
    }

    /// Max-pool unless the map is already smaller than the window.
    fn pool(&mut self, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        let out = pool_output_size(self.size, kernel, stride).ok()?;
        self.size = out;
        self.trace.push(format!("pool{kernel} -> {out}"));
        Some((kernel, stride))
    }

    fn underflow(&self) -> Error {
        Error::SpatialUnderflow(format!("input {}: {}", self.input, self.trace.join(", ")))
    }
}

fn baseline<T: Scalar>(cfg: &ModelConfig, rng: &mut Rng) -> Result<Sequential<T>> {
    let d = cfg.width_divisor;
    let w = |c: usize| (c / d).max(1);
    let s1 = cfg.first_stride();
    let mut t = Tracker {
        size: cfg.input_size,
        trace: vec![],
        input: cfg.input_size,
    };
    // (channels, kernel, stride, pad, pool after)
    let convs: Vec<(usize, usize, usize, usize, bool)> = match cfg.arch {
        Arch::AlexnetLike => vec![
            (96, 11, s1, 2, true),
            (256, 5, 1, 2, true),
            (384, 3, 1, 1, false),
            (384, 3, 1, 1, false),
            (256, 3, 1, 1, true),
        ],
        Arch::Acnn => vec![
            (64, 11, s1, 2, true),
            (64, 5, 1, 2, true),
            (64, 3, 1, 1, false),
            (64, 3, 1, 1, false),
        ],
        Arch::Tcnn => vec![(96, 11, s1, 2, true), (256, 5, 1, 2, false)],
        Arch::Mldrnet => unreachable!("not a baseline"),
    };
    let fcs: Vec<usize> = match cfg.arch {
        Arch::Acnn => vec![1000, 256],
        _ => vec![4096, 4096],
    };
    let mut layers = Vec::new();
    let mut in_c = 3;
    for (i, &(c, k, s, p, pool)) in convs.iter().enumerate() {
        t.conv(k, s, p)?;
        let pool = if pool { t.pool(3, 2) } else { None };
        layers.extend(stage(&format!("conv{}", i + 1), in_c, w(c), k, s, p, pool, rng));
        in_c = w(c);
    }
    if cfg.arch == Arch::Tcnn {
        // energy layer: average over the whole remaining map
        layers.push(Layer::Pool(Pool::global(PoolKind::Avg)));
        t.size = 1;
    }
    layers.push(Layer::Flatten(Flatten::new()));
    let mut width = in_c * t.size * t.size;
    for (i, &f) in fcs.iter().enumerate() {
        layers.push(Layer::Linear(Linear::new(&format!("fc{}", i + 1), width, w(f), rng)));
        layers.push(Layer::Relu(Relu::new()));
        layers.push(Layer::Dropout(Dropout::new(cfg.dropout_rate)?));
        width = w(f);
    }
    layers.push(Layer::Linear(Linear::new(
        &format!("fc{}", fcs.len() + 1),
        width,
        cfg.n_classes,
        rng,
    )));
    Ok(Sequential::new(layers))
}

impl<T: Scalar> Model<T> {
    /// Instantiates the network with fan-in uniform weights drawn from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(config.seed, "init", 0);
        let body = if config.arch == Arch::Mldrnet {
            let mut trunk = Vec::new();
            let mut branches = Vec::new();
            let mut in_c = 3;
            for (i, row) in config.shape_trace()?.iter().enumerate() {
                let pool = row.pooled.map(|_| (2, 2));
                let mut layers = stage(
                    &format!("trunk.{i}.conv"),
                    in_c,
                    row.channels,
                    row.kernel,
                    row.stride,
                    row.pad,
                    pool,
                    &mut rng,
                );
                if i == 0 {
                    if let Layer::Conv(c) = &mut layers[0] {
                        c.input_grad = false;
                    }
                }
                trunk.push(Sequential::new(layers));
                branches.push(branch(i, row.channels, &config, &mut rng)?);
                in_c = row.channels;
            }
            let head = (config.fusion == FusionKind::Concat).then(|| {
                Layer::Linear(Linear::new(
                    "head",
                    config.depth * config.n_classes,
                    config.n_classes,
                    &mut rng,
                ))
            });
            Body::Multi {
                trunk,
                branches,
                fusion: Fusion::new(config.fusion),
                head,
            }
        } else {
            let mut seq = baseline(&config, &mut rng)?;
            if let Layer::Conv(c) = &mut seq.layers[0] {
                c.input_grad = false;
            }
            Body::Plain(seq)
        };
        Ok(Self {
            rng: Rng::derive(config.seed, "dropout", 0),
            config,
            body,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn branch_count(&self) -> usize {
        match &self.body {
            Body::Multi { branches, .. } => branches.len(),
            Body::Plain(_) => 1,
        }
    }

    pub fn rng(&self) -> &Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: Rng) {
        self.rng = rng;
    }

    fn first_conv(&mut self) -> &mut Conv2d<T> {
        let layer = match &mut self.body {
            Body::Multi { trunk, .. } => &mut trunk[0].layers[0],
            Body::Plain(seq) => &mut seq.layers[0],
        };
        match layer {
            Layer::Conv(c) => c,
            _ => unreachable!("every architecture starts with a convolution"),
        }
    }

    /// Whether `backward` computes the gradient with respect to the images.
    pub fn set_input_grad(&mut self, on: bool) {
        self.first_conv().input_grad = on;
    }

    pub fn forward(&mut self, images: &Tensor<T>, mode: Mode) -> Result<ModelOutput<T>> {
        let s = self.config.input_size;
        if images.rank() != 4 || images.shape()[1..] != [3, s, s] {
            return Err(Error::LayerShape {
                layer: format!("{} input", self.config.arch),
                expected: format!("[N,3,{s},{s}]"),
                got: images.shape().to_vec(),
            });
        }
        let inv_std = T::of(1.0 / INPUT_STD);
        let centered = images.map(|v| (v - T::of(INPUT_MEAN)) * inv_std);
        let rng = &mut self.rng;
        match &mut self.body {
            Body::Multi {
                trunk,
                branches,
                fusion,
                head,
            } => {
                let mut h = centered;
                let mut branch_logits = Vec::with_capacity(trunk.len());
                for (stage, br) in trunk.iter_mut().zip(branches.iter_mut()) {
                    h = stage.forward(&h, mode, rng)?;
                    branch_logits.push(br.forward(&h, mode, rng)?);
                }
                let mut fused = fusion.forward(&branch_logits)?;
                if let Some(head) = head {
                    fused = head.forward(&fused, mode, rng)?;
                }
                Ok(ModelOutput {
                    branch_logits,
                    fused_logits: fused,
                })
            }
            Body::Plain(seq) => {
                let logits = seq.forward(&centered, mode, rng)?;
                Ok(ModelOutput {
                    branch_logits: vec![logits.clone()],
                    fused_logits: logits,
                })
            }
        }
    }

    /// Backpropagates `grad_logits` (gradient w.r.t. the fused logits).
    ///
    /// Each trunk stage receives the sum of its own branch's gradient and the
    /// gradient flowing back from deeper stages. Returns the image gradient,
    /// which is all zeros unless [`set_input_grad`](Self::set_input_grad) is on.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let grad = match &mut self.body {
            Body::Multi {
                trunk,
                branches,
                fusion,
                head,
            } => {
                let g = match head {
                    Some(head) => head.backward(grad_logits)?,
                    None => grad_logits.clone(),
                };
                let branch_grads = fusion.backward(&g)?;
                let mut carry: Option<Tensor<T>> = None;
                for ((stage, br), bg) in trunk
                    .iter_mut()
                    .zip(branches.iter_mut())
                    .zip(branch_grads.iter())
                    .rev()
                {
                    let mut g = br.backward(bg)?;
                    if let Some(c) = carry {
                        g.add_assign(&c)?;
                    }
                    carry = Some(stage.backward(&g)?);
                }
                carry.expect("at least two stages")
            }
            Body::Plain(seq) => seq.backward(grad_logits)?,
        };
        let inv_std = T::of(1.0 / INPUT_STD);
        Ok(grad.map(|g| g * inv_std))
    }

    /// Parameters in a fixed order: trunk, branches, head.
    pub fn params(&self) -> Vec<&Param<T>> {
        match &self.body {
            Body::Multi {
                trunk,
                branches,
                head,
                ..
            } => trunk
                .iter()
                .flat_map(|s| s.params())
                .chain(branches.iter().flat_map(|b| b.params()))
                .chain(head.iter().flat_map(|h| h.params()))
                .collect(),
            Body::Plain(seq) => seq.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match &mut self.body {
            Body::Multi {
                trunk,
                branches,
                head,
                ..
            } => trunk
                .iter_mut()
                .flat_map(|s| s.params_mut())
                .chain(branches.iter_mut().flat_map(|b| b.params_mut()))
                .chain(head.iter_mut().flat_map(|h| h.params_mut()))
                .collect(),
            Body::Plain(seq) => seq.params_mut(),
        }
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Distance of the last forward pass from any ReLU, max-pool or min/max fusion switch.
    pub fn kink_margin(&self) -> f64 {
        match &self.body {
            Body::Multi {
                trunk,
                branches,
                fusion,
                ..
            } => trunk
                .iter()
                .chain(branches.iter())
                .map(|s| s.kink_margin())
                .chain(fusion.state().map(|s| s.kink_margin()))
                .fold(f64::INFINITY, f64::min),
            Body::Plain(seq) => seq.kink_margin(),
        }
    }

    /// Test hook: corrupts the weight gradient of the last branch's output layer.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, factor: T) {
        let layer = match &mut self.body {
            Body::Multi { branches, .. } => branches.last_mut().and_then(|b| b.layers.last_mut()),
            Body::Plain(seq) => seq.layers.last_mut(),
        };
        if let Some(l) = layer {
            l.inject_grad_fault(factor);
        }
    }

    /// The trunk stages and branch heads, for inspection in tests.
    pub fn parts(&self) -> Option<(&[Sequential<T>], &[Sequential<T>])> {
        match &self.body {
            Body::Multi {
                trunk, branches, ..
            } => Some((trunk, branches)),
            Body::Plain(_) => None,
        }
    }
}

/// Model plus fixed labels, viewed as a scalar loss of the input images.
pub struct ModelProbe<T> {
    pub model: Model<T>,
    pub labels: Vec<usize>,
    reference: Option<Tensor<T>>,
}

impl<T: Scalar> ModelProbe<T> {
    pub fn new(mut model: Model<T>, labels: Vec<usize>) -> Self {
        model.set_input_grad(true);
        Self {
            model,
            labels,
            reference: None,
        }
    }
}

/// After the first `loss_and_grads`, `loss` reports the loss relative to that
/// point (see [`relative_cross_entropy`]); the gradient is unchanged.
impl<T: Scalar> GradTarget<T> for ModelProbe<T> {
    fn loss(&mut self, input: &Tensor<T>) -> Result<T> {
        let out = self.model.forward(input, Mode::Eval)?;
        match &self.reference {
            Some(z0) => relative_cross_entropy(&out.fused_logits, z0, &self.labels),
            None => Ok(softmax_cross_entropy(&out.fused_logits, &self.labels)?.loss),
        }
    }

    fn loss_and_grads(&mut self, input: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        let out = self.model.forward(input, Mode::Eval)?;
        let l = softmax_cross_entropy(&out.fused_logits, &self.labels)?;
        let dx = self.model.backward(&l.grad_logits)?;
        self.reference = Some(out.fused_logits);
        Ok((l.loss, dx))
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.model.params_mut()
    }

    fn kink_margin(&self) -> f64 {
        self.model.kink_margin()
    }
}
