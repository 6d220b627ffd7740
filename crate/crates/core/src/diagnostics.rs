//! Gradient-check suites: every layer kind in isolation and whole models
//! end to end.

use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::model::{Model, ModelConfig, ModelProbe};
use crate::ndcore::{PoolKind, Tensor};
use crate::nn::{
    grad_check, Conv2d, Dropout, Flatten, GradCheckReport, GradTarget, Layer, LayerProbe, Linear,
    Mode, Pool, Relu,
};
use crate::rng::Rng;

/// Inputs are redrawn until the forward pass sits this many epsilons away
/// from every kink.
pub const KINK_CLEARANCE: f64 = 10.0;
const MAX_REDRAWS: u64 = 50;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradCheckReport,
}

fn kink_free<G: GradTarget<f64>>(
    make: impl Fn() -> G,
    shape: &[usize],
    lo: f64,
    hi: f64,
    seed: u64,
    eps: f64,
) -> Result<(G, Tensor<f64>)> {
    for attempt in 0..MAX_REDRAWS {
        let mut rng = Rng::derive(seed, "gradcheck-input", attempt);
        let x = Tensor::uniform(shape.to_vec(), lo, hi, &mut rng);
        let mut target = make();
        target.loss(&x)?;
        if target.kink_margin() >= KINK_CLEARANCE * eps {
            return Ok((target, x));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no input within {MAX_REDRAWS} draws clears every kink by {KINK_CLEARANCE}·ε"
    )))
}

/// Checks each layer kind on small random inputs.
pub fn check_layers(seed: u64, eps: f64) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::derive(seed, "gradcheck-layers", 0);
    let mut conv = Conv2d::new("conv", 2, 3, 3, 2, 1, &mut rng);
    conv.bias.value = Tensor::uniform([3], -0.5, 0.5, &mut rng);
    let mut lin = Linear::new("linear", 4, 3, &mut rng);
    lin.bias.value = Tensor::uniform([3], -0.5, 0.5, &mut rng);
    let cases: Vec<(&str, Layer<f64>, Mode, Vec<usize>)> = vec![
        ("conv", Layer::Conv(conv), Mode::Eval, vec![2, 2, 7, 7]),
        ("relu", Layer::Relu(Relu::new()), Mode::Eval, vec![2, 3, 5]),
        ("maxpool", Layer::Pool(Pool::new(PoolKind::Max, 2, 2)), Mode::Eval, vec![2, 2, 6, 6]),
        ("avgpool", Layer::Pool(Pool::new(PoolKind::Avg, 3, 2)), Mode::Eval, vec![2, 2, 7, 7]),
        ("global-avgpool", Layer::Pool(Pool::global(PoolKind::Avg)), Mode::Eval, vec![2, 3, 4, 4]),
        ("flatten", Layer::Flatten(Flatten::new()), Mode::Eval, vec![2, 3, 2, 2]),
        ("linear", Layer::Linear(lin), Mode::Eval, vec![3, 4]),
        ("dropout-train", Layer::Dropout(Dropout::new(0.5)?), Mode::Train, vec![3, 8]),
        ("dropout-eval", Layer::Dropout(Dropout::new(0.5)?), Mode::Eval, vec![3, 8]),
    ];
    let mut out = Vec::new();
    for (i, (name, layer, mode, shape)) in cases.into_iter().enumerate() {
        let case_seed = seed.wrapping_add(i as u64);
        let (mut probe, x) = kink_free(
            || LayerProbe::new(layer.clone(), mode, case_seed),
            &shape,
            -1.0,
            1.0,
            case_seed,
            eps,
        )?;
        out.push(CheckResult {
            name: name.to_string(),
            report: grad_check(&mut probe, &x, eps)?,
        });
    }
    Ok(out)
}

/// Checks a whole model end to end on a `batch`-sample input.
///
/// Biases are randomised so no unit sits exactly at a ReLU kink by
/// construction. `fault` corrupts one backward pass, for harness self-tests.
pub fn check_model(config: &ModelConfig, batch: usize, seed: u64, eps: f64, fault: bool) -> Result<CheckResult> {
    let mut model = Model::<f64>::build(config.clone())?;
    let mut rng = Rng::derive(seed, "gradcheck-bias", 0);
    for p in model.params_mut() {
        if p.name.ends_with(".bias") {
            p.value = Tensor::uniform(p.value.shape().to_vec(), -0.1, 0.1, &mut rng);
        }
    }
    if fault {
        model.inject_backward_fault(1.01);
    }
    let n = config.n_classes;
    let labels: Vec<usize> = (0..batch).map(|i| (i * 3 + 1) % n).collect();
    let s = config.input_size;
    let (mut probe, x) = kink_free(
        || ModelProbe::new(model.clone(), labels.clone()),
        &[batch, 3, s, s],
        0.0,
        1.0,
        seed,
        eps,
    )?;
    Ok(CheckResult {
        name: format!("{}-{}-depth{}", config.arch, config.fusion, config.depth),
        report: grad_check(&mut probe, &x, eps)?,
    })
}

/// Every fusion kind on the gradient-check preset.
pub fn check_all_fusions(seed: u64, eps: f64) -> Result<Vec<CheckResult>> {
    FusionKind::ALL
        .iter()
        .map(|&k| {
            let mut c = ModelConfig::gradcheck(k);
            c.seed = seed;
            check_model(&c, 2, seed, eps, false)
        })
        .collect()
}
