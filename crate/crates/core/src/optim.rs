//! SGD with momentum and coupled weight decay.
//!
//! Per parameter `θ` with gradient `g`:
//!
//! ```text
//! g ← g + weight_decay·θ
//! v ← momentum·v + g
//! θ ← θ − lr·v
//! ```
//!
//! and the gradient is zeroed afterwards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::nn::Param;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    StepDecay { factor: f64, every: usize },
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize, base_lr: f64) -> f64 {
        match *self {
            LrSchedule::Constant => base_lr,
            LrSchedule::StepDecay { factor, every } => {
                base_lr * factor.powi((epoch / every.max(1)) as i32)
            }
        }
    }
}

/// Learning rate at `epoch` under `policy`.
pub fn lr_schedule(epoch: usize, base_lr: f64, policy: LrSchedule) -> f64 {
    policy.lr(epoch, base_lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0005,
            schedule: LrSchedule::Constant,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if let LrSchedule::StepDecay { factor, every } = self.schedule {
            if every == 0 || !(factor > 0.0) {
                return Err(Error::InvalidConfig(
                    "step decay needs factor > 0 and every >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Optimiser state: configuration plus one velocity tensor per parameter name.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: BTreeMap::new(),
        })
    }

    pub fn velocity(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: BTreeMap<String, Tensor<T>>) {
        self.velocity = velocity;
    }

    /// One update at the configured base learning rate.
    pub fn step(&mut self, params: Vec<&mut Param<T>>) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, lr)
    }

    pub fn step_with_lr(&mut self, params: Vec<&mut Param<T>>, lr: f64) -> Result<()> {
        for p in &params {
            if p.grad.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd step (grad)",
                    left: p.value.shape().to_vec(),
                    right: p.grad.shape().to_vec(),
                });
            }
            if let Some(v) = self.velocity.get(&p.name) {
                if v.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "sgd step (velocity)",
                        left: p.value.shape().to_vec(),
                        right: v.shape().to_vec(),
                    });
                }
            }
        }
        let (lr, mu, wd) = (T::of(lr), T::of(self.config.momentum), T::of(self.config.weight_decay));
        for p in params {
            let v = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| p.value.zeros_like());
            let vs = v.data_mut();
            let gs = p.grad.data();
            for ((theta, vel), &g) in p.value.data_mut().iter_mut().zip(vs).zip(gs) {
                let g = g + wd * *theta;
                *vel = mu * *vel + g;
                *theta = *theta - lr * *vel;
            }
            p.zero_grad();
        }
        Ok(())
    }
}
