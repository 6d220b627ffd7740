use std::path::Path;

use crate::data::{crop_at, CropPosition, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EpochLog};
use crate::model::{self, Checkpoint, Model, ModelConfig};
use crate::ndcore::Tensor;
use crate::nn::{softmax_cross_entropy, Mode};
use crate::optim::{Sgd, SgdConfig};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Mini-batch SGD over a dataset, one epoch at a time.
///
/// Each epoch visits the training set in an order drawn from
/// `derive(seed, "shuffle", epoch)`; the last partial batch is kept. Since the
/// order depends only on the epoch index and dropout draws come from the
/// model's own generator (saved in checkpoints), a run resumed from a
/// checkpoint follows the uninterrupted trajectory exactly.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub optimizer: Sgd<T>,
    pub batch_size: usize,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: ModelConfig, sgd: SgdConfig, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(Self {
            model: Model::build(config)?,
            optimizer: Sgd::new(sgd)?,
            batch_size,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint<T>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(Self {
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            batch_size,
            epoch: ckpt.epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        model::save(&self.model, &self.optimizer, self.epoch, path)
    }

    /// Train one epoch, then evaluate on `val` if given.
    pub fn train_epoch(&mut self, train: &Dataset<T>, val: Option<&Dataset<T>>) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if train.n_classes() != self.model.n_classes() {
            return Err(Error::ClassMismatch(format!(
                "model predicts {} classes, training set has {}",
                self.model.n_classes(),
                train.n_classes()
            )));
        }
        let epoch = self.epoch;
        let seed = self.model.config().seed;
        let lr = self.optimizer.config.schedule.lr(epoch, self.optimizer.config.lr);
        let size = self.model.config().input_size;

        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::derive(seed, "shuffle", epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(self.batch_size).enumerate() {
            let cropped: Vec<Tensor<T>>;
            let images: Vec<&Tensor<T>> = if train.samples[idx[0]].image.shape()[1] == size {
                idx.iter().map(|&i| &train.samples[i].image).collect()
            } else {
                cropped = idx
                    .iter()
                    .map(|&i| crop_at(&train.samples[i].image, size, CropPosition::Center))
                    .collect::<Result<_>>()?;
                cropped.iter().collect()
            };
            let batch = Tensor::stack(&images)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.samples[i].label).collect();

            let out = self.model.forward(&batch, Mode::Train)?;
            let ce = softmax_cross_entropy(&out.fused_logits, &labels)?;
            let loss = ce.loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "epoch {epoch}, batch {b} (samples {}..{} of the shuffled order): loss = {loss}",
                    b * self.batch_size,
                    b * self.batch_size + idx.len()
                )));
            }
            loss_sum += loss * idx.len() as f64;
            correct += out
                .fused_logits
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            self.model.backward(&ce.grad_logits)?;
            self.optimizer.step_with_lr(self.model.params_mut(), lr)?;
        }
        self.epoch += 1;

        let (val_loss, val_acc) = match val {
            Some(v) if !v.is_empty() => {
                let e = evaluate(&mut self.model, v, false)?;
                (Some(e.loss), Some(e.accuracy))
            }
            _ => (None, None),
        };
        Ok(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
        })
    }

    /// Train until `epochs` epochs have completed in total, calling
    /// `on_epoch` after each.
    pub fn fit(
        &mut self,
        train: &Dataset<T>,
        val: Option<&Dataset<T>>,
        epochs: usize,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < epochs {
            let log = self.train_epoch(train, val)?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}
