use std::fmt;
use std::str::FromStr;

use super::{RunConfig, Trainer};
use crate::data::{relabel_noise, Dataset};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::metrics::{evaluate, AblationRow, Report};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    /// Number of trunk stages / branches.
    Depth,
    Fusion,
    /// Training-label noise rate.
    Noise,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Depth => "depth",
            AblationAxis::Fusion => "fusion",
            AblationAxis::Noise => "noise",
        }
    }

    /// Depth 2..=6, all four fusions, or clean vs. the configured noise rate
    /// (0.25 when none is configured).
    pub fn default_variants(self, base: &RunConfig) -> Vec<String> {
        match self {
            AblationAxis::Depth => (2..=6).map(|d| d.to_string()).collect(),
            AblationAxis::Fusion => FusionKind::ALL.iter().map(|k| k.to_string()).collect(),
            AblationAxis::Noise => {
                let r = if base.noise_rate > 0.0 { base.noise_rate } else { 0.25 };
                vec!["0".into(), r.to_string()]
            }
        }
    }

    /// The run configuration of one variant.
    pub fn configure(self, base: &RunConfig, variant: &str) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            AblationAxis::Depth => {
                let d: usize = variant
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("depth variant {variant:?}")))?;
                cfg.model = cfg.model.with_depth(d);
            }
            AblationAxis::Fusion => cfg.model.fusion = variant.parse()?,
            AblationAxis::Noise => {
                cfg.noise_rate = variant
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("noise variant {variant:?}")))?
            }
        }
        cfg.validate()
            .map_err(|e| Error::InvalidConfig(format!("{} = {variant}: {e}", self.name())))?;
        Ok(cfg)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(Self::Depth),
            "fusion" => Ok(Self::Fusion),
            "noise" => Ok(Self::Noise),
            _ => Err(Error::InvalidArgument(format!(
                "ablation axis must be depth, fusion or noise, got {s:?}"
            ))),
        }
    }
}

/// Train one model per variant under the same seed and epoch budget and
/// tabulate test accuracy. Label noise (if any) is applied to the training
/// set only, with the run seed. All variants are validated before training.
pub fn ablate<T: Scalar>(
    axis: AblationAxis,
    variants: &[String],
    base: &RunConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Report> {
    if variants.is_empty() {
        return Err(Error::InvalidArgument("no ablation variants".into()));
    }
    let configs = variants
        .iter()
        .map(|v| axis.configure(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(configs.len());
    for (variant, cfg) in variants.iter().zip(&configs) {
        let noisy;
        let train_set = if cfg.noise_rate > 0.0 {
            noisy = relabel_noise(train, cfg.noise_rate, cfg.seed())?.0;
            &noisy
        } else {
            train
        };
        let mut trainer = Trainer::<T>::new(cfg.model.clone(), cfg.sgd()?, cfg.batch_size)?;
        trainer.fit(train_set, None, cfg.epochs, |_| {})?;
        let train_eval = evaluate(&mut trainer.model, train_set, false)?;
        let test_eval = evaluate(&mut trainer.model, test, cfg.crops)?;
        let row = AblationRow {
            axis: axis.name().into(),
            variant: variant.clone(),
            seed: cfg.seed(),
            config_hash: cfg.hash(),
            train_acc: train_eval.accuracy,
            test_acc: test_eval.accuracy,
            test_loss: test_eval.loss,
        };
        on_row(&row);
        rows.push(row);
    }
    let mut config = base.to_kv();
    config.push(("axis".into(), axis.name().into()));
    config.push(("variants".into(), variants.join(",")));
    Ok(Report {
        kind: format!("ablate-{axis}"),
        config_hash: base.hash(),
        seed: base.seed(),
        config,
        class_names: train.class_names.clone(),
        rows,
        ..Report::default()
    })
}
