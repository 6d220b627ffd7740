use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::ReportFormat;
use crate::model::ModelConfig;
use crate::optim::{LrSchedule, SgdConfig};

/// Everything a training run needs, loadable from flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `constant` or `step_decay`.
    pub lr_policy: String,
    pub lr_factor: f64,
    pub lr_every: usize,
    /// Required: zero means "not set" and fails validation.
    pub epochs: usize,
    pub batch_size: usize,
    /// Single dataset split into train/test/val by `split`.
    pub data: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub split: (f64, f64, f64),
    /// Fraction of training labels replaced by a wrong class.
    pub noise_rate: f64,
    pub crops: bool,
    pub out_dir: PathBuf,
    pub report_format: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            model: ModelConfig::desk(),
            lr: sgd.lr,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            lr_policy: "constant".into(),
            lr_factor: 0.1,
            lr_every: 10,
            epochs: 0,
            batch_size: 64,
            data: None,
            train_data: None,
            val_data: None,
            test_data: None,
            split: (0.8, 0.15, 0.05),
            noise_rate: 0.0,
            crops: false,
            out_dir: PathBuf::from("runs"),
            report_format: ReportFormat::Csv,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn path_opt(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

impl RunConfig {
    pub fn sgd(&self) -> Result<SgdConfig> {
        let schedule = match self.lr_policy.as_str() {
            "constant" => LrSchedule::Constant,
            "step_decay" => LrSchedule::StepDecay {
                factor: self.lr_factor,
                every: self.lr_every,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "lr_policy must be constant or step_decay, got {other:?}"
                )))
            }
        };
        let cfg = SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.model.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sgd()?;
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidConfig(format!(
                "noise_rate must be in [0,1], got {}",
                self.noise_rate
            )));
        }
        crate::data::split_sizes(0, self.split)
            .map_err(|e| Error::InvalidConfig(format!("split: {e}")))?;
        Ok(())
    }

    /// Set one key. Model keys are forwarded to [`ModelConfig::apply`].
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "lr_policy" => self.lr_policy = value.trim().to_string(),
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "lr_every" => self.lr_every = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "data" => self.data = path_opt(value),
            "train_data" => self.train_data = path_opt(value),
            "val_data" => self.val_data = path_opt(value),
            "test_data" => self.test_data = path_opt(value),
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse(key, p))
                    .collect::<Result<_>>()?;
                let [a, b, c] = parts[..] else {
                    return Err(Error::InvalidConfig(format!("split needs three fractions, got {value:?}")));
                };
                self.split = (a, b, c);
            }
            "noise_rate" => self.noise_rate = parse(key, value)?,
            "crops" => self.crops = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "report_format" => self.report_format = value.trim().parse()?,
            _ => {
                if !self.model.apply(key, value)? {
                    return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value, got {line:?}", n + 1))
            })?;
            self.apply(k.trim(), v.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Every key in a fixed order; feeding these back through
    /// [`apply`](Self::apply) reproduces the configuration.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = self.model.to_kv();
        let (a, b, c) = self.split;
        kv.extend(
            [
                ("lr", self.lr.to_string()),
                ("momentum", self.momentum.to_string()),
                ("weight_decay", self.weight_decay.to_string()),
                ("lr_policy", self.lr_policy.clone()),
                ("lr_factor", self.lr_factor.to_string()),
                ("lr_every", self.lr_every.to_string()),
                ("epochs", self.epochs.to_string()),
                ("batch_size", self.batch_size.to_string()),
                ("data", path_str(&self.data)),
                ("train_data", path_str(&self.train_data)),
                ("val_data", path_str(&self.val_data)),
                ("test_data", path_str(&self.test_data)),
                ("split", format!("{a},{b},{c}")),
                ("noise_rate", self.noise_rate.to_string()),
                ("crops", self.crops.to_string()),
                ("out_dir", self.out_dir.display().to_string()),
                (
                    "report_format",
                    match self.report_format {
                        ReportFormat::Csv => "csv",
                        ReportFormat::JsonLines => "jsonl",
                    }
                    .into(),
                ),
            ]
            .map(|(k, v)| (k.to_string(), v)),
        );
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hash of everything that influences results (output location excluded).
    pub fn hash(&self) -> String {
        let kv: Vec<_> = self
            .to_kv()
            .into_iter()
            .filter(|(k, _)| k != "out_dir" && k != "report_format")
            .collect();
        crate::metrics::config_hash(&kv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("epochs = 5\n# comment\nlr_policy = step_decay\nlr_every = 3\ndepth = 3\nsplit = 0.7,0.2,0.1\ndata = a.mlds\n")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.model.trunk_channels.len(), 3);
        assert!(matches!(c.sgd().unwrap().schedule, LrSchedule::StepDecay { every: 3, .. }));
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_err(), "epochs unset");
        c.epochs = 1;
        c.validate().unwrap();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        assert!(c.apply("colour", "red").is_err());
        assert!(c.apply_text("epochs 3").is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let mut a = RunConfig::default();
        let b = RunConfig {
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        a.lr = 0.01;
        assert_ne!(a.hash(), b.hash());
    }
}
