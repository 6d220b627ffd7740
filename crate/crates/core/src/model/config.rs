use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::ndcore::{conv_output_size, pool_output_size};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mldrnet,
    AlexnetLike,
    Acnn,
    Tcnn,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Mldrnet => "mldrnet",
            Arch::AlexnetLike => "alexnet_like",
            Arch::Acnn => "acnn",
            Arch::Tcnn => "tcnn",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Arch::Mldrnet, Arch::AlexnetLike, Arch::Acnn, Arch::Tcnn]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown arch {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Number of trunk stages and branches (MldrNet only), 2..=6.
    pub depth: usize,
    pub fusion: FusionKind,
    pub n_classes: usize,
    /// Square input side length.
    pub input_size: usize,
    /// Output channels of each trunk stage; exactly `depth` entries.
    pub trunk_channels: Vec<usize>,
    pub branch_hidden: usize,
    pub reduce_channels: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Baselines divide their reference channel and FC widths by this.
    pub width_divisor: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One row of the trunk shape trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub stage: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub channels: usize,
    pub input: usize,
    pub conv_out: usize,
    /// `None` when the map is already smaller than the pooling window.
    pub pooled: Option<usize>,
}

impl StageShape {
    pub fn output(&self) -> usize {
        self.pooled.unwrap_or(self.conv_out)
    }
}

impl fmt::Display for StageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage {}: {}x{} conv /{} pad {} -> {}ch {}x{}",
            self.stage, self.kernel, self.kernel, self.stride, self.pad, self.channels, self.conv_out, self.conv_out
        )?;
        match self.pooled {
            Some(p) => write!(f, " -> pool {p}x{p}"),
            None => write!(f, " (no pool)"),
        }
    }
}

/// Reference trunk widths for the full-scale preset.
const FULL_TRUNK: [usize; 6] = [96, 256, 384, 384, 384, 384];

impl ModelConfig {
    /// 64×64 inputs, channels `[16,32,32,32]`.
    pub fn desk() -> Self {
        Self {
            arch: Arch::Mldrnet,
            depth: 4,
            fusion: FusionKind::Mean,
            n_classes: 8,
            input_size: 64,
            trunk_channels: vec![16, 32, 32, 32],
            branch_hidden: 128,
            reduce_channels: 128,
            dropout_rate: 0.0,
            seed: 0,
            width_divisor: 8,
        }
    }

    /// 375×375 crops with AlexNet-sized trunk widths. Not meant for training here.
    pub fn full_scale() -> Self {
        Self {
            input_size: 375,
            trunk_channels: FULL_TRUNK[..4].to_vec(),
            width_divisor: 1,
            ..Self::desk()
        }
    }

    /// Small enough that a central-difference check over every parameter
    /// and input element runs in seconds.
    pub fn gradcheck(fusion: FusionKind) -> Self {
        Self {
            fusion,
            input_size: 32,
            trunk_channels: vec![3, 4, 4, 4],
            branch_hidden: 6,
            reduce_channels: 5,
            ..Self::desk()
        }
    }

    /// Sets `depth`, extending or truncating `trunk_channels` by repeating the last width.
    pub fn with_depth(mut self, depth: usize) -> Self {
        let last = *self.trunk_channels.last().unwrap_or(&32);
        self.trunk_channels.resize(depth, last);
        self.depth = depth;
        self
    }

    /// Stride of the first (11×11) convolution.
    pub fn first_stride(&self) -> usize {
        if self.input_size >= 224 {
            4
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_classes must be >= 2, got {}",
                self.n_classes
            )));
        }
        if self.input_size == 0 {
            return Err(Error::InvalidConfig("input_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if self.width_divisor == 0 {
            return Err(Error::InvalidConfig("width_divisor must be positive".into()));
        }
        if self.arch == Arch::Mldrnet {
            if !(2..=6).contains(&self.depth) {
                return Err(Error::InvalidConfig(format!(
                    "depth must be in 2..=6, got {}",
                    self.depth
                )));
            }
            if self.trunk_channels.len() != self.depth {
                return Err(Error::InvalidConfig(format!(
                    "trunk_channels has {} entries, depth is {}",
                    self.trunk_channels.len(),
                    self.depth
                )));
            }
            if self.trunk_channels.contains(&0) || self.branch_hidden == 0 || self.reduce_channels == 0 {
                return Err(Error::InvalidConfig("layer widths must be positive".into()));
            }
            self.shape_trace()?;
        }
        Ok(())
    }

    /// Per-stage spatial sizes of the MldrNet trunk.
    pub fn shape_trace(&self) -> Result<Vec<StageShape>> {
        let mut rows = Vec::with_capacity(self.depth);
        let mut size = self.input_size;
        let mut trace = Vec::new();
        for (stage, &channels) in self.trunk_channels.iter().enumerate() {
            let (kernel, stride, pad) = if stage == 0 {
                (11, self.first_stride(), 2)
            } else {
                (5, 1, 2)
            };
            let conv_out = match conv_output_size(size, kernel, stride, pad) {
                Ok(v) => v,
                Err(_) => {
                    trace.push(format!("stage {}: {size} < kernel {kernel}", stage + 1));
                    return Err(Error::SpatialUnderflow(format!(
                        "input {} with depth {}: {}",
                        self.input_size,
                        self.depth,
                        trace.join(", ")
                    )));
                }
            };
            let pooled = pool_output_size(conv_out, 2, 2).ok();
            let row = StageShape {
                stage: stage + 1,
                kernel,
                stride,
                pad,
                channels,
                input: size,
                conv_out,
                pooled,
            };
            trace.push(format!("stage {}: {} -> {}", stage + 1, size, row.output()));
            size = row.output();
            rows.push(row);
        }
        Ok(rows)
    }

    /// Stable `key=value` rendering, one per line.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("arch".into(), self.arch.to_string()),
            ("depth".into(), self.depth.to_string()),
            ("fusion".into(), self.fusion.to_string()),
            ("n_classes".into(), self.n_classes.to_string()),
            ("input_size".into(), self.input_size.to_string()),
            (
                "trunk_channels".into(),
                self.trunk_channels
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("branch_hidden".into(), self.branch_hidden.to_string()),
            ("reduce_channels".into(), self.reduce_channels.to_string()),
            ("dropout_rate".into(), self.dropout_rate.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("width_divisor".into(), self.width_divisor.to_string()),
        ]
    }

    /// Applies one `key=value` setting. Returns `false` for keys this struct does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "arch" => self.arch = value.trim().parse()?,
            "depth" => {
                let d: usize = num(key, value)?;
                *self = self.clone().with_depth(d);
            }
            "fusion" => {
                self.fusion = value
                    .trim()
                    .parse()
                    .map_err(|e: Error| Error::InvalidConfig(e.to_string()))?
            }
            "n_classes" => self.n_classes = num(key, value)?,
            "input_size" => self.input_size = num(key, value)?,
            "trunk_channels" => {
                self.trunk_channels = value
                    .split(',')
                    .map(|v| num(key, v))
                    .collect::<Result<_>>()?;
            }
            "branch_hidden" => self.branch_hidden = num(key, value)?,
            "reduce_channels" => self.reduce_channels = num(key, value)?,
            "dropout_rate" => self.dropout_rate = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "width_divisor" => self.width_divisor = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_trace() {
        let rows = ModelConfig::desk().shape_trace().unwrap();
        let sizes: Vec<_> = rows.iter().map(|r| (r.conv_out, r.pooled)).collect();
        assert_eq!(sizes, vec![(29, Some(14)), (14, Some(7)), (7, Some(3)), (3, Some(1))]);
    }

    #[test]
    fn deep_desk_models_skip_pooling_at_one_pixel() {
        let rows = ModelConfig::desk().with_depth(6).shape_trace().unwrap();
        assert_eq!(rows[4].conv_out, 1);
        assert_eq!(rows[4].pooled, None);
        assert_eq!(rows[5].output(), 1);
    }

    #[test]
    fn full_scale_trace_uses_stride_four() {
        let rows = ModelConfig::full_scale().shape_trace().unwrap();
        assert_eq!(rows[0].stride, 4);
        assert_eq!(rows[0].conv_out, 93);
        assert_eq!(rows.last().unwrap().output(), 5);
    }

    #[test]
    fn depth_range_and_underflow() {
        let mut c = ModelConfig::desk();
        c.depth = 7;
        c.trunk_channels = vec![8; 7];
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut tiny = ModelConfig::desk();
        tiny.input_size = 4;
        let err = tiny.validate().unwrap_err();
        assert!(matches!(err, Error::SpatialUnderflow(_)));
        assert!(err.to_string().contains("stage 1"));
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::desk();
        c.fusion = FusionKind::Max;
        c.seed = 99;
        let mut d = ModelConfig::full_scale();
        for (k, v) in c.to_kv() {
            assert!(d.apply(&k, &v).unwrap(), "{k}");
        }
        assert_eq!(c, d);
        assert!(!d.apply("lr", "0.1").unwrap());
        assert!(d.apply("depth", "x").is_err());
    }
}
