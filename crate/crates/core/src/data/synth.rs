//! Synthetic eight-class images whose label is carried by one of three cue
//! families of increasing spatial scale:
//!
//! * low — a class hue tint plus a class stripe frequency, visible everywhere;
//! * mid — a bright square in one of the eight outer cells of a 3×3 grid;
//! * high — a large triangle (white apex, two dark base dots, circumradius
//!   0.3·S) pointing in one of eight directions at a random location. Each dot
//!   looks the same in every class; only their relative placement, spanning
//!   about half the image, is informative.
//!
//! Each sample draws one family according to `cue_mix`; the other two are absent.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{default_class_names, Dataset, Sample};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::rng::Rng;
use crate::scalar::Scalar;

const CLASSES: usize = 8;
const BACKGROUND: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CueMix {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl CueMix {
    pub const BALANCED: CueMix = CueMix {
        low: 1.0 / 3.0,
        mid: 1.0 / 3.0,
        high: 1.0 / 3.0,
    };

    pub fn new(low: f64, mid: f64, high: f64) -> Self {
        Self { low, mid, high }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.low, self.mid, self.high];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(format!("cue_mix weights must be non-negative: {w:?}")));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("cue_mix must sum to 1: {w:?}")));
        }
        Ok(())
    }
}

impl std::str::FromStr for CueMix {
    type Err = Error;

    /// `"low,mid,high"`, e.g. `"1,0,0"`; `"balanced"` is accepted too.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "balanced" {
            return Ok(Self::BALANCED);
        }
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidConfig(format!("cue_mix {s:?}: {e}")))?;
        let [low, mid, high] = parts[..] else {
            return Err(Error::InvalidConfig(format!("cue_mix {s:?} needs three weights")));
        };
        let mix = Self { low, mid, high };
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub image_size: usize,
    pub cue_mix: CueMix,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 800,
            image_size: 64,
            cue_mix: CueMix::BALANCED,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.cue_mix.validate()?;
        if self.image_size < 12 || self.image_size > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!(
                "image_size must be in 12..=65535, got {}",
                self.image_size
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise_sigma = {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cue {
    Low,
    Mid,
    High,
}

pub fn synth<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let samples = (0..spec.count)
        .map(|i| {
            let label = i % CLASSES;
            let mut rng = Rng::derive(spec.seed, "synth", i as u64);
            let u = rng.uniform();
            let cue = if u < spec.cue_mix.low {
                Cue::Low
            } else if u < spec.cue_mix.low + spec.cue_mix.mid {
                Cue::Mid
            } else {
                Cue::High
            };
            let pixels = render(spec.image_size, label, cue, spec.noise_sigma, &mut rng);
            Sample {
                image: Tensor::new([3, spec.image_size, spec.image_size], pixels)
                    .expect("rendered image has 3·S·S pixels")
                    .cast(),
                label,
                id: format!("synth-{}-{i:06}", spec.seed),
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        class_names: default_class_names(CLASSES),
    })
}

fn hue_rgb(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

fn render(s: usize, label: usize, cue: Cue, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    let plane = s * s;
    let mut img = vec![BACKGROUND; 3 * plane];
    let sf = s as f64;
    match cue {
        Cue::Low => {
            let rgb = hue_rgb(label as f64 / CLASSES as f64);
            let period = 3.0 + label as f64;
            let phase = rng.uniform() * 2.0 * PI;
            for y in 0..s {
                for x in 0..s {
                    let stripe = 0.12 * ((2.0 * PI * x as f64 / period) + phase).sin();
                    for c in 0..3 {
                        img[c * plane + y * s + x] = 0.5 + 0.3 * (rgb[c] - 0.5) + stripe;
                    }
                }
            }
        }
        Cue::Mid => {
            // the eight outer cells of a 3×3 grid, clockwise from top-left
            const CELLS: [(usize, usize); 8] =
                [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0)];
            let (gr, gc) = CELLS[label];
            let side = (s / 5).max(2);
            let cell = sf / 3.0;
            let jitter = |rng: &mut Rng| (rng.uniform() - 0.5) * cell * 0.3;
            let cy = (gr as f64 + 0.5) * cell + jitter(rng);
            let cx = (gc as f64 + 0.5) * cell + jitter(rng);
            let y0 = (cy - side as f64 / 2.0).round().clamp(0.0, (s - side) as f64) as usize;
            let x0 = (cx - side as f64 / 2.0).round().clamp(0.0, (s - side) as f64) as usize;
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    for c in 0..3 {
                        img[c * plane + y * s + x] = 1.0;
                    }
                }
            }
        }
        Cue::High => {
            // white apex and two dark base dots; the apex points at label·45°
            let radius = 0.3 * sf;
            let dot = (s / 24).max(1) as f64;
            let theta = label as f64 * PI / 4.0;
            let verts = [(0.0, 1.0), (0.75 * PI, 0.0), (1.25 * PI, 0.0)]
                .map(|(a, shade)| ((theta + a).sin() * radius, (theta + a).cos() * radius, shade));
            let (mut lo_y, mut hi_y, mut lo_x, mut hi_x) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for (dy, dx, _) in verts {
                lo_y = lo_y.min(-dy);
                hi_y = hi_y.max(-dy);
                lo_x = lo_x.min(dx);
                hi_x = hi_x.max(dx);
            }
            let pad = dot + 1.0;
            let cy = pad - lo_y + rng.uniform() * (sf - 2.0 * pad - (hi_y - lo_y)).max(0.0);
            let cx = pad - lo_x + rng.uniform() * (sf - 2.0 * pad - (hi_x - lo_x)).max(0.0);
            for (dy, dx, shade) in verts {
                let (py, px) = (cy - dy, cx + dx);
                for y in 0..s {
                    for x in 0..s {
                        if (y as f64 - py).abs() <= dot && (x as f64 - px).abs() <= dot {
                            for c in 0..3 {
                                img[c * plane + y * s + x] = shade;
                            }
                        }
                    }
                }
            }
        }
    }
    for v in &mut img {
        let noisy = if sigma > 0.0 { *v + sigma * rng.normal() } else { *v };
        *v = (noisy.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let spec = SynthSpec {
            count: 800,
            image_size: 16,
            noise_sigma: 0.0,
            seed: 4,
            ..SynthSpec::default()
        };
        let a = synth::<f64>(&spec).unwrap();
        assert_eq!(a, synth::<f64>(&spec).unwrap());
        let h = a.histogram();
        assert!(h.iter().all(|&c| c.abs_diff(100) <= 1), "{h:?}");
    }

    #[test]
    fn pixels_quantized_in_unit_range() {
        let spec = SynthSpec {
            count: 24,
            image_size: 20,
            noise_sigma: 0.3,
            ..SynthSpec::default()
        };
        let ds = synth::<f64>(&spec).unwrap();
        for s in &ds.samples {
            for &v in s.image.data() {
                assert!((0.0..=1.0).contains(&v));
                assert_eq!((v * 255.0).round() / 255.0, v);
            }
        }
    }

    #[test]
    fn rejects_bad_mix() {
        assert!("0.5,0.5,0.1".parse::<CueMix>().is_err());
        assert!("1,0".parse::<CueMix>().is_err());
        assert_eq!("1,0,0".parse::<CueMix>().unwrap(), CueMix::new(1.0, 0.0, 0.0));
        let spec = SynthSpec {
            cue_mix: CueMix::new(-0.5, 1.0, 0.5),
            ..SynthSpec::default()
        };
        assert!(synth::<f64>(&spec).is_err());
    }

    #[test]
    fn classes_differ_without_noise() {
        for cue in [Cue::Low, Cue::Mid, Cue::High] {
            let imgs: Vec<Vec<f64>> = (0..8)
                .map(|l| render(24, l, cue, 0.0, &mut Rng::new(9)))
                .collect();
            for a in 0..8 {
                for b in a + 1..8 {
                    assert_ne!(imgs[a], imgs[b], "{cue:?} {a} {b}");
                }
            }
        }
    }
}
