//! Labelled image datasets, the record file format, evaluation protocols
//! (splits, label noise, folds, one-vs-all, crops) and a synthetic generator.

mod io;
mod protocol;
mod synth;

pub use io::{decode, encode, load, store, DATASET_MAGIC, DATASET_VERSION};
pub use protocol::{
    crops, crop_at, kfold, make_noisy, one_vs_all, relabel_noise, split, split_sizes, CropPosition,
};
pub use synth::{synth, CueMix, SynthSpec};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

/// The eight emotion categories, positive then negative.
pub const EMOTIONS: [&str; 8] = [
    "Amusement",
    "Awe",
    "Contentment",
    "Excitement",
    "Anger",
    "Disgust",
    "Fear",
    "Sadness",
];

/// Default class names for `n` classes.
pub fn default_class_names(n: usize) -> Vec<String> {
    match n {
        8 => EMOTIONS.iter().map(|s| s.to_string()).collect(),
        _ => (0..n).map(|i| format!("class{i}")).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor<T>,
    pub label: usize,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    pub class_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(samples: Vec<Sample<T>>, class_names: Vec<String>) -> Result<Self> {
        let ds = Self {
            samples,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(n_classes: usize) -> Self {
        Self {
            samples: vec![],
            class_names: default_class_names(n_classes),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes();
        for s in &self.samples {
            if s.label >= n {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    n_classes: n,
                });
            }
            if s.image.rank() != 3 || s.image.shape()[0] != 3 {
                return Err(Error::InvalidArgument(format!(
                    "sample {} image must be [3,H,W], got {:?}",
                    s.id,
                    s.image.shape()
                )));
            }
            if s
                .image
                .data()
                .iter()
                .any(|v| !(*v >= T::zero() && *v <= T::one()))
            {
                return Err(Error::InvalidArgument(format!(
                    "sample {} has pixels outside [0,1]",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `(H, W)` shared by every sample, `None` when empty.
    pub fn image_size(&self) -> Result<Option<(usize, usize)>> {
        let Some(first) = self.samples.first() else {
            return Ok(None);
        };
        let hw = (first.image.shape()[1], first.image.shape()[2]);
        if let Some(bad) = self
            .samples
            .iter()
            .find(|s| (s.image.shape()[1], s.image.shape()[2]) != hw)
        {
            return Err(Error::InvalidArgument(format!(
                "sample {} is {:?}, expected [3,{},{}]",
                bad.id,
                bad.image.shape(),
                hw.0,
                hw.1
            )));
        }
        Ok(Some(hw))
    }

    /// Per-class sample counts.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes()];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// New dataset of the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }
}
