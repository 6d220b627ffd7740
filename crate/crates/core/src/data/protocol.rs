use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Partition sizes for `count` samples: test and validation get
/// `floor(count·f)` (at least one when `f > 0` and samples remain), train
/// absorbs the remainder.
pub fn split_sizes(count: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, te, va) = fractions;
    if [tr, te, va].iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    if (tr + te + va - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {}",
            tr + te + va
        )));
    }
    let part = |f: f64, left: usize| -> usize {
        if f == 0.0 {
            return 0;
        }
        ((count as f64 * f + 1e-9).floor() as usize).max(1).min(left)
    };
    let test = part(te, count);
    let val = part(va, count - test);
    Ok((count - test - val, test, val))
}

/// Seeded shuffle then cut into (train, test, val).
pub fn split<T: Scalar>(
    ds: &Dataset<T>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>, Dataset<T>)> {
    let (n_train, n_test, _) = split_sizes(ds.len(), fractions)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::derive(seed, "split", 0).shuffle(&mut order);
    let (train, rest) = order.split_at(n_train);
    let (test, val) = rest.split_at(n_test);
    Ok((ds.subset(train), ds.subset(test), ds.subset(val)))
}

/// Append an extra (noisily labelled) set to a clean training set.
pub fn make_noisy<T: Scalar>(well: &Dataset<T>, extra: &Dataset<T>) -> Result<Dataset<T>> {
    if well.class_names != extra.class_names {
        return Err(Error::ClassMismatch(format!(
            "{:?} vs {:?}",
            well.class_names, extra.class_names
        )));
    }
    let mut samples = well.samples.clone();
    samples.extend(extra.samples.iter().cloned());
    Ok(Dataset {
        samples,
        class_names: well.class_names.clone(),
    })
}

/// Relabel exactly `round(rate·count)` randomly chosen samples to a uniformly
/// drawn wrong class. Returns the new dataset and the changed indices (sorted).
pub fn relabel_noise<T: Scalar>(
    ds: &Dataset<T>,
    rate: f64,
    seed: u64,
) -> Result<(Dataset<T>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("noise rate {rate} outside [0,1]")));
    }
    let n = ds.n_classes();
    if n < 2 && rate > 0.0 {
        return Err(Error::InvalidArgument("label noise needs at least 2 classes".into()));
    }
    let flips = (rate * ds.len() as f64).round() as usize;
    let mut rng = Rng::derive(seed, "label-noise", 0);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    rng.shuffle(&mut order);
    let mut changed = order[..flips].to_vec();
    changed.sort_unstable();
    let mut out = ds.clone();
    for &i in &changed {
        let s = &mut out.samples[i];
        let shift = 1 + rng.below(n - 1);
        s.label = (s.label + shift) % n;
    }
    Ok((out, changed))
}

/// `k` (train, test) pairs; fold `i` is the test set of pair `i`. The first
/// `count % k` folds hold one extra sample.
pub fn kfold<T: Scalar>(
    ds: &Dataset<T>,
    k: usize,
    seed: u64,
) -> Result<Vec<(Dataset<T>, Dataset<T>)>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > ds.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} available samples",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::derive(seed, "kfold", 0).shuffle(&mut order);
    let (base, extra) = (ds.len() / k, ds.len() % k);
    let mut bounds = vec![0];
    for i in 0..k {
        bounds.push(bounds[i] + base + usize::from(i < extra));
    }
    Ok((0..k)
        .map(|i| {
            let test = &order[bounds[i]..bounds[i + 1]];
            let train: Vec<usize> = order[..bounds[i]]
                .iter()
                .chain(&order[bounds[i + 1]..])
                .copied()
                .collect();
            (ds.subset(&train), ds.subset(test))
        })
        .collect())
}

/// Binary relabelling: 1 for `positive`, 0 otherwise.
pub fn one_vs_all<T: Scalar>(ds: &Dataset<T>, positive: usize) -> Result<Dataset<T>> {
    if positive >= ds.n_classes() {
        return Err(Error::LabelOutOfRange {
            label: positive,
            n_classes: ds.n_classes(),
        });
    }
    let name = ds.class_names[positive].clone();
    Ok(Dataset {
        samples: ds
            .samples
            .iter()
            .map(|s| Sample {
                label: usize::from(s.label == positive),
                ..s.clone()
            })
            .collect(),
        class_names: vec![format!("not {name}"), name],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropPosition {
    Center,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl CropPosition {
    pub const ALL: [CropPosition; 5] = [
        CropPosition::Center,
        CropPosition::TopLeft,
        CropPosition::TopRight,
        CropPosition::BottomLeft,
        CropPosition::BottomRight,
    ];

    /// Top-left offset `(row, col)` of a `crop` window in an `h`×`w` image.
    pub fn offset(self, h: usize, w: usize, crop: usize) -> (usize, usize) {
        match self {
            CropPosition::Center => ((h - crop) / 2, (w - crop) / 2),
            CropPosition::TopLeft => (0, 0),
            CropPosition::TopRight => (0, w - crop),
            CropPosition::BottomLeft => (h - crop, 0),
            CropPosition::BottomRight => (h - crop, w - crop),
        }
    }
}

/// Square crop of a `[C,H,W]` image.
pub fn crop_at<T: Scalar>(image: &Tensor<T>, crop: usize, pos: CropPosition) -> Result<Tensor<T>> {
    if image.rank() != 3 {
        return Err(Error::InvalidArgument(format!(
            "crop expects [C,H,W], got {:?}",
            image.shape()
        )));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if crop == 0 || crop > h || crop > w {
        return Err(Error::InvalidArgument(format!(
            "crop size {crop} does not fit a {h}x{w} image"
        )));
    }
    let (r0, c0) = pos.offset(h, w, crop);
    let src = image.data();
    let mut out = Vec::with_capacity(c * crop * crop);
    for ch in 0..c {
        for r in r0..r0 + crop {
            let row = (ch * h + r) * w;
            out.extend_from_slice(&src[row + c0..row + c0 + crop]);
        }
    }
    Tensor::new([c, crop, crop], out)
}

/// Center crop followed by the four corners.
pub fn crops<T: Scalar>(image: &Tensor<T>, crop: usize) -> Result<Vec<Tensor<T>>> {
    CropPosition::ALL
        .iter()
        .map(|&p| crop_at(image, crop, p))
        .collect()
}
