//! Confusion matrices, accuracy, per-class true positive rate and run reports.

mod report;

pub use report::{
    config_hash, parse_report, read_report, write_report, AblationRow, EpochLog, Report,
    ReportFormat,
};

use serde::{Deserialize, Serialize};

use crate::data::{crop_at, CropPosition, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ndcore::Tensor;
use crate::nn::{softmax, Mode};
use crate::scalar::Scalar;

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(Self {
            n,
            counts: rows.concat(),
        })
    }

    pub fn from_predictions(n: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(n);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.n {
                return Err(Error::LabelOutOfRange {
                    label,
                    n_classes: self.n,
                });
            }
        }
        self.counts[truth * self.n + predicted] += 1;
        Ok(())
    }

    /// Element-wise sum, e.g. of shards evaluated separately.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::ClassMismatch(format!("{} vs {} classes", self.n, other.n)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).sum())
            .collect()
    }

    /// `trace / total`; zero for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Per-class recall; `None` for classes with no samples.
    pub fn tpr_per_class(&self) -> Vec<Option<f64>> {
        tpr_per_class(self)
    }

    /// Mean TPR over classes that have samples.
    pub fn mean_tpr(&self) -> Option<f64> {
        let defined: Vec<f64> = self.tpr_per_class().into_iter().flatten().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

pub fn tpr_per_class(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.row_sums()
        .iter()
        .enumerate()
        .map(|(i, &s)| (s > 0).then(|| cm.get(i, i) as f64 / s as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean cross-entropy of the (crop-averaged) probabilities.
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

const EVAL_BATCH: usize = 64;

/// Evaluate in inference mode. Images larger than the model input are
/// center-cropped, or with `use_crops` averaged in probability space over the
/// center and four corner crops.
pub fn evaluate<T: Scalar>(
    model: &mut Model<T>,
    dataset: &Dataset<T>,
    use_crops: bool,
) -> Result<Evaluation> {
    let n = model.n_classes();
    if n != dataset.n_classes() {
        return Err(Error::ClassMismatch(format!(
            "model predicts {n} classes, dataset has {}",
            dataset.n_classes()
        )));
    }
    let size = model.config().input_size;
    let positions: &[CropPosition] = if use_crops {
        &CropPosition::ALL
    } else {
        &CropPosition::ALL[..1]
    };
    let mut cm = ConfusionMatrix::new(n);
    let mut loss = 0.0;
    for chunk in dataset.samples.chunks(EVAL_BATCH) {
        let mut probs = vec![0.0; chunk.len() * n];
        for &pos in positions {
            let crops = chunk
                .iter()
                .map(|s| crop_at(&s.image, size, pos))
                .collect::<Result<Vec<_>>>()?;
            let batch = Tensor::stack(&crops.iter().collect::<Vec<_>>())?;
            let out = model.forward(&batch, Mode::Eval)?;
            for (acc, p) in probs.iter_mut().zip(softmax(&out.fused_logits)?.data()) {
                *acc += p.as_f64();
            }
        }
        for (row, s) in probs.chunks(n).zip(chunk) {
            let avg: Vec<f64> = row.iter().map(|p| p / positions.len() as f64).collect();
            loss -= avg[s.label].max(f64::MIN_POSITIVE).ln();
            let pred = argmax(&avg);
            cm.add(s.label, pred)?;
        }
    }
    Ok(Evaluation {
        accuracy: cm.accuracy(),
        loss: if dataset.is_empty() { 0.0 } else { loss / dataset.len() as f64 },
        confusion: cm,
    })
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tpr_examples() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
        assert_eq!(cm.tpr_per_class(), vec![Some(0.75), Some(4.0 / 6.0)]);
        assert_eq!(cm.accuracy(), 0.7);
        let empty_row = ConfusionMatrix::from_rows(&[vec![2, 0], vec![0, 0]]).unwrap();
        assert_eq!(empty_row.tpr_per_class(), vec![Some(1.0), None]);
        assert_eq!(empty_row.mean_tpr(), Some(1.0));
    }

    #[test]
    fn constant_predictor_on_uniform_set() {
        let truth: Vec<usize> = (0..80).map(|i| i % 8).collect();
        let cm = ConfusionMatrix::from_predictions(8, &truth, &[3; 80]).unwrap();
        assert_eq!(cm.accuracy(), 0.125);
        assert_eq!(cm.row_sums(), vec![10; 8]);
        let perfect = ConfusionMatrix::from_predictions(8, &truth, &truth).unwrap();
        assert_eq!(perfect.accuracy(), 1.0);
        assert!(perfect.tpr_per_class().iter().all(|t| *t == Some(1.0)));
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = ConfusionMatrix::from_predictions(3, &[0, 1], &[0, 2]).unwrap();
        let b = ConfusionMatrix::from_predictions(3, &[2], &[2]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.total(), 3);
        assert_eq!(a.trace(), 2);
        assert!(a.merge(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.125; 8]), 0);
    }
}
