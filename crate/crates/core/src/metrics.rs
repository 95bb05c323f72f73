//! Accuracy, class-wise precision/recall/F1 and the confusion matrix.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    #[serde(rename = "f1_per_class")]
    pub f1: Vec<f64>,
    pub f1_weighted: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub n_utterances: u64,
}

impl Metrics {
    /// Scores `predictions` against `labels`. Both must have equal length and
    /// hold class ids below `num_classes`.
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::contract("prediction and label counts differ"));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p >= num_classes || y >= num_classes {
                return Err(Error::contract(alloc::format!(
                    "class id out of range for {num_classes} classes"
                )));
            }
            confusion[y][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let c = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };

        let mut precision = Vec::with_capacity(c);
        let mut recall = Vec::with_capacity(c);
        let mut f1 = Vec::with_capacity(c);
        let mut weighted = 0.0;
        for k in 0..c {
            let tp = confusion[k][k];
            let predicted: u64 = (0..c).map(|i| confusion[i][k]).sum();
            let support: u64 = confusion[k].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, support);
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            precision.push(p);
            recall.push(r);
            f1.push(f);
            weighted += f * support as f64;
        }
        Metrics {
            accuracy: ratio(correct, total),
            precision,
            recall,
            f1,
            f1_weighted: if total == 0 { 0.0 } else { weighted / total as f64 },
            confusion,
            n_utterances: total,
        }
    }
}
