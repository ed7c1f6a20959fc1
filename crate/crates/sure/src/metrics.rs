//! Accuracy, weighted F1, and per-class precision/recall from a confusion
//! matrix. Zero-denominator convention: precision, recall, and F1 are 0 when
//! their denominators are 0.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SureError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Row = gold label, column = prediction.
    pub confusion: Vec<Vec<usize>>,
}

pub fn compute_metrics(
    predictions: &[usize],
    gold_labels: &[usize],
    num_labels: usize,
) -> Result<MetricsReport> {
    if predictions.len() != gold_labels.len() || predictions.is_empty() {
        return Err(SureError::InvalidArgument(format!(
            "metrics need equal non-empty prediction/gold lengths, got {} and {}",
            predictions.len(),
            gold_labels.len()
        )));
    }
    for (&p, &g) in predictions.iter().zip(gold_labels) {
        if p >= num_labels || g >= num_labels {
            return Err(SureError::InvalidArgument(format!(
                "label out of range [0,{num_labels}): pred {p}, gold {g}"
            )));
        }
    }

    let mut confusion = vec![vec![0usize; num_labels]; num_labels];
    for (&p, &g) in predictions.iter().zip(gold_labels) {
        confusion[g][p] += 1;
    }

    let total = predictions.len();
    let correct: usize = (0..num_labels).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / total as f64;

    let mut per_class = Vec::with_capacity(num_labels);
    let mut weighted_f1 = 0.0;
    for c in 0..num_labels {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..num_labels).map(|g| confusion[g][c]).sum();
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted_f1 += support as f64 / total as f64 * f1;
        per_class.push(ClassMetrics {
            label: c,
            precision,
            recall,
            f1,
            support,
        });
    }

    Ok(MetricsReport {
        accuracy,
        weighted_f1,
        per_class,
        confusion,
    })
}
