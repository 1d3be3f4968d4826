//! Class and sample weights for imbalanced training sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing added to the class-weight denominator in the multi-label case.
pub const MULTILABEL_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub class_weights: Vec<f64>,
    pub sample_weights: Vec<f64>,
    pub epsilon: f64,
}

/// `w_k = n / (K * f_k + epsilon)`, with `K = counts.len()`.
///
/// Without smoothing (`epsilon == 0`) an empty class is an error.
pub fn class_weights(counts: &[usize], n: usize, epsilon: f64) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no classes to weight".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!("negative smoothing {epsilon}")));
    }
    let k = counts.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(class, &f)| {
            let denom = k * f as f64 + epsilon;
            if denom == 0.0 {
                Err(Error::Numeric(format!(
                    "class {class} has no samples; its weight is undefined without smoothing"
                )))
            } else {
                Ok(n as f64 / denom)
            }
        })
        .collect()
}

/// `s_i = max over the sample's classes of w_k`; samples without any label
/// get weight 1.
pub fn sample_weights(label_sets: &[Vec<usize>], class_weights: &[f64]) -> Result<Vec<f64>> {
    label_sets
        .iter()
        .enumerate()
        .map(|(i, labels)| {
            labels
                .iter()
                .map(|&k| {
                    class_weights.get(k).copied().ok_or_else(|| {
                        Error::InvalidInput(format!("sample {i} has unknown class {k}"))
                    })
                })
                .try_fold(None::<f64>, |acc, w| {
                    let w = w?;
                    Ok(Some(acc.map_or(w, |a| a.max(w))))
                })
                .map(|m| m.unwrap_or(1.0))
        })
        .collect()
}
