//! Test-set summaries for trained heads: point metrics plus a bootstrap of
//! each metric over the test samples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap, BootstrapReport};
use super::metrics::{confusion_metrics, roc_auc, BinaryConfusion, ClassificationMetrics};
use super::ranking::{multilabel_map, MapReport};
use crate::classify::micro_f1;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryArReport {
    pub threshold: f64,
    pub n_test: usize,
    pub n_positive: usize,
    pub confusion: BinaryConfusion,
    pub metrics: ClassificationMetrics,
    /// `None` when the test set holds a single class.
    pub roc_auc: Option<f64>,
    /// Keyed by metric name: accuracy, precision, recall, f1, roc_auc.
    pub bootstrap: BTreeMap<String, BootstrapReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilabelArReport {
    pub threshold: f64,
    pub n_test: usize,
    pub map: MapReport,
    pub micro_f1: f64,
    /// Keyed by metric name: map, micro_f1.
    pub bootstrap: BTreeMap<String, BootstrapReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum ArReport {
    Binary(BinaryArReport),
    Multilabel(MultilabelArReport),
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Metrics of `scores >= threshold` against `labels`, each bootstrapped
/// `resamples` times with the same seed.
pub fn evaluate_binary(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    resamples: usize,
    seed: u64,
) -> Result<BinaryArReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let metrics_on = |idx: &[usize]| -> Result<ClassificationMetrics> {
        let predicted: Vec<bool> = idx.iter().map(|&i| scores[i] >= threshold).collect();
        confusion_metrics(&BinaryConfusion::from_predictions(&predicted, &pick(labels, idx))?)
    };
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let confusion = BinaryConfusion::from_predictions(&predicted, labels)?;
    let metrics = confusion_metrics(&confusion)?;
    let auc = match roc_auc(scores, labels) {
        Ok(r) => Some(r.auc),
        Err(Error::Metric(_)) => None,
        Err(e) => return Err(e),
    };

    let n = scores.len();
    let mut boot = BTreeMap::new();
    type Getter = fn(&ClassificationMetrics) -> f64;
    let getters: [(&str, Getter); 4] = [
        ("accuracy", |m| m.accuracy),
        ("precision", |m| m.precision),
        ("recall", |m| m.recall),
        ("f1", |m| m.f1),
    ];
    for (name, get) in getters {
        boot.insert(name.to_string(), bootstrap(n, resamples, seed, |idx| metrics_on(idx).map(|m| get(&m)))?);
    }
    if auc.is_some() {
        let r = bootstrap(n, resamples, seed, |idx| {
            Ok(roc_auc(&pick(scores, idx), &pick(labels, idx))?.auc)
        })?;
        boot.insert("roc_auc".to_string(), r);
    }
    Ok(BinaryArReport {
        threshold,
        n_test: n,
        n_positive: labels.iter().filter(|&&l| l).count(),
        confusion,
        metrics,
        roc_auc: auc,
        bootstrap: boot,
    })
}

/// mAP and micro-F1 at `threshold`, each bootstrapped.
pub fn evaluate_multilabel(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    threshold: f64,
    resamples: usize,
    seed: u64,
) -> Result<MultilabelArReport> {
    let map = multilabel_map(scores, labels)?;
    let n = scores.len();
    let mut boot = BTreeMap::new();
    boot.insert(
        "map".to_string(),
        bootstrap(n, resamples, seed, |idx| {
            Ok(multilabel_map(&pick(scores, idx), &pick(labels, idx))?.map)
        })?,
    );
    boot.insert(
        "micro_f1".to_string(),
        bootstrap(n, resamples, seed, |idx| {
            Ok(micro_f1(&pick(scores, idx), &pick(labels, idx), threshold))
        })?,
    );
    Ok(MultilabelArReport {
        threshold,
        n_test: n,
        micro_f1: micro_f1(scores, labels, threshold),
        map,
        bootstrap: boot,
    })
}
