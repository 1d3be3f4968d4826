//! Ranking average precision for multi-label outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-interpolated AP: `sum_j (R_j - R_{j-1}) * P_j` over the ranking by
/// descending score. Equal scores keep their input order. `None` when the
/// column has no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// AP per class; `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
    pub map: f64,
}

/// Per-class AP over the rows of `scores` (`samples x classes`) and their
/// unweighted mean over classes with at least one positive.
pub fn multilabel_map(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<MapReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} score rows for {} label rows",
            scores.len(),
            labels.len()
        )));
    }
    let classes = scores[0].len();
    if scores.iter().any(|r| r.len() != classes) || labels.iter().any(|r| r.len() != classes)
    {
        return Err(Error::InvalidInput("ragged score or label matrix".into()));
    }
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            average_precision(&s, &l)
        })
        .collect();
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(Error::Metric("no class has a positive sample".into()));
    }
    let excluded = per_class
        .iter()
        .enumerate()
        .filter_map(|(c, ap)| ap.is_none().then_some(c))
        .collect();
    Ok(MapReport {
        map: included.iter().sum::<f64>() / included.len() as f64,
        per_class,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_ap() {
        let ap = average_precision(&[0.9, 0.7, 0.5, 0.3], &[true, false, true, false]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking() {
        assert_eq!(average_precision(&[0.2, 0.9, 0.8], &[false, true, true]), Some(1.0));
        assert_eq!(average_precision(&[0.2, 0.9], &[false, false]), None);
    }

    #[test]
    fn classes_without_positives_are_excluded() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.3]];
        let labels = vec![vec![true, false], vec![false, false]];
        let r = multilabel_map(&scores, &labels).unwrap();
        assert_eq!(r.excluded, vec![1]);
        assert_eq!(r.map, 1.0);
        let none = vec![vec![false, false]; 2];
        assert!(matches!(multilabel_map(&scores, &none), Err(Error::Metric(_))));
    }
}
