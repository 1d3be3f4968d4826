//! Decision thresholds chosen on training-set outputs.

use crate::error::{Error, Result};

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Tries every distinct score as the threshold (`score >= t` is positive) and
/// returns the smallest one with maximal F1.
pub fn select_threshold_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Threshold("training set has no positive samples".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {s} is not a number")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Sweep thresholds from high to low; a group of equal scores flips
    // together.
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let score = f1(tp, fp, positives - tp);
        // Later thresholds are smaller, so ties move the choice down.
        if score >= best.0 {
            best = (score, t);
        }
    }
    Ok(best.1)
}

/// Candidate thresholds for the multi-label head: 0.1, 0.2, ..., 0.9.
pub fn multilabel_threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Micro-averaged F1 over every (sample, class) pair at threshold `t`.
pub fn micro_f1(scores: &[Vec<f64>], labels: &[Vec<bool>], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (row, truth) in scores.iter().zip(labels) {
        for (&s, &y) in row.iter().zip(truth) {
            match (s >= t, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    f1(tp, fp, fn_)
}

/// One global threshold from the 0.1-step grid maximising micro-F1; ties go
/// to the smaller threshold.
pub fn select_threshold_multilabel(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    if scores.len() != labels.len()
        || scores.iter().zip(labels).any(|(s, l)| s.len() != l.len())
    {
        return Err(Error::InvalidInput("score and label matrices differ in shape".into()));
    }
    if !labels.iter().flatten().any(|&l| l) {
        return Err(Error::Threshold("no positive labels in the training set".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in multilabel_threshold_grid() {
        let score = micro_f1(scores, labels, t);
        if score > best.0 {
            best = (score, t);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_hand_case() {
        let t = select_threshold_binary(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap();
        assert_eq!(t, 0.8);
    }

    #[test]
    fn all_positive_takes_min_score() {
        let t = select_threshold_binary(&[0.3, 0.7, 0.5], &[true; 3]).unwrap();
        assert_eq!(t, 0.3);
    }

    #[test]
    fn duplicates_and_ties() {
        // 0.6 -> tp 1, fp 1, fn 1 (1/2); 0.4 -> tp 2, fp 2 (2/3)
        let scores = [0.6, 0.6, 0.4, 0.4];
        let labels = [true, false, true, false];
        assert_eq!(select_threshold_binary(&scores, &labels).unwrap(), 0.4);
    }

    #[test]
    fn binary_without_positives_fails() {
        assert!(matches!(
            select_threshold_binary(&[0.1, 0.2], &[false, false]),
            Err(Error::Threshold(_))
        ));
    }

    #[test]
    fn multilabel_degenerate_cases() {
        let labels = vec![vec![true, false], vec![false, true]];
        let confident = vec![vec![0.99, 0.01], vec![0.01, 0.99]];
        assert_eq!(select_threshold_multilabel(&confident, &labels).unwrap(), 0.1);
        let flat = vec![vec![0.05, 0.05], vec![0.05, 0.05]];
        assert_eq!(select_threshold_multilabel(&flat, &labels).unwrap(), 0.1);
    }

    #[test]
    fn multilabel_matches_grid_brute_force() {
        let scores = vec![vec![0.15], vec![0.45], vec![0.55], vec![0.72], vec![0.33]];
        let labels = vec![vec![false], vec![true], vec![false], vec![true], vec![false]];
        // micro-F1 per candidate: 0.1 -> 4/7, 0.2/0.3 -> 2/3, 0.4 -> 4/5,
        // 0.5 -> 1/2, 0.6/0.7 -> 2/3, 0.8/0.9 -> 0
        assert_eq!(select_threshold_multilabel(&scores, &labels).unwrap(), 0.4);
    }
}
