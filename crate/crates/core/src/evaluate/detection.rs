//! Temporal IoU and per-video detection precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open span of seconds, `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && end > start && end.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid interval [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl From<TimeInterval> for [f64; 2] {
    fn from(t: TimeInterval) -> Self {
        [t.start, t.end]
    }
}

impl TryFrom<[f64; 2]> for TimeInterval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        TimeInterval::new(v[0], v[1])
    }
}

/// Overlap length over covered length.
pub fn t_iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.length() + b.length() - inter)
}

/// Outcome of matching one video's predictions against its truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMatch {
    /// Best t-IoU of each prediction against any truth.
    pub best_t_iou: Vec<f64>,
    /// Whether each prediction was matched to a truth at the threshold.
    pub correct: Vec<bool>,
    pub precision: f64,
}

/// Greedy one-to-one matching: pairs are taken in order of decreasing t-IoU,
/// each prediction and each truth at most once, and only pairs at or above
/// `threshold` count.
pub fn match_video(
    predictions: &[TimeInterval],
    truths: &[TimeInterval],
    threshold: f64,
) -> VideoMatch {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (p, pred) in predictions.iter().enumerate() {
        for (t, truth) in truths.iter().enumerate() {
            let iou = t_iou(pred, truth);
            if iou >= threshold && iou > 0.0 {
                pairs.push((iou, p, t));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut correct = vec![false; predictions.len()];
    let mut used = vec![false; truths.len()];
    for (_, p, t) in pairs {
        if !correct[p] && !used[t] {
            correct[p] = true;
            used[t] = true;
        }
    }
    let best_t_iou = predictions
        .iter()
        .map(|p| truths.iter().map(|t| t_iou(p, t)).fold(0.0, f64::max))
        .collect();
    let hits = correct.iter().filter(|&&c| c).count();
    let precision = if predictions.is_empty() {
        0.0
    } else {
        hits as f64 / predictions.len() as f64
    };
    VideoMatch {
        best_t_iou,
        correct,
        precision,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAp {
    pub ap: f64,
    pub per_video_precision: Vec<f64>,
}

/// Mean over videos of the fraction of predicted intervals that are correct.
pub fn detection_ap(
    predictions: &[Vec<TimeInterval>],
    truths: &[Vec<TimeInterval>],
    threshold: f64,
) -> Result<DetectionAp> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} prediction lists for {} videos",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no videos to evaluate".into()));
    }
    if let Some(v) = truths.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("video {v} has no true interval")));
    }
    let per_video_precision: Vec<f64> = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| match_video(p, t, threshold).precision)
        .collect();
    let ap = per_video_precision.iter().sum::<f64>() / per_video_precision.len() as f64;
    Ok(DetectionAp {
        ap,
        per_video_precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    #[test]
    fn t_iou_cases() {
        assert_eq!(t_iou(&iv(4.0, 6.0), &iv(4.0, 6.0)), 1.0);
        assert_eq!(t_iou(&iv(4.0, 6.0), &iv(5.0, 7.0)), 1.0 / 3.0);
        assert_eq!(t_iou(&iv(0.0, 1.0), &iv(2.0, 3.0)), 0.0);
        assert_eq!(t_iou(&iv(0.0, 2.0), &iv(2.0, 3.0)), 0.0);
        assert_eq!(t_iou(&iv(0.0, 10.0), &iv(4.0, 6.0)), 0.2);
    }

    #[test]
    fn invalid_intervals() {
        assert!(TimeInterval::new(2.0, 2.0).is_err());
        assert!(TimeInterval::new(-1.0, 2.0).is_err());
        assert!(serde_json::from_str::<TimeInterval>("[3.0, 1.0]").is_err());
        assert_eq!(serde_json::from_str::<TimeInterval>("[1, 3]").unwrap(), iv(1.0, 3.0));
    }

    #[test]
    fn whole_video_prediction_misses_at_quarter_threshold() {
        let r = detection_ap(&[vec![iv(0.0, 10.0)]], &[vec![iv(4.0, 6.0)]], 0.25).unwrap();
        assert_eq!(r.ap, 0.0);
        let r = detection_ap(&[vec![iv(4.0, 6.0)]], &[vec![iv(4.0, 6.0)]], 0.5).unwrap();
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn one_truth_validates_one_prediction() {
        let m = match_video(&[iv(4.0, 6.0), iv(4.0, 6.5)], &[iv(4.0, 6.0)], 0.5);
        assert_eq!(m.correct, vec![true, false]);
        assert_eq!(m.precision, 0.5);
    }

    #[test]
    fn empty_predictions_and_missing_truth() {
        let r = detection_ap(&[vec![], vec![iv(1.0, 2.0)]], &vec![vec![iv(1.0, 2.0)]; 2], 0.5).unwrap();
        assert_eq!(r.per_video_precision, vec![0.0, 1.0]);
        assert!(detection_ap(&[vec![]], &[vec![]], 0.5).is_err());
    }

    #[test]
    fn perfect_predictions_on_nine_videos() {
        let truths: Vec<Vec<TimeInterval>> = (0..9).map(|_| vec![iv(4.0, 6.0)]).collect();
        assert_eq!(detection_ap(&truths, &truths, 0.5).unwrap().ap, 1.0);
    }
}
