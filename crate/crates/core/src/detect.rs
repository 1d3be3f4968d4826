//! Temporal detection on untrimmed video: cut into fixed-length windows,
//! classify each window, merge runs of positive windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::ClassifierHead;
use crate::embed::{extract_feature, Embedder};
use crate::error::{Error, Result};
use crate::evaluate::{
    bootstrap, detection_ap, match_video, t_iou, BootstrapReport, DetectionAp, TimeInterval,
};
use crate::frameselect::FrameSelector;
use crate::media::FrameSequence;

/// Relative slack when snapping window boundaries to whole frames.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipWindow {
    pub clip_id: String,
    pub source_video: String,
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// Half-open frame range `[start_frame, end_frame)`.
    pub start_frame: usize,
    pub end_frame: usize,
}

impl ClipWindow {
    pub fn interval(&self) -> TimeInterval {
        TimeInterval::new(self.start, self.end).expect("windows have positive length")
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start_frame..self.end_frame
    }
}

pub fn clip_id(source_video: &str, index: usize) -> String {
    format!("{source_video}_clip{index}")
}

fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= BOUNDARY_EPS * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Cuts `n_frames` at `fps` into `ceil(duration / clip_length)` windows.
/// Window `t` spans `[t*L, min((t+1)*L, duration))` seconds and holds the
/// frames whose timestamps fall inside it. A final window that would hold no
/// frame is absorbed by its predecessor.
pub fn segment_frames(
    source_video: &str,
    n_frames: usize,
    fps: f64,
    clip_length: f64,
) -> Result<Vec<ClipWindow>> {
    if !(clip_length > 0.0 && clip_length.is_finite()) {
        return Err(Error::Config(format!("clip length must be positive, got {clip_length}")));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
    }
    if n_frames == 0 {
        return Err(Error::EmptyVideo(source_video.to_string()));
    }
    let duration = n_frames as f64 / fps;
    let n_windows = ceil_snapped(duration / clip_length) as usize;
    let frames_per_window = clip_length * fps;
    let mut windows = Vec::with_capacity(n_windows);
    for t in 0..n_windows {
        let start_frame = ceil_snapped(t as f64 * frames_per_window) as usize;
        let end_frame = if t + 1 == n_windows {
            n_frames
        } else {
            (ceil_snapped((t + 1) as f64 * frames_per_window) as usize).min(n_frames)
        };
        if start_frame >= end_frame && t + 1 == n_windows && t > 0 {
            // A trailing sliver shorter than one frame interval belongs to
            // the previous window.
            let prev: &mut ClipWindow = windows.last_mut().expect("t > 0");
            prev.end = duration;
            prev.end_frame = n_frames;
            break;
        }
        if start_frame >= end_frame {
            return Err(Error::Config(format!(
                "clip length {clip_length} s at {fps} fps leaves window {t} of {source_video} without frames"
            )));
        }
        windows.push(ClipWindow {
            clip_id: clip_id(source_video, t),
            source_video: source_video.to_string(),
            index: t,
            start: t as f64 * clip_length,
            end: if t + 1 == n_windows {
                duration
            } else {
                (t + 1) as f64 * clip_length
            },
            start_frame,
            end_frame,
        });
    }
    Ok(windows)
}

pub fn segment(seq: &FrameSequence, clip_length: f64) -> Result<Vec<ClipWindow>> {
    segment_frames(seq.video_id(), seq.n_frames(), seq.fps(), clip_length)
}

/// Joins each maximal run of consecutive positive windows into one interval.
pub fn merge_positive_windows(windows: &[ClipWindow], positive: &[bool]) -> Result<Vec<TimeInterval>> {
    if windows.len() != positive.len() {
        return Err(Error::InvalidInput(format!(
            "{} windows but {} decisions",
            windows.len(),
            positive.len()
        )));
    }
    let mut out = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    for (w, &p) in windows.iter().zip(positive) {
        run = match (run, p) {
            (Some((s, _)), true) => Some((s, w.end)),
            (None, true) => Some((w.start, w.end)),
            (Some((s, e)), false) => {
                out.push(TimeInterval::new(s, e)?);
                None
            }
            (None, false) => None,
        };
    }
    if let Some((s, e)) = run {
        out.push(TimeInterval::new(s, e)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub clip_id: String,
    pub start: f64,
    pub end: f64,
    pub probability: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub source_video: String,
    pub windows: Vec<WindowPrediction>,
    pub predicted: Vec<TimeInterval>,
    pub truths: Vec<TimeInterval>,
    /// Threshold used for `t_iou`/`correct`, once scored.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub t_iou: Vec<f64>,
    #[serde(default)]
    pub correct: Vec<bool>,
}

impl DetectionResult {
    /// Builds a result from window decisions.
    pub fn from_decisions(
        source_video: &str,
        windows: &[ClipWindow],
        probabilities: &[f64],
        threshold: f64,
    ) -> Result<Self> {
        if windows.len() != probabilities.len() {
            return Err(Error::InvalidInput(format!(
                "{} windows but {} probabilities",
                windows.len(),
                probabilities.len()
            )));
        }
        let positive: Vec<bool> = probabilities.iter().map(|&p| p >= threshold).collect();
        let predicted = merge_positive_windows(windows, &positive)?;
        let windows = windows
            .iter()
            .zip(probabilities)
            .zip(&positive)
            .map(|((w, &probability), &positive)| WindowPrediction {
                clip_id: w.clip_id.clone(),
                start: w.start,
                end: w.end,
                probability,
                positive,
            })
            .collect();
        Ok(Self {
            source_video: source_video.to_string(),
            windows,
            predicted,
            truths: Vec::new(),
            threshold: None,
            t_iou: Vec::new(),
            correct: Vec::new(),
        })
    }

    /// Attaches ground truth and records per-prediction t-IoU and
    /// correctness at `threshold`.
    pub fn score_against(&mut self, truths: Vec<TimeInterval>, threshold: f64) {
        let m = match_video(&self.predicted, &truths, threshold);
        self.truths = truths;
        self.threshold = Some(threshold);
        self.t_iou = m.best_t_iou;
        self.correct = m.correct;
    }
}

/// Classifies every window of `seq` with a binary head and merges the
/// positive ones.
pub fn localize(
    seq: &FrameSequence,
    windows: &[ClipWindow],
    head: &ClassifierHead,
    embedder: &dyn Embedder,
    selector: &FrameSelector,
) -> Result<DetectionResult> {
    if head.config().n_outputs != 1 {
        return Err(Error::Config(format!(
            "detection needs a binary head, got {} outputs",
            head.config().n_outputs
        )));
    }
    localize_with(seq.video_id(), windows, head.threshold(), |w| {
        let clip = seq.sub_sequence(w.clip_id.clone(), w.frames())?;
        let feature = extract_feature(embedder, &clip, selector)?;
        Ok(head.predict_proba(&feature.to_f64())?[0])
    })
}

/// Like [`localize`], with each window's probability supplied by `score`.
pub fn localize_with<F>(
    source_video: &str,
    windows: &[ClipWindow],
    threshold: f64,
    score: F,
) -> Result<DetectionResult>
where
    F: Fn(&ClipWindow) -> Result<f64> + Sync,
{
    let probabilities: Vec<f64> = windows
        .par_iter()
        .map(|w| score(w).map_err(|e| e.context(w.clip_id.clone())))
        .collect::<Result<_>>()?;
    DetectionResult::from_decisions(source_video, windows, &probabilities, threshold)
}

/// Perfect window scores: 1 for windows matching a truth interval at
/// t-IoU >= 0.5, otherwise 0.
pub fn oracle_probabilities(windows: &[ClipWindow], truths: &[TimeInterval]) -> Vec<f64> {
    windows
        .iter()
        .map(|w| {
            let iv = w.interval();
            let hit = truths.iter().any(|t| t_iou(&iv, t) >= 0.5);
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvaluation {
    pub threshold: f64,
    /// AP on the full test set.
    pub full: DetectionAp,
    pub bootstrap: BootstrapReport,
}

/// AP at one t-IoU threshold, plus a bootstrap over videos where every
/// resample has as many videos as the test set.
pub fn evaluate_detection(
    results: &[DetectionResult],
    threshold: f64,
    resamples: usize,
    seed: u64,
) -> Result<DetectionEvaluation> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("t-IoU threshold {threshold} outside (0, 1]")));
    }
    if results.is_empty() {
        return Err(Error::InvalidInput("no videos to evaluate".into()));
    }
    let preds: Vec<Vec<TimeInterval>> = results.iter().map(|r| r.predicted.clone()).collect();
    let truths: Vec<Vec<TimeInterval>> = results.iter().map(|r| r.truths.clone()).collect();
    let full = detection_ap(&preds, &truths, threshold)?;
    let per_video = &full.per_video_precision;
    let bootstrap = bootstrap(results.len(), resamples, seed, |sample| {
        Ok(sample.iter().map(|&i| per_video[i]).sum::<f64>() / sample.len() as f64)
    })?;
    Ok(DetectionEvaluation {
        threshold,
        full,
        bootstrap,
    })
}
