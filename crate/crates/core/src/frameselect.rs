//! Motion scoring between consecutive frames and the two frame selectors:
//! top-k by motion, and the evenly spaced baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{to_greyscale, Frame, FrameSequence, GreyFrame};

/// `scores[t - 1]` is the dissimilarity between frame `t` and frame `t - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DissimilarityStream {
    scores: Vec<u64>,
}

impl DissimilarityStream {
    pub fn from_scores(scores: Vec<u64>) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &[u64] {
        &self.scores
    }

    pub fn n_frames(&self) -> usize {
        self.scores.len() + 1
    }

    /// Score of frame `t` against its predecessor. `None` for frame 0.
    pub fn score_of(&self, t: usize) -> Option<u64> {
        t.checked_sub(1).and_then(|i| self.scores.get(i).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    MotionBased,
    EvenlySpaced,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::MotionBased => "motion_based",
            SelectionMethod::EvenlySpaced => "evenly_spaced",
        }
    }
}

impl std::str::FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion_based" | "motion" => Ok(SelectionMethod::MotionBased),
            "evenly_spaced" | "even" => Ok(SelectionMethod::EvenlySpaced),
            other => Err(Error::Config(format!("unknown selection method {other:?}"))),
        }
    }
}

/// Frames chosen for embedding, ascending, padded to exactly `k` entries by
/// repeating the last index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSelection {
    pub indices: Vec<usize>,
    pub k: usize,
    pub method: SelectionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Box-average greyscale frames by this integer factor before scoring.
    /// `None` or 1 scores at native resolution.
    pub downscale: Option<usize>,
}

/// Sum of absolute intensity differences over all pixels.
pub fn dissimilarity(a: &GreyFrame, b: &GreyFrame) -> Result<u64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::InvalidInput(format!(
            "cannot compare {}x{} with {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&p, &q)| p.abs_diff(q) as u64)
        .sum())
}

pub fn score_stream(seq: &FrameSequence) -> Result<DissimilarityStream> {
    score_frames(seq.frames(), &ScoreConfig::default())
}

pub fn score_frames(frames: &[Frame], config: &ScoreConfig) -> Result<DissimilarityStream> {
    if frames.len() < 2 {
        return Err(Error::TooFewFrames(frames.len()));
    }
    let factor = config.downscale.unwrap_or(1);
    if factor == 0 {
        return Err(Error::Config("downscale factor must be at least 1".into()));
    }
    let greys = frames
        .par_iter()
        .map(|f| to_greyscale(f).map(|g| box_downscale(g, factor)))
        .collect::<Result<Vec<_>>>()?;
    let scores = greys
        .par_windows(2)
        .map(|pair| dissimilarity(&pair[0], &pair[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(DissimilarityStream { scores })
}

fn box_downscale(grey: GreyFrame, factor: usize) -> GreyFrame {
    if factor <= 1 {
        return grey;
    }
    let w = (grey.width() / factor).max(1);
    let h = (grey.height() / factor).max(1);
    let fx = grey.width() / w;
    let fy = grey.height() / h;
    let src = grey.pixels();
    let mut out = Vec::with_capacity(w * h);
    for by in 0..h {
        for bx in 0..w {
            let mut sum = 0u32;
            for y in by * fy..(by + 1) * fy {
                for x in bx * fx..(bx + 1) * fx {
                    sum += src[y * grey.width() + x] as u32;
                }
            }
            out.push((sum / (fx * fy) as u32) as u8);
        }
    }
    GreyFrame::new(w, h, out).expect("block grid is non-empty")
}

fn pad_to(mut indices: Vec<usize>, k: usize) -> Vec<usize> {
    let last = *indices.last().unwrap_or(&0);
    indices.resize(k.max(indices.len()), last);
    indices
}

/// Picks the `k` frames with the largest score against their predecessor.
/// Ties go to the earlier frame. Frame 0 is never a candidate.
pub fn select_motion_based(stream: &DissimilarityStream, k: usize) -> Result<FrameSelection> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut candidates: Vec<usize> = (1..stream.n_frames()).collect();
    candidates.sort_by(|&a, &b| {
        stream.scores[b - 1]
            .cmp(&stream.scores[a - 1])
            .then(a.cmp(&b))
    });
    candidates.truncate(k);
    candidates.sort_unstable();
    let indices = pad_to(candidates, k);
    let scores = indices.iter().map(|&t| stream.scores[t - 1]).collect();
    Ok(FrameSelection {
        indices,
        k,
        method: SelectionMethod::MotionBased,
        scores: Some(scores),
    })
}

/// `round(i * (n - 1) / (k - 1))` for `i in 0..k`, half-up, duplicates
/// collapsed and then padded with the last index.
pub fn select_evenly_spaced(n_frames: usize, k: usize) -> Result<FrameSelection> {
    if n_frames == 0 || k == 0 {
        return Err(Error::InvalidInput(format!(
            "need n_frames >= 1 and k >= 1, got n_frames={n_frames}, k={k}"
        )));
    }
    let mut indices: Vec<usize> = if k == 1 {
        vec![0]
    } else {
        let span = n_frames - 1;
        let denom = k - 1;
        (0..k).map(|i| (2 * i * span + denom) / (2 * denom)).collect()
    };
    indices.dedup();
    Ok(FrameSelection {
        indices: pad_to(indices, k),
        k,
        method: SelectionMethod::EvenlySpaced,
        scores: None,
    })
}

/// Runs the chosen selector on a clip. Clips with a single frame cannot be
/// motion-scored and select that frame `k` times.
pub fn select_frames(
    frames: &[Frame],
    method: SelectionMethod,
    k: usize,
    config: &ScoreConfig,
) -> Result<FrameSelection> {
    match method {
        SelectionMethod::EvenlySpaced => select_evenly_spaced(frames.len(), k),
        SelectionMethod::MotionBased => match score_frames(frames, config) {
            Ok(stream) => select_motion_based(&stream, k),
            Err(Error::TooFewFrames(n)) if n > 0 => {
                if k == 0 {
                    return Err(Error::InvalidInput("k must be at least 1".into()));
                }
                Ok(FrameSelection {
                    indices: pad_to((0..n).collect(), k),
                    k,
                    method,
                    scores: None,
                })
            }
            Err(e) => Err(e),
        },
    }
}

/// Selector settings shared by extraction and detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameSelector {
    pub method: SelectionMethod,
    pub k: usize,
    #[serde(default)]
    pub score: ScoreConfig,
}

impl FrameSelector {
    pub fn new(method: SelectionMethod, k: usize) -> Self {
        Self {
            method,
            k,
            score: ScoreConfig::default(),
        }
    }

    pub fn select(&self, frames: &[Frame]) -> Result<FrameSelection> {
        select_frames(frames, self.method, self.k, &self.score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey(w: usize, h: usize, px: &[u8]) -> GreyFrame {
        GreyFrame::new(w, h, px.to_vec()).unwrap()
    }

    #[test]
    fn dissimilarity_hand_case() {
        let a = grey(2, 2, &[0, 0, 0, 0]);
        let b = grey(2, 2, &[1, 2, 3, 4]);
        assert_eq!(dissimilarity(&a, &b).unwrap(), 10);
        assert_eq!(dissimilarity(&b, &a).unwrap(), 10);
        assert_eq!(dissimilarity(&b, &b).unwrap(), 0);
    }

    #[test]
    fn dissimilarity_rejects_shape_mismatch() {
        let a = grey(2, 2, &[0; 4]);
        let b = grey(4, 1, &[0; 4]);
        assert!(matches!(dissimilarity(&a, &b), Err(Error::InvalidInput(_))));
    }

    fn seq_of(values: &[u8]) -> FrameSequence {
        let frames = values
            .iter()
            .map(|&v| Frame::filled(3, 2, &[v, v, v]).unwrap())
            .collect();
        FrameSequence::new("s", frames, 1.0).unwrap()
    }

    #[test]
    fn stream_shapes() {
        let constant = score_stream(&seq_of(&[7; 6])).unwrap();
        assert_eq!(constant.scores(), &[0; 5]);
        assert_eq!(score_stream(&seq_of(&[1, 2, 3])).unwrap().scores().len(), 2);
        assert!(matches!(
            score_stream(&seq_of(&[1])),
            Err(Error::TooFewFrames(1))
        ));
    }

    #[test]
    fn abrupt_change_peaks_at_its_frame() {
        let stream = score_stream(&seq_of(&[10, 10, 10, 10, 10, 90, 90, 90])).unwrap();
        let argmax = (0..stream.scores().len())
            .max_by_key(|&i| (stream.scores()[i], std::cmp::Reverse(i)))
            .unwrap();
        assert_eq!(argmax, 4);
        assert_eq!(stream.scores().iter().filter(|&&s| s > 0).count(), 1);
    }

    #[test]
    fn motion_selection_examples() {
        let s = DissimilarityStream::from_scores(vec![5, 1, 9, 9, 2]);
        assert_eq!(select_motion_based(&s, 2).unwrap().indices, vec![3, 4]);
        let s = DissimilarityStream::from_scores(vec![7, 7, 7]);
        assert_eq!(select_motion_based(&s, 2).unwrap().indices, vec![1, 2]);
        let s = DissimilarityStream::from_scores(vec![3, 1, 2]);
        assert_eq!(
            select_motion_based(&s, 10).unwrap().indices,
            vec![1, 2, 3, 3, 3, 3, 3, 3, 3, 3]
        );
        assert!(select_motion_based(&s, 0).is_err());
    }

    #[test]
    fn evenly_spaced_examples() {
        assert_eq!(
            select_evenly_spaced(240, 10).unwrap().indices,
            vec![0, 27, 53, 80, 106, 133, 159, 186, 212, 239]
        );
        assert_eq!(
            select_evenly_spaced(10, 10).unwrap().indices,
            (0..10).collect::<Vec<_>>()
        );
        assert_eq!(select_evenly_spaced(1, 3).unwrap().indices, vec![0, 0, 0]);
        assert_eq!(select_evenly_spaced(3, 5).unwrap().indices, vec![0, 1, 2, 2, 2]);
        assert_eq!(select_evenly_spaced(50, 1).unwrap().indices, vec![0]);
    }

    #[test]
    fn single_frame_clip_falls_back_to_padding() {
        let seq = seq_of(&[4]);
        let sel = select_frames(seq.frames(), SelectionMethod::MotionBased, 3, &ScoreConfig::default())
            .unwrap();
        assert_eq!(sel.indices, vec![0, 0, 0]);
    }

    #[test]
    fn downscaled_scoring_keeps_the_peak() {
        let frames: Vec<Frame> = [0u8, 0, 200, 200]
            .iter()
            .map(|&v| Frame::filled(8, 8, &[v]).unwrap())
            .collect();
        let cfg = ScoreConfig { downscale: Some(4) };
        let s = score_frames(&frames, &cfg).unwrap();
        assert_eq!(s.scores(), &[0, 4 * 200, 0]);
    }
}
