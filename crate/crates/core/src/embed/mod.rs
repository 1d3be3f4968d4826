//! Frame embedding behind a pluggable backend, and the frame-major video
//! feature built from a selection.

mod bundle;
mod marf;
mod mock;
#[cfg(feature = "onnx")]
mod onnx;
mod store;

use std::collections::BTreeMap;

use rayon::prelude::*;

pub use bundle::OnnxMetadata;
pub use marf::{decode as decode_feature, encode as encode_feature, read_feature, write_feature};
pub use mock::MockEmbedder;
#[cfg(feature = "onnx")]
pub use onnx::OnnxEmbedder;
pub use store::FeatureStore;

use crate::error::{Error, Result};
use crate::frameselect::{FrameSelection, FrameSelector};
use crate::media::{Frame, FrameSequence};

/// Identifies a frame for backends that look embeddings up rather than
/// compute them.
#[derive(Debug, Clone, Copy)]
pub struct FrameKey<'a> {
    pub video_id: &'a str,
    pub index: usize,
}

/// A frozen per-frame feature extractor. Implementations are immutable once
/// built and may be called from several threads at once.
pub trait Embedder: Send + Sync {
    /// Width of one frame embedding. Constant for the embedder's lifetime.
    fn dim(&self) -> usize;

    /// Backbone identity recorded in every feature produced.
    fn tag(&self) -> &str;

    fn embed_frame(&self, key: FrameKey<'_>, frame: &Frame) -> Result<Vec<f32>>;
}

/// `k` frame embeddings of width `d` laid out frame-major: values
/// `[j * d, (j + 1) * d)` belong to `frame_indices[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeature {
    pub video_id: String,
    pub vector: Vec<f32>,
    pub k: usize,
    pub d: usize,
    pub frame_indices: Vec<usize>,
    pub backbone: String,
}

impl VideoFeature {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::InvalidInput(format!(
                "feature {} has k={} d={}",
                self.video_id, self.k, self.d
            )));
        }
        if self.vector.len() != self.k * self.d || self.frame_indices.len() != self.k {
            return Err(Error::InvalidInput(format!(
                "feature {} has {} values and {} indices for k={} d={}",
                self.video_id,
                self.vector.len(),
                self.frame_indices.len(),
                self.k,
                self.d
            )));
        }
        if let Some(i) = self.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "feature {} has a non-finite value at {i}",
                self.video_id
            )));
        }
        Ok(())
    }

    /// The embedding of the `j`-th selected frame.
    pub fn block(&self, j: usize) -> &[f32] {
        &self.vector[j * self.d..(j + 1) * self.d]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&v| v as f64).collect()
    }
}

/// Embeds the selected frames in selection order and concatenates them.
/// Repeated indices are embedded once.
pub fn build_video_feature(
    embedder: &dyn Embedder,
    seq: &FrameSequence,
    selection: &FrameSelection,
) -> Result<VideoFeature> {
    let d = embedder.dim();
    if let Some(&bad) = selection.indices.iter().find(|&&i| i >= seq.n_frames()) {
        return Err(Error::InvalidInput(format!(
            "selected frame {bad} outside {} frames of {}",
            seq.n_frames(),
            seq.video_id()
        )));
    }
    let unique: Vec<usize> = selection
        .indices
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let embedded: BTreeMap<usize, Vec<f32>> = unique
        .par_iter()
        .map(|&index| {
            let key = FrameKey {
                video_id: seq.video_id(),
                index,
            };
            let v = embedder
                .embed_frame(key, &seq.frames()[index])
                .map_err(|e| e.context(format!("{} frame {index}", seq.video_id())))?;
            if v.len() != d {
                return Err(Error::Embedder(format!(
                    "{} returned {} values for frame {index}, expected {d}",
                    embedder.tag(),
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "{} produced a non-finite embedding for {} frame {index}",
                    embedder.tag(),
                    seq.video_id()
                )));
            }
            Ok((index, v))
        })
        .collect::<Result<_>>()?;
    let mut vector = Vec::with_capacity(selection.indices.len() * d);
    for i in &selection.indices {
        vector.extend_from_slice(&embedded[i]);
    }
    Ok(VideoFeature {
        video_id: seq.video_id().to_string(),
        vector,
        k: selection.indices.len(),
        d,
        frame_indices: selection.indices.clone(),
        backbone: embedder.tag().to_string(),
    })
}

/// Selects frames from `seq` and embeds them.
pub fn extract_feature(
    embedder: &dyn Embedder,
    seq: &FrameSequence,
    selector: &FrameSelector,
) -> Result<VideoFeature> {
    let selection = selector
        .select(seq.frames())
        .map_err(|e| e.context(format!("selecting frames of {}", seq.video_id())))?;
    build_video_feature(embedder, seq, &selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameselect::SelectionMethod;

    fn seq(values: &[u8]) -> FrameSequence {
        let frames = values
            .iter()
            .map(|&v| Frame::filled(4, 4, &[v, v, v]).unwrap())
            .collect();
        FrameSequence::new("v", frames, 1.0).unwrap()
    }

    fn selection(indices: Vec<usize>) -> FrameSelection {
        FrameSelection {
            k: indices.len(),
            indices,
            method: SelectionMethod::EvenlySpaced,
            scores: None,
        }
    }

    #[test]
    fn concatenates_frame_major() {
        let s = seq(&[0, 10, 20, 30]);
        let f = build_video_feature(&MockEmbedder, &s, &selection(vec![1, 3])).unwrap();
        assert_eq!(f.vector.len(), 8);
        assert_eq!(f.block(0), &[10.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.block(1), &[30.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.frame_indices, vec![1, 3]);
        assert_eq!(f.backbone, "mock-v1");
    }

    #[test]
    fn padded_indices_copy_the_block() {
        let s = seq(&[5, 6]);
        let f = build_video_feature(&MockEmbedder, &s, &selection(vec![1; 10])).unwrap();
        assert_eq!(f.vector.len(), 40);
        assert!((0..10).all(|j| f.block(j) == f.block(0)));
    }

    #[test]
    fn out_of_range_selection_is_rejected() {
        let s = seq(&[5, 6]);
        assert!(build_video_feature(&MockEmbedder, &s, &selection(vec![2])).is_err());
    }
}
