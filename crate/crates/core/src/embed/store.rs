use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{read_feature, Embedder, FrameKey, VideoFeature};
use crate::error::{Error, Result};
use crate::media::Frame;

/// Serves embeddings precomputed by an external exporter. One MARF file per
/// video, named `<video_id>.marf`; lookups are by the frame index recorded
/// in that file and return the stored block bit-exactly.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    tag: String,
    dim: usize,
    features: HashMap<String, VideoFeature>,
}

impl FeatureStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut features = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "marf") {
                features.push(read_feature(&path)?);
            }
        }
        features.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        Self::from_features(features)
            .map_err(|e| e.context(format!("feature store {}", dir.display())))
    }

    pub fn from_features(features: Vec<VideoFeature>) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::Embedder("feature store is empty".into()))?;
        let (tag, dim) = (first.backbone.clone(), first.d);
        let mut map = HashMap::with_capacity(features.len());
        for f in features {
            if f.backbone != tag || f.d != dim {
                return Err(Error::Embedder(format!(
                    "{} is {}/d={}, store holds {tag}/d={dim}",
                    f.video_id, f.backbone, f.d
                )));
            }
            map.insert(f.video_id.clone(), f);
        }
        Ok(Self {
            tag,
            dim,
            features: map,
        })
    }

    pub fn video_feature(&self, video_id: &str) -> Option<&VideoFeature> {
        self.features.get(video_id)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl Embedder for FeatureStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed_frame(&self, key: FrameKey<'_>, _frame: &Frame) -> Result<Vec<f32>> {
        let feature = self
            .features
            .get(key.video_id)
            .ok_or_else(|| Error::Embedder(format!("no stored features for {}", key.video_id)))?;
        let j = feature
            .frame_indices
            .iter()
            .position(|&i| i == key.index)
            .ok_or_else(|| {
                Error::Embedder(format!(
                    "frame {} of {} was not exported",
                    key.index, key.video_id
                ))
            })?;
        Ok(feature.block(j).to_vec())
    }
}
