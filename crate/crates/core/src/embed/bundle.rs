//! Sidecar metadata of an exported ONNX backbone: `<model>.json` next to
//! `<model>.onnx`. Read by the onnx backend; parsed and validated in every
//! build so a bad bundle is rejected before a run starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnnxMetadata {
    pub tag: String,
    /// Classifier-token width.
    pub dim: usize,
    /// Per-channel normalisation applied to intensities scaled to [0, 1].
    pub mean: [f32; 3],
    pub std: [f32; 3],
    #[serde(default = "default_short_side")]
    pub short_side: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
}

fn default_short_side() -> usize {
    448
}

fn default_patch() -> usize {
    14
}

impl OnnxMetadata {
    pub fn path_for(model: &Path) -> PathBuf {
        model.with_extension("json")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("bundle {:?}: {what}", self.tag)));
        if self.tag.is_empty() {
            return bad("empty tag");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return bad("mean must be finite and std strictly positive");
        }
        if self.patch_size == 0 || self.short_side < self.patch_size {
            return bad("short_side must be at least one patch");
        }
        Ok(())
    }

    /// Reads and validates the sidecar of `model`.
    pub fn load_for(model: &Path) -> Result<Self> {
        let path = Self::path_for(model);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read model metadata {}: {e}", path.display())))?;
        let meta: OnnxMetadata = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn save_for(&self, model: &Path) -> Result<()> {
        let path = Self::path_for(model);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))
    }
}
