//! ONNX graph backend. Expects a vision transformer exported with one image
//! input (`N x 3 x H x W`, f32) whose first output is either the classifier
//! token `[1, d]` or the full token sequence `[1, tokens, d]` (token 0 is
//! used). Normalisation constants and the resize contract are read from a
//! sidecar `<model>.json` (see [`OnnxMetadata`]).

use std::path::Path;

use tract_onnx::prelude::*;

use super::{Embedder, FrameKey, OnnxMetadata};
use crate::error::{Error, Result};
use crate::media::{resize_for_patch, Frame};

type Plan = Arc<TypedSimplePlan>;

pub struct OnnxEmbedder {
    meta: OnnxMetadata,
    model: Plan,
}

impl OnnxEmbedder {
    pub fn load(model_path: &Path) -> Result<Self> {
        let meta = OnnxMetadata::load_for(model_path)?;
        let model = tract_onnx::onnx()
            .model_for_path(model_path)
            .and_then(|m| m.into_typed())
            .and_then(|m| m.into_decluttered())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::Embedder(format!("{}: {e:#}", model_path.display())))?;
        Ok(Self { meta, model })
    }

    fn to_tensor(&self, frame: &Frame) -> Result<Tensor> {
        let resized = resize_for_patch(frame, self.meta.short_side, self.meta.patch_size)?;
        let (w, h, ch) = (resized.width(), resized.height(), resized.channels());
        if ch != 1 && ch != 3 {
            return Err(Error::InvalidInput(format!("{ch}-channel frame")));
        }
        let data = resized.data();
        let array = tract_ndarray::Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| {
            let v = data[(y * w + x) * ch + if ch == 3 { c } else { 0 }] as f32 / 255.0;
            (v - self.meta.mean[c]) / self.meta.std[c]
        });
        Ok(array.into())
    }
}

impl Embedder for OnnxEmbedder {
    fn dim(&self) -> usize {
        self.meta.dim
    }

    fn tag(&self) -> &str {
        &self.meta.tag
    }

    fn embed_frame(&self, _key: FrameKey<'_>, frame: &Frame) -> Result<Vec<f32>> {
        let input = self.to_tensor(frame)?;
        let outputs = self
            .model
            .run(tvec!(input.into()))
            .map_err(|e| Error::Embedder(format!("{}: {e:#}", self.meta.tag)))?;
        let view = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| Error::Embedder(format!("{}: {e:#}", self.meta.tag)))?;
        let values: Vec<f32> = view.iter().copied().collect();
        let d = self.meta.dim;
        let cls = match view.ndim() {
            2 if values.len() == d => values,
            3 if view.shape()[2] == d => values[..d].to_vec(),
            _ => {
                return Err(Error::Embedder(format!(
                    "{} output shape {:?} does not carry a {d}-wide classifier token",
                    self.meta.tag,
                    view.shape()
                )))
            }
        };
        if cls.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{} produced non-finite output", self.meta.tag)));
        }
        Ok(cls)
    }
}
