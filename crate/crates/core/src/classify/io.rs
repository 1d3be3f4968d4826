//! JSON persistence for trained heads. Parameters are stored per layer as
//! base64 of little-endian f64 so they round-trip bit-exactly.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ClassifierHead, HeadConfig, TrainingMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerBlob {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: String,
    pub biases: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadFile {
    pub config: HeadConfig,
    pub layers: Vec<LayerBlob>,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMeta>,
    /// Hash of the run configuration that produced the head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::InvalidInput(format!("{what}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::InvalidInput(format!(
            "{what}: {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl From<&ClassifierHead> for HeadFile {
    fn from(head: &ClassifierHead) -> Self {
        let layers = head
            .layers()
            .iter()
            .map(|s| LayerBlob {
                inputs: s.inputs,
                outputs: s.outputs,
                weights: encode(&head.params()[s.weights()]),
                biases: encode(&head.params()[s.biases()]),
            })
            .collect();
        HeadFile {
            config: head.config().clone(),
            layers,
            threshold: head.threshold(),
            training: head.training_meta().cloned(),
            config_hash: None,
        }
    }
}

impl TryFrom<HeadFile> for ClassifierHead {
    type Error = Error;

    fn try_from(file: HeadFile) -> Result<Self> {
        let dims = file.config.layer_dims();
        if dims.len() != file.layers.len() {
            return Err(Error::InvalidInput(format!(
                "config implies {} layers, file has {}",
                dims.len(),
                file.layers.len()
            )));
        }
        let mut params = Vec::new();
        for (l, (blob, (inputs, outputs))) in file.layers.iter().zip(dims).enumerate() {
            if (blob.inputs, blob.outputs) != (inputs, outputs) {
                return Err(Error::InvalidInput(format!(
                    "layer {l} is {}x{}, config implies {inputs}x{outputs}",
                    blob.inputs, blob.outputs
                )));
            }
            params.extend(decode(&blob.weights, inputs * outputs, &format!("layer {l} weights"))?);
            params.extend(decode(&blob.biases, outputs, &format!("layer {l} biases"))?);
        }
        ClassifierHead::from_parts(file.config, params, file.threshold, file.training)
    }
}

impl HeadFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn write_head(path: &Path, head: &ClassifierHead) -> Result<()> {
    HeadFile::from(head).write(path)
}

pub fn read_head(path: &Path) -> Result<ClassifierHead> {
    ClassifierHead::try_from(HeadFile::read(path)?).map_err(|e| e.context(path.display().to_string()))
}
