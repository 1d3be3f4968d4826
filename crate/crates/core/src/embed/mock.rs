use super::{Embedder, FrameKey};
use crate::error::Result;
use crate::media::{to_greyscale, Frame};

/// Model-free embedder for tests and the synthetic experiments.
///
/// Each frame maps to `[mean, std, mean |dI/dx|, mean |dI/dy|]` of its luma
/// intensities, with the population standard deviation and forward
/// differences. A gradient over a single row or column is 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEmbedder;

pub const MOCK_TAG: &str = "mock-v1";

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        4
    }

    fn tag(&self) -> &str {
        MOCK_TAG
    }

    fn embed_frame(&self, _key: FrameKey<'_>, frame: &Frame) -> Result<Vec<f32>> {
        let grey = to_greyscale(frame)?;
        let (w, h) = (grey.width(), grey.height());
        let px = grey.pixels();
        let n = px.len() as f64;
        let mean = px.iter().map(|&p| p as f64).sum::<f64>() / n;
        let var = px.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;

        let mut gx = 0u64;
        let mut gy = 0u64;
        for y in 0..h {
            for x in 0..w {
                let p = px[y * w + x];
                if x + 1 < w {
                    gx += p.abs_diff(px[y * w + x + 1]) as u64;
                }
                if y + 1 < h {
                    gy += p.abs_diff(px[(y + 1) * w + x]) as u64;
                }
            }
        }
        let mean_gx = if w > 1 { gx as f64 / ((w - 1) * h) as f64 } else { 0.0 };
        let mean_gy = if h > 1 { gy as f64 / (w * (h - 1)) as f64 } else { 0.0 };
        Ok(vec![mean as f32, var.sqrt() as f32, mean_gx as f32, mean_gy as f32])
    }
}
