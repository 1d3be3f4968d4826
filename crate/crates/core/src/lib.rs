//! Rare-event action recognition and temporal detection in video from
//! motion-selected frames, frozen per-frame embeddings and a shallow
//! classification head.

pub mod classify;
pub mod datasets;
pub mod detect;
pub mod embed;
pub mod error;
pub mod evaluate;
pub mod frameselect;
pub mod media;
pub mod modelselect;
pub mod pipeline;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
