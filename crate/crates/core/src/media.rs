//! Video ingestion and the deterministic image transforms used by the frame
//! scorer and the embedders.
//!
//! Two decode paths exist. A directory of numbered PNG/JPEG frames with a
//! sidecar `meta.json` (`{"fps": 12.0}`) is read directly. Any other path is
//! handed to a system `ffmpeg`/`ffprobe` pair when one is installed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One decoded frame, row-major, channels interleaved (`HWC`), 8 bits per
/// channel. Only 1- and 3-channel frames are produced by the decoders.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Frame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "frame dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidInput(format!(
                "frame buffer has {} bytes, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A frame filled with one colour; `value.len()` is the channel count.
    pub fn filled(width: usize, height: usize, value: &[u8]) -> Result<Self> {
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(width * height * value.len())
            .collect();
        Self::new(width, height, value.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Single-channel intensity image with the dimensions of its source frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreyFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GreyFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width * height != pixels.len() || pixels.is_empty() {
            return Err(Error::InvalidInput(format!(
                "grey frame of {width}x{height} cannot hold {} pixels",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_frame(self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.pixels,
        }
    }
}

/// A decoded video. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    video_id: String,
    frames: Vec<Frame>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(video_id: impl Into<String>, frames: Vec<Frame>, fps: f64) -> Result<Self> {
        let video_id = video_id.into();
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "fps of {video_id} must be positive, got {fps}"
            )));
        }
        let Some(first) = frames.first() else {
            return Err(Error::EmptyVideo(video_id));
        };
        if let Some(i) = frames.iter().position(|f| !f.same_shape(first)) {
            return Err(Error::InvalidInput(format!(
                "frame {i} of {video_id} differs in shape from frame 0"
            )));
        }
        Ok(Self {
            video_id,
            frames,
            fps,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Duration in seconds, `n_frames / fps`.
    pub fn duration(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    /// Copies `range` of frames into a new sequence with the given id.
    pub fn sub_sequence(
        &self,
        video_id: impl Into<String>,
        range: std::ops::Range<usize>,
    ) -> Result<Self> {
        if range.end > self.frames.len() || range.start >= range.end {
            return Err(Error::InvalidInput(format!(
                "frame range {range:?} outside 0..{} of {}",
                self.frames.len(),
                self.video_id
            )));
        }
        Self::new(video_id, self.frames[range].to_vec(), self.fps)
    }
}

/// Options for [`decode_video`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Keep every `stride`-th frame. The effective fps is divided accordingly.
    pub stride: usize,
    /// Stop after this many kept frames.
    pub limit: Option<usize>,
    /// Frame rate for image directories without a `meta.json`.
    pub fps: Option<f64>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            limit: None,
            fps: None,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FrameDirMeta {
    pub fps: f64,
}

/// Name of the sidecar metadata file inside an image-directory video.
pub const META_FILE: &str = "meta.json";

pub fn decode_video(path: &Path, config: &DecodeConfig) -> Result<FrameSequence> {
    if config.stride == 0 {
        return Err(Error::Config("decode stride must be at least 1".into()));
    }
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let (frames, fps) = if path.is_dir() {
        decode_image_dir(path, config)?
    } else if path.is_file() {
        decode_with_ffmpeg(path, config)?
    } else {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: "no such file or directory".into(),
        });
    };
    if frames.is_empty() {
        return Err(Error::EmptyVideo(video_id));
    }
    FrameSequence::new(video_id, frames, fps / config.stride as f64)
}

fn keep_index(i: usize, kept: usize, config: &DecodeConfig) -> bool {
    i.is_multiple_of(config.stride) && config.limit.is_none_or(|l| kept < l)
}

fn decode_image_dir(dir: &Path, config: &DecodeConfig) -> Result<(Vec<Frame>, f64)> {
    let meta_path = dir.join(META_FILE);
    let fps = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: FrameDirMeta = serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: meta_path.clone(),
            message: e.to_string(),
        })?;
        meta.fps
    } else {
        config.fps.ok_or_else(|| {
            Error::Config(format!(
                "{} has no {META_FILE} and no fps was configured",
                dir.display()
            ))
        })?
    };

    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort_by_key(|a| frame_sort_key(a));

    let mut frames = Vec::new();
    for (i, file) in files.iter().enumerate() {
        if !keep_index(i, frames.len(), config) {
            continue;
        }
        frames.push(read_image(file)?);
    }
    Ok((frames, fps))
}

/// Numbered frames sort numerically; anything else falls back to name order.
fn frame_sort_key(path: &Path) -> (u64, String) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
    (digits.parse().unwrap_or(u64::MAX), stem)
}

pub fn read_image(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let frame = match img.color().channel_count() {
        1 | 2 => {
            let luma = img.into_luma8();
            let (w, h) = luma.dimensions();
            Frame::new(w as usize, h as usize, 1, luma.into_raw())
        }
        _ => {
            let rgb = img.into_rgb8();
            let (w, h) = rgb.dimensions();
            Frame::new(w as usize, h as usize, 3, rgb.into_raw())
        }
    };
    frame.map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_png(frame: &Frame, path: &Path) -> Result<()> {
    let color = match frame.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => {
            return Err(Error::InvalidInput(format!(
                "cannot write a {c}-channel frame as PNG"
            )))
        }
    };
    image::save_buffer_with_format(
        path,
        frame.data(),
        frame.width() as u32,
        frame.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a sequence as a numbered PNG directory with its `meta.json`.
pub fn write_frame_dir(seq: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = seq.n_frames().to_string().len().max(6);
    for (i, frame) in seq.frames().iter().enumerate() {
        write_png(frame, &dir.join(format!("{i:0width$}.png")))?;
    }
    let meta = serde_json::to_string(&FrameDirMeta { fps: seq.fps() })?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

fn decode_with_ffmpeg(path: &Path, config: &DecodeConfig) -> Result<(Vec<Frame>, f64)> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let probe = Command::new("ffprobe")
        .args([
            "-v",
            "error",
            "-select_streams",
            "v:0",
            "-show_entries",
            "stream=width,height,avg_frame_rate",
            "-of",
            "csv=p=0",
        ])
        .arg(path)
        .output()
        .map_err(|e| decode_err(format!("no system decoder available (ffprobe: {e})")))?;
    if !probe.status.success() {
        return Err(decode_err(
            String::from_utf8_lossy(&probe.stderr).trim().to_string(),
        ));
    }
    let text = String::from_utf8_lossy(&probe.stdout);
    let fields: Vec<&str> = text.trim().split(',').collect();
    if fields.len() < 3 {
        return Err(decode_err(format!("unexpected ffprobe output {text:?}")));
    }
    let width: usize = fields[0]
        .parse()
        .map_err(|_| decode_err(format!("bad width {:?}", fields[0])))?;
    let height: usize = fields[1]
        .parse()
        .map_err(|_| decode_err(format!("bad height {:?}", fields[1])))?;
    let fps = parse_rational(fields[2])
        .or(config.fps)
        .ok_or_else(|| decode_err(format!("bad frame rate {:?}", fields[2])))?;

    let mut child = Command::new("ffmpeg")
        .args(["-v", "error", "-i"])
        .arg(path)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| decode_err(format!("no system decoder available (ffmpeg: {e})")))?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let frame_bytes = width * height * 3;
    let mut frames = Vec::new();
    let mut buf = vec![0u8; frame_bytes];
    let mut i = 0usize;
    loop {
        match stdout.read_exact(&mut buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::io(path, e)),
        }
        if keep_index(i, frames.len(), config) {
            frames.push(Frame::new(width, height, 3, buf.clone())?);
        }
        i += 1;
        if config.limit.is_some_and(|l| frames.len() >= l) {
            break;
        }
    }
    drop(stdout);
    let _ = child.kill();
    let output = child.wait_with_output().map_err(|e| Error::io(path, e))?;
    if frames.is_empty() && !output.status.success() {
        return Err(decode_err(
            String::from_utf8_lossy(&output.stderr).trim().to_string(),
        ));
    }
    Ok((frames, fps))
}

fn parse_rational(s: &str) -> Option<f64> {
    let value = match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>().ok()? / d.trim().parse::<f64>().ok()?,
        None => s.trim().parse().ok()?,
    };
    (value.is_finite() && value > 0.0).then_some(value)
}

/// BT.601 luma, `round_half_up(0.299 R + 0.587 G + 0.114 B)`, computed in
/// integers. Single-channel frames pass through.
pub fn to_greyscale(frame: &Frame) -> Result<GreyFrame> {
    let pixels = match frame.channels() {
        1 => frame.data().to_vec(),
        3 => frame
            .data()
            .chunks_exact(3)
            .map(|p| {
                let y = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                ((y + 500) / 1000) as u8
            })
            .collect(),
        c => {
            return Err(Error::InvalidInput(format!(
                "greyscale conversion supports 1 or 3 channels, got {c}"
            )))
        }
    };
    GreyFrame::new(frame.width(), frame.height(), pixels)
}

/// Output size for [`resize_for_patch`] as `(width, height)`.
pub fn patch_aligned_size(
    width: usize,
    height: usize,
    short_side: usize,
    patch_size: usize,
) -> Result<(usize, usize)> {
    if patch_size == 0 || short_side == 0 || !short_side.is_multiple_of(patch_size) {
        return Err(Error::Config(format!(
            "short side {short_side} must be a positive multiple of patch size {patch_size}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("cannot resize an empty frame".into()));
    }
    let long_for = |long: usize, short: usize| (long * short_side / short) / patch_size * patch_size;
    Ok(if height <= width {
        (long_for(width, height), short_side)
    } else {
        (short_side, long_for(height, width))
    })
}

/// Scales the shorter side to exactly `short_side` and the longer side to the
/// aspect-preserving length floored to a multiple of `patch_size`.
/// Bilinear sampling at pixel centres, rounded half-up.
pub fn resize_for_patch(frame: &Frame, short_side: usize, patch_size: usize) -> Result<Frame> {
    let (out_w, out_h) = patch_aligned_size(frame.width(), frame.height(), short_side, patch_size)?;
    if out_w == frame.width() && out_h == frame.height() {
        return Ok(frame.clone());
    }
    Ok(resize_bilinear(frame, out_w, out_h))
}

pub(crate) fn resize_bilinear(frame: &Frame, out_w: usize, out_h: usize) -> Frame {
    let (in_w, in_h, ch) = (frame.width(), frame.height(), frame.channels());
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let xs = taps(out_w, in_w);
    let ys = taps(out_h, in_h);
    let src = frame.data();
    let mut data = Vec::with_capacity(out_w * out_h * ch);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..ch {
                let at = |x: usize, y: usize| src[(y * in_w + x) * ch + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Frame {
        width: out_w,
        height: out_h,
        channels: ch,
        data,
    }
}
