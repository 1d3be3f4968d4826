//! Synthetic untrimmed videos with a known event: a blob drifts slowly over
//! a noisy background and darts fast during the event window. Fast motion is
//! rendered with motion blur, so event frames differ from their neighbours
//! and also look different on their own.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    middle_clip_truth, slice_coral_reef, split_grouped, write_jsonl, SourceVideo, TruthRecord, CLIPS_PER_VIDEO,
    MIDDLE_CLIP,
};
use crate::error::{Error, Result};
use crate::evaluate::TimeInterval;
use crate::media::{write_frame_dir, Frame, FrameSequence};

/// Sub-frame samples averaged to render motion blur.
const BLUR_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventPlacement {
    /// Centred in the middle clip.
    Centered,
    /// Uniformly placed inside the middle clip.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Videos last `5 * clip_length` seconds.
    pub clip_length: f64,
    /// Event length in seconds; the event lies inside the middle clip.
    pub event_duration: f64,
    pub event_placement: EventPlacement,
    /// Blob speed in pixels per second outside and inside the event.
    pub slow_speed: f64,
    pub fast_speed: f64,
    /// Standard deviation of per-pixel Gaussian noise, in grey levels.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_videos: 60,
            width: 64,
            height: 64,
            fps: 12.0,
            clip_length: 2.0,
            event_duration: 1.0,
            event_placement: EventPlacement::Centered,
            slow_speed: 4.0,
            fast_speed: 480.0,
            noise_std: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn duration(&self) -> f64 {
        CLIPS_PER_VIDEO as f64 * self.clip_length
    }

    pub fn n_frames(&self) -> usize {
        (self.duration() * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_videos == 0 {
            return bad("n_videos must be positive".into());
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!("frames of {}x{} are too small", self.width, self.height));
        }
        if !(self.fps > 0.0 && self.clip_length > 0.0) || self.fps * self.clip_length < 2.0 {
            return bad("each clip needs at least two frames".into());
        }
        if !(self.event_duration > 0.0 && self.event_duration <= self.clip_length) {
            return bad(format!(
                "event of {} s does not fit the {} s middle clip",
                self.event_duration, self.clip_length
            ));
        }
        if !(self.slow_speed >= 0.0 && self.fast_speed >= 0.0 && self.noise_std >= 0.0) {
            return bad("speeds and noise must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub sequence: FrameSequence,
    pub event: TimeInterval,
    pub truth: TruthRecord,
}

pub fn video_id(index: usize) -> String {
    format!("syn{index:04}")
}

struct Style {
    radius: f64,
    background: f64,
    blob: [f64; 3],
}

/// Blob centre at each sub-frame sample, integrated with reflection at the
/// walls. Inside the event the direction jumps every sixth of a second.
fn trajectory(spec: &SyntheticSpec, event: &TimeInterval, radius: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let steps = spec.n_frames() * BLUR_SAMPLES;
    let dt = 1.0 / (spec.fps * BLUR_SAMPLES as f64);
    let (lo_x, hi_x) = (radius, spec.width as f64 - radius);
    let (lo_y, hi_y) = (radius, spec.height as f64 - radius);
    let mut x = rng.random_range(lo_x..hi_x);
    let mut y = rng.random_range(lo_y..hi_y);
    let mut angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let dart_every = (spec.fps * BLUR_SAMPLES as f64 / 6.0).max(1.0) as usize;
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = (i as f64 + 0.5) * dt;
        let in_event = t >= event.start() && t < event.end();
        let speed = if in_event {
            if i % dart_every == 0 {
                angle += rng.random_range(1.5..4.8);
            }
            spec.fast_speed
        } else {
            angle += rng.random_range(-0.05..0.05);
            spec.slow_speed
        };
        x += speed * dt * angle.cos();
        y += speed * dt * angle.sin();
        if x < lo_x || x > hi_x {
            x = x.clamp(lo_x, hi_x);
            angle = std::f64::consts::PI - angle;
        }
        if y < lo_y || y > hi_y {
            y = y.clamp(lo_y, hi_y);
            angle = -angle;
        }
        out.push((x, y));
    }
    out
}

fn render(spec: &SyntheticSpec, style: &Style, centres: &[(f64, f64)], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Frame {
    let (w, h) = (spec.width, spec.height);
    let mut acc = vec![[0.0f64; 3]; w * h];
    for &(cx, cy) in centres {
        for py in 0..h {
            for px in 0..w {
                let d = ((px as f64 + 0.5 - cx).powi(2) + (py as f64 + 0.5 - cy).powi(2)).sqrt();
                let a = (style.radius + 0.5 - d).clamp(0.0, 1.0);
                let cell = &mut acc[py * w + px];
                for (v, blob) in cell.iter_mut().zip(style.blob) {
                    *v += style.background * (1.0 - a) + blob * a;
                }
            }
        }
    }
    let n = centres.len() as f64;
    let mut data = Vec::with_capacity(w * h * 3);
    for cell in acc {
        let e = noise.sample(rng);
        for v in cell {
            data.push((v / n + e).round().clamp(0.0, 255.0) as u8);
        }
    }
    Frame::new(w, h, 3, data).expect("buffer matches dimensions")
}

fn generate_one(spec: &SyntheticSpec, index: usize) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x1000_0000_01b3).wrapping_add(index as u64));
    let clip_start = MIDDLE_CLIP as f64 * spec.clip_length;
    let offset = match spec.event_placement {
        EventPlacement::Centered => (spec.clip_length - spec.event_duration) / 2.0,
        EventPlacement::Random => rng.random_range(0.0..=spec.clip_length - spec.event_duration),
    };
    let event = TimeInterval::new(clip_start + offset, clip_start + offset + spec.event_duration)?;
    let short = spec.width.min(spec.height) as f64;
    let background = rng.random_range(55.0..65.0);
    let contrast = rng.random_range(140.0..160.0);
    let tint: [f64; 3] = [rng.random_range(0.9..1.0), rng.random_range(0.9..1.0), rng.random_range(0.8..1.0)];
    let style = Style {
        radius: short * rng.random_range(0.11..0.13),
        background,
        blob: tint.map(|t| (background + contrast * t).min(255.0)),
    };
    let centres = trajectory(spec, &event, style.radius, &mut rng);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let frames: Vec<Frame> = centres
        .chunks(BLUR_SAMPLES)
        .map(|c| render(spec, &style, c, &noise, &mut rng))
        .collect();
    let id = video_id(index);
    Ok(SyntheticVideo {
        sequence: FrameSequence::new(id.clone(), frames, spec.fps)?,
        event,
        truth: middle_clip_truth(&id, spec.clip_length),
    })
}

/// Renders all videos; the same spec always yields identical frames.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    (0..spec.n_videos)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SOURCES_FILE: &str = "sources.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";

/// Writes `videos/<id>/` frame directories, `sources.jsonl` (inputs for
/// slicing), `truth.jsonl` (middle-clip intervals), `events.jsonl` (the
/// actual event spans), the spec itself, and `manifest.jsonl`: the videos
/// sliced into five clips each and split by source video with 20% test.
pub fn write_synthetic(spec: &SyntheticSpec, videos: &[SyntheticVideo], dir: &Path, split_seed: u64) -> Result<()> {
    let video_dir = dir.join("videos");
    videos.par_iter().try_for_each(|v| {
        write_frame_dir(&v.sequence, &video_dir.join(v.sequence.video_id()))
    })?;
    let sources: Vec<SourceVideo> = videos
        .iter()
        .map(|v| SourceVideo {
            video_id: v.sequence.video_id().to_string(),
            path: format!("videos/{}", v.sequence.video_id()),
            n_frames: v.sequence.n_frames(),
            fps: v.sequence.fps(),
        })
        .collect();
    write_jsonl(&dir.join(SOURCES_FILE), &sources)?;
    let truths: Vec<&TruthRecord> = videos.iter().map(|v| &v.truth).collect();
    write_jsonl(&dir.join(TRUTH_FILE), &truths)?;
    let events: Vec<TruthRecord> = videos
        .iter()
        .map(|v| TruthRecord {
            source_video: v.sequence.video_id().to_string(),
            intervals: vec![v.event],
        })
        .collect();
    write_jsonl(&dir.join(EVENTS_FILE), &events)?;
    let sliced = slice_coral_reef(&sources, spec.clip_length)?;
    split_grouped(&sliced, 0.2, split_seed)?.write(&dir.join(MANIFEST_FILE))?;
    let spec_path = dir.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_vec_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameselect::score_stream;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_videos: 4,
            width: 32,
            height: 24,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn shapes_and_truth() {
        let spec = small();
        let v = generate_synthetic(&spec).unwrap();
        assert_eq!(v.len(), 4);
        let s = &v[0].sequence;
        assert_eq!(s.n_frames(), 120);
        assert_eq!((s.frames()[0].width(), s.frames()[0].height()), (32, 24));
        assert_eq!(v[0].truth.intervals, vec![TimeInterval::new(4.0, 6.0).unwrap()]);
        assert_eq!(v[0].event, TimeInterval::new(4.5, 5.5).unwrap());
    }

    #[test]
    fn same_seed_same_frames() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sequence.frames(), y.sequence.frames());
        }
        let mut other = small();
        other.seed = 1;
        let c = generate_synthetic(&other).unwrap();
        assert_ne!(a[0].sequence.frames(), c[0].sequence.frames());
    }

    #[test]
    fn random_events_stay_in_middle_clip() {
        let spec = SyntheticSpec {
            event_placement: EventPlacement::Random,
            event_duration: 0.2,
            ..small()
        };
        for v in generate_synthetic(&spec).unwrap() {
            assert!(v.event.start() >= 4.0 && v.event.end() <= 6.0);
        }
    }

    #[test]
    fn motion_peaks_inside_the_event() {
        let spec = SyntheticSpec { n_videos: 6, ..small() };
        for v in generate_synthetic(&spec).unwrap() {
            let stream = score_stream(&v.sequence).unwrap();
            let argmax = (1..stream.n_frames())
                .max_by_key(|&t| (stream.score_of(t), std::cmp::Reverse(t)))
                .unwrap();
            let t = argmax as f64 / spec.fps;
            assert!(t >= v.event.start() && t <= v.event.end() + 1.0 / spec.fps, "{t}");
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = small();
        s.event_duration = 3.0;
        assert!(matches!(generate_synthetic(&s), Err(Error::Config(_))));
        s = small();
        s.width = 4;
        assert!(s.validate().is_err());
    }
}
