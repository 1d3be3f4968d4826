//! Configured end-to-end runs: cached feature extraction, cross-validation,
//! the final head, recognition and detection evaluation, and the selector
//! ablation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{ClassifierHead, HeadFile, Task, TrainingData};
use crate::datasets::{
    read_jsonl, write_jsonl, DatasetManifest, ManifestRecord, SourceVideo, Split, TruthRecord, NEGATIVE, POSITIVE,
};
use crate::detect::{
    evaluate_detection, localize_with, oracle_probabilities, segment_frames, DetectionEvaluation, DetectionResult,
};
use crate::embed::{extract_feature, read_feature, write_feature, Embedder, FeatureStore, MockEmbedder, VideoFeature};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_binary, evaluate_multilabel, ArReport, DEFAULT_RESAMPLES};
use crate::frameselect::{FrameSelection, FrameSelector, ScoreConfig, SelectionMethod};
use crate::media::{decode_video, DecodeConfig, FrameSequence};
use crate::modelselect::{cross_validate, default_grid, finalize, CvPlan, CvReport, GridPoint};

pub const REPORT_FILE: &str = "report.json";
pub const HEAD_FILE: &str = "head.json";
pub const CV_FILE: &str = "cv_report.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const CACHE_META_FILE: &str = "cache_meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Mock,
    FeatureStore,
    Onnx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub backend: Backend,
    /// Feature-store directory or ONNX model file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Mock,
            path: None,
        }
    }
}

pub enum LoadedEmbedder {
    Mock(MockEmbedder),
    Store(FeatureStore),
    #[cfg(feature = "onnx")]
    Onnx(crate::embed::OnnxEmbedder),
}

impl LoadedEmbedder {
    pub fn as_embedder(&self) -> &dyn Embedder {
        match self {
            LoadedEmbedder::Mock(e) => e,
            LoadedEmbedder::Store(e) => e,
            #[cfg(feature = "onnx")]
            LoadedEmbedder::Onnx(e) => e,
        }
    }

    fn store(&self) -> Option<&FeatureStore> {
        match self {
            LoadedEmbedder::Store(s) => Some(s),
            _ => None,
        }
    }
}

impl EmbedderConfig {
    fn required_path(&self) -> Result<&Path> {
        self.path
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{:?} backend needs embedder.path", self.backend)))
    }

    pub fn validate(&self) -> Result<()> {
        match self.backend {
            Backend::Mock => Ok(()),
            Backend::FeatureStore => {
                let p = self.required_path()?;
                if p.is_dir() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("feature store {} is not a directory", p.display())))
                }
            }
            Backend::Onnx => {
                let p = self.required_path()?;
                if !p.is_file() {
                    return Err(Error::Config(format!("model file {} does not exist", p.display())));
                }
                crate::embed::OnnxMetadata::load_for(p).map(drop)
            }
        }
    }

    pub fn load(&self) -> Result<LoadedEmbedder> {
        self.validate()?;
        match self.backend {
            Backend::Mock => Ok(LoadedEmbedder::Mock(MockEmbedder)),
            Backend::FeatureStore => Ok(LoadedEmbedder::Store(FeatureStore::open(self.required_path()?)?)),
            #[cfg(feature = "onnx")]
            Backend::Onnx => Ok(LoadedEmbedder::Onnx(crate::embed::OnnxEmbedder::load(self.required_path()?)?)),
            #[cfg(not(feature = "onnx"))]
            Backend::Onnx => Err(onnx_disabled()),
        }
    }
}

#[cfg(not(feature = "onnx"))]
fn onnx_disabled() -> Error {
    Error::Config("this build has no ONNX support; rebuild with --features onnx".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub folds: usize,
    pub cv_epochs: usize,
    /// Defaults to 1 for binary and 10 for multi-label heads.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_epochs: Option<usize>,
    /// Defaults to the full 36-point grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridPoint>>,
    pub max_fold_attempts: usize,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            folds: 3,
            cv_epochs: 10,
            final_epochs: None,
            grid: None,
            max_fold_attempts: 5,
        }
    }
}

impl CvSettings {
    pub fn plan(&self, task: Task, seed: u64) -> CvPlan {
        let mut plan = CvPlan::for_task(task, seed);
        plan.folds = self.folds;
        plan.cv_epochs = self.cv_epochs;
        if let Some(e) = self.final_epochs {
            plan.final_epochs = e;
        }
        plan.grid = self.grid.clone().unwrap_or_else(default_grid);
        plan.max_fold_attempts = self.max_fold_attempts;
        plan
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Base for relative media paths; defaults to the manifest's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub media_root: Option<PathBuf>,
    /// Untrimmed source videos (`SourceVideo` JSON Lines) for detection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sources: Option<PathBuf>,
    /// Ground-truth intervals (JSON Lines) for detection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub k: usize,
    pub clip_length: f64,
    pub selection: SelectionMethod,
    pub score: ScoreConfig,
    pub decode: DecodeConfig,
    pub embedder: EmbedderConfig,
    pub cv: CvSettings,
    pub seed: u64,
    pub bootstrap_seed: u64,
    pub bootstrap_resamples: usize,
    pub t_iou_thresholds: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            media_root: None,
            sources: None,
            truth: None,
            output_dir: PathBuf::from("out"),
            k: 10,
            clip_length: 2.0,
            selection: SelectionMethod::MotionBased,
            score: ScoreConfig::default(),
            decode: DecodeConfig::default(),
            embedder: EmbedderConfig::default(),
            cv: CvSettings::default(),
            seed: 0,
            bootstrap_seed: 0,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            t_iou_thresholds: vec![0.5, 0.25],
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a JSON config; relative paths are taken from the config file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.manifest);
        resolve(base, &mut self.output_dir);
        for p in [&mut self.media_root, &mut self.sources, &mut self.truth, &mut self.embedder.path]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
    }

    /// Config for a directory written by [`crate::synth::write_synthetic`],
    /// with outputs under `<dir>/out`.
    pub fn for_synthetic(dir: &Path) -> Self {
        Self {
            manifest: dir.join(crate::synth::MANIFEST_FILE),
            sources: Some(dir.join(crate::synth::SOURCES_FILE)),
            truth: Some(dir.join(crate::synth::TRUTH_FILE)),
            output_dir: dir.join("out"),
            ..Self::default()
        }
    }

    /// SHA-256 of the canonical JSON form, leaving out the output
    /// directory so a run can be moved or repeated elsewhere.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        v.as_object_mut().expect("object").remove("output_dir");
        sha256_hex(&serde_json::to_vec(&v).expect("config serialises"))
    }

    pub fn selector(&self) -> FrameSelector {
        FrameSelector {
            method: self.selection,
            k: self.k,
            score: self.score.clone(),
        }
    }

    /// Checks settings and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.clip_length > 0.0 && self.clip_length.is_finite()) {
            return bad(format!("clip_length must be positive, got {}", self.clip_length));
        }
        if self.bootstrap_resamples == 0 {
            return bad("bootstrap_resamples must be positive".into());
        }
        if self.t_iou_thresholds.is_empty() || self.t_iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return bad(format!("t-IoU thresholds {:?} must lie in (0, 1]", self.t_iou_thresholds));
        }
        if !self.manifest.is_file() {
            return bad(format!("manifest {} does not exist", self.manifest.display()));
        }
        if self.sources.is_some() != self.truth.is_some() {
            return bad("detection needs both sources and truth".into());
        }
        for p in [&self.sources, &self.truth].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if let Some(root) = &self.media_root {
            if !root.is_dir() {
                return bad(format!("media root {} is not a directory", root.display()));
            }
        }
        self.embedder.validate()
    }
}

/// Everything that determines a cached feature file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheMeta {
    backbone: String,
    dim: usize,
    method: SelectionMethod,
    k: usize,
    score: ScoreConfig,
    decode: DecodeConfig,
    key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub probabilities: Vec<f64>,
    pub predicted: Vec<String>,
    pub labels: Vec<String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub video_id: String,
    #[serde(flatten)]
    pub selection: FrameSelection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDetections {
    pub evaluation: DetectionEvaluation,
    pub results: Vec<DetectionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdReport {
    pub n_videos: usize,
    pub per_threshold: Vec<ThresholdDetections>,
    /// The same evaluation with windows labelled from the truth, as a
    /// harness check.
    pub oracle: Vec<DetectionEvaluation>,
}

/// An artifact tagged with the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub generated_at: u64,
    pub seed: u64,
    pub bootstrap_seed: u64,
    pub backbone: String,
    pub feature_dim: usize,
    pub selection: SelectionMethod,
    pub k: usize,
    pub task: Task,
    pub label_space: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub cv: CvReport,
    pub threshold: f64,
    pub recognition: ArReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<AdReport>,
}

impl RunReport {
    /// The report as JSON without its timestamp.
    pub fn metrics_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serialises");
        v.as_object_mut().expect("object").remove("generated_at");
        v
    }
}

pub struct RunArtifacts {
    pub report: RunReport,
    pub head: ClassifierHead,
    pub predictions: Vec<Prediction>,
}

pub struct Pipeline {
    config: RunConfig,
    config_hash: String,
    manifest: DatasetManifest,
    embedder: LoadedEmbedder,
}

impl Pipeline {
    /// Validates the config and loads the manifest and embedder.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let manifest = DatasetManifest::read(&config.manifest)
            .map_err(|e| e.context(format!("manifest {}", config.manifest.display())))?;
        if let Some(r) = manifest.records.iter().find(|r| r.split.is_none()) {
            return Err(Error::InvalidInput(format!(
                "{} has no split; run `split` on the manifest first",
                r.video_id
            )));
        }
        let embedder = config.embedder.load()?;
        Ok(Self {
            config_hash: config.hash(),
            config,
            manifest,
            embedder,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_embedder()
    }

    fn media_root(&self) -> PathBuf {
        self.config.media_root.clone().unwrap_or_else(|| {
            self.config.manifest.parent().map(Path::to_path_buf).unwrap_or_default()
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    /// `<output>/features/<backbone>/<method>-k<k>`.
    pub fn cache_dir(&self) -> PathBuf {
        self.config
            .output_dir
            .join("features")
            .join(self.embedder().tag())
            .join(format!("{}-k{}", self.config.selection.as_str(), self.config.k))
    }

    fn check_cache(&self, dir: &Path) -> Result<()> {
        let mut meta = CacheMeta {
            backbone: self.embedder().tag().to_string(),
            dim: self.embedder().dim(),
            method: self.config.selection,
            k: self.config.k,
            score: self.config.score.clone(),
            decode: self.config.decode.clone(),
            key: String::new(),
        };
        meta.key = sha256_hex(&serde_json::to_vec(&meta)?);
        let path = dir.join(CACHE_META_FILE);
        if path.is_file() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let found: CacheMeta = serde_json::from_str(&text)?;
            if found.key != meta.key {
                return Err(Error::Config(format!(
                    "feature cache {} was built with different settings; remove it or use another output_dir",
                    dir.display()
                )));
            }
            return Ok(());
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))
    }

    /// Decodes each source video once and calls `f` on every requested
    /// record's clip.
    fn for_each_clip<T, F>(&self, records: &[usize], f: F) -> Result<Vec<(usize, T)>>
    where
        T: Send,
        F: Fn(&ManifestRecord, &FrameSequence) -> Result<T> + Sync,
    {
        let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &i in records {
            let r = &self.manifest.records[i];
            let media = r.media.as_ref().ok_or_else(|| {
                Error::InvalidInput(format!("{} has no media reference", r.video_id))
            })?;
            by_source.entry(&media.path).or_default().push(i);
        }
        let root = self.media_root();
        let groups: Vec<Vec<(usize, T)>> = by_source
            .into_par_iter()
            .map(|(path, idx)| {
                let seq = decode_video(&root.join(path), &self.config.decode)?;
                idx.into_iter()
                    .map(|i| {
                        let r = &self.manifest.records[i];
                        let m = r.media.as_ref().expect("checked above");
                        let clip = seq
                            .sub_sequence(r.video_id.clone(), m.start_frame..m.end_frame)
                            .and_then(|clip| f(r, &clip))
                            .map_err(|e| e.context(r.video_id.clone()))?;
                        Ok((i, clip))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(groups.into_iter().flatten().collect())
    }

    /// Features for every manifest record, in manifest order. Cached files
    /// are reused; missing ones are extracted and written.
    pub fn features(&self) -> Result<Vec<VideoFeature>> {
        self.features_inner().map_err(|e| e.context("stage extract"))
    }

    fn features_inner(&self) -> Result<Vec<VideoFeature>> {
        let dir = self.cache_dir();
        self.check_cache(&dir)?;
        let tag = self.embedder().tag().to_string();
        let records = &self.manifest.records;
        let cached: Vec<Option<VideoFeature>> = records
            .par_iter()
            .map(|r| {
                let path = dir.join(format!("{}.marf", r.video_id));
                if !path.is_file() {
                    return Ok(None);
                }
                let f = read_feature(&path)?;
                if f.backbone != tag || f.k != self.config.k {
                    return Err(Error::Config(format!(
                        "cached {} is {}/k={}, expected {tag}/k={}",
                        path.display(),
                        f.backbone,
                        f.k,
                        self.config.k
                    )));
                }
                Ok(Some(f))
            })
            .collect::<Result<_>>()?;
        let mut out = cached;
        let missing: Vec<usize> = (0..records.len()).filter(|&i| out[i].is_none()).collect();
        let (with_media, without): (Vec<usize>, Vec<usize>) =
            missing.into_iter().partition(|&i| records[i].media.is_some());
        for i in without {
            let r = &records[i];
            let f = self
                .embedder
                .store()
                .and_then(|s| s.video_feature(&r.video_id))
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{} has no media reference and no stored feature",
                        r.video_id
                    ))
                })?;
            if f.k != self.config.k {
                return Err(Error::Config(format!(
                    "stored feature {} has k={}, config asks for k={}",
                    r.video_id, f.k, self.config.k
                )));
            }
            out[i] = Some(f.clone());
        }
        if !with_media.is_empty() {
            log::info!("extracting {} clips into {}", with_media.len(), dir.display());
        }
        let selector = self.config.selector();
        let extracted = self.for_each_clip(&with_media, |_, clip| {
            let f = extract_feature(self.embedder(), clip, &selector)?;
            write_feature(&dir.join(format!("{}.marf", f.video_id)), &f)?;
            Ok(f)
        })?;
        for (i, f) in extracted {
            out[i] = Some(f);
        }
        Ok(out.into_iter().map(|f| f.expect("every record filled")).collect())
    }

    /// Frame selections for every record with media, in manifest order.
    pub fn frame_selections(&self) -> Result<Vec<SelectionRecord>> {
        let idx: Vec<usize> = (0..self.manifest.records.len())
            .filter(|&i| self.manifest.records[i].media.is_some())
            .collect();
        let selector = self.config.selector();
        let mut out = self.for_each_clip(&idx, |r, clip| {
            Ok(SelectionRecord {
                video_id: r.video_id.clone(),
                selection: selector.select(clip.frames())?,
            })
        })?;
        out.sort_by_key(|(i, _)| *i);
        Ok(out.into_iter().map(|(_, s)| s).collect())
    }

    fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.manifest.records.len())
            .filter(|&i| self.manifest.records[i].split == Some(split))
            .collect()
    }

    /// Training data and group ids of one split.
    pub fn training_data(&self, features: &[VideoFeature], split: Split) -> Result<(TrainingData, Vec<String>)> {
        let idx = self.split_indices(split);
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("no {split:?} records in the manifest")));
        }
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| features[i].to_f64()).collect();
        let groups = idx.iter().map(|&i| self.manifest.records[i].group().to_string()).collect();
        let data = match self.manifest.task {
            Task::Binary => TrainingData::binary(
                x,
                idx.iter()
                    .map(|&i| self.manifest.binary_label(&self.manifest.records[i]))
                    .collect::<Result<_>>()?,
            )?,
            Task::Multilabel => TrainingData::multilabel(
                x,
                idx.iter()
                    .map(|&i| self.manifest.label_indices(&self.manifest.records[i]))
                    .collect::<Result<_>>()?,
                self.manifest.label_space.len(),
            )?,
        };
        Ok((data, groups))
    }

    pub fn cv_plan(&self) -> CvPlan {
        self.config.cv.plan(self.manifest.task, self.config.seed)
    }

    pub fn cross_validate(&self, features: &[VideoFeature]) -> Result<CvReport> {
        let (data, groups) = self.training_data(features, Split::Train)?;
        cross_validate(&self.cv_plan(), &data, &groups).map_err(|e| e.context("stage cv"))
    }

    pub fn train_final(&self, features: &[VideoFeature], chosen: &GridPoint) -> Result<ClassifierHead> {
        let (data, _) = self.training_data(features, Split::Train)?;
        finalize(&self.cv_plan(), &data, chosen).map_err(|e| e.context("stage train"))
    }

    pub fn predict(&self, head: &ClassifierHead, features: &[VideoFeature], split: Split) -> Result<Vec<Prediction>> {
        let t = head.threshold();
        self.split_indices(split)
            .into_par_iter()
            .map(|i| {
                let r = &self.manifest.records[i];
                let p = head
                    .predict_proba(&features[i].to_f64())
                    .map_err(|e| e.context(format!("stage predict: {}", r.video_id)))?;
                let predicted = match self.manifest.task {
                    Task::Binary => vec![if p[0] >= t { POSITIVE } else { NEGATIVE }.to_string()],
                    Task::Multilabel => self
                        .manifest
                        .label_space
                        .iter()
                        .zip(&p)
                        .filter(|(_, &v)| v >= t)
                        .map(|(l, _)| l.clone())
                        .collect(),
                };
                Ok(Prediction {
                    video_id: r.video_id.clone(),
                    probabilities: p,
                    predicted,
                    labels: r.labels.clone(),
                    config_hash: self.config_hash.clone(),
                })
            })
            .collect()
    }

    pub fn evaluate_recognition(&self, predictions: &[Prediction], threshold: f64) -> Result<ArReport> {
        let (n, seed) = (self.config.bootstrap_resamples, self.config.bootstrap_seed);
        let report = match self.manifest.task {
            Task::Binary => {
                let scores: Vec<f64> = predictions.iter().map(|p| p.probabilities[0]).collect();
                let labels: Vec<bool> = predictions.iter().map(|p| p.labels.iter().any(|l| l == POSITIVE)).collect();
                ArReport::Binary(evaluate_binary(&scores, &labels, threshold, n, seed)?)
            }
            Task::Multilabel => {
                let scores: Vec<Vec<f64>> = predictions.iter().map(|p| p.probabilities.clone()).collect();
                let labels: Vec<Vec<bool>> = predictions
                    .iter()
                    .map(|p| self.manifest.label_space.iter().map(|l| p.labels.contains(l)).collect())
                    .collect();
                ArReport::Multilabel(evaluate_multilabel(&scores, &labels, threshold, n, seed)?)
            }
        };
        Ok(report)
    }

    /// Detection on the untrimmed test videos. Windows that coincide with an
    /// already scored test clip reuse its probability.
    pub fn evaluate_detection(&self, head: &ClassifierHead, predictions: &[Prediction]) -> Result<Option<AdReport>> {
        let (Some(sources), Some(truth)) = (&self.config.sources, &self.config.truth) else {
            return Ok(None);
        };
        if self.manifest.task != Task::Binary {
            return Err(Error::Config("detection needs a binary task".into()));
        }
        let sources: Vec<SourceVideo> = read_jsonl(sources)?;
        let truths: HashMap<String, TruthRecord> = read_jsonl::<TruthRecord>(truth)?
            .into_iter()
            .map(|t| (t.source_video.clone(), t))
            .collect();
        let test_groups: BTreeSet<&str> = self.manifest.in_split(Split::Test).map(ManifestRecord::group).collect();
        let mut videos: Vec<&SourceVideo> = sources.iter().filter(|s| test_groups.contains(s.video_id.as_str())).collect();
        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        if videos.is_empty() {
            return Err(Error::InvalidInput("no listed source video is in the test split".into()));
        }
        let known: HashMap<&str, (f64, usize, usize)> = predictions
            .iter()
            .filter_map(|p| {
                let r = self.manifest.records.iter().find(|r| r.video_id == p.video_id)?;
                let m = r.media.as_ref()?;
                Some((p.video_id.as_str(), (p.probabilities[0], m.start_frame, m.end_frame)))
            })
            .collect();
        let root = self.media_root();
        let selector = self.config.selector();
        let mut results = Vec::with_capacity(videos.len());
        let mut oracle = Vec::with_capacity(videos.len());
        for v in videos {
            let truth = truths
                .get(&v.video_id)
                .ok_or_else(|| Error::InvalidInput(format!("no ground truth for {}", v.video_id)))?;
            let windows = segment_frames(&v.video_id, v.n_frames, v.fps, self.config.clip_length)?;
            let covered = windows.iter().all(|w| {
                known
                    .get(w.clip_id.as_str())
                    .is_some_and(|&(_, s, e)| (s, e) == (w.start_frame, w.end_frame))
            });
            let seq = if covered {
                None
            } else {
                Some(decode_video(&root.join(&v.path), &self.config.decode)?)
            };
            let r = localize_with(&v.video_id, &windows, head.threshold(), |w| {
                if let Some(&(p, s, e)) = known.get(w.clip_id.as_str()) {
                    if (s, e) == (w.start_frame, w.end_frame) {
                        return Ok(p);
                    }
                }
                let seq = seq.as_ref().expect("decoded when not covered");
                let clip = seq.sub_sequence(w.clip_id.clone(), w.frames())?;
                let f = extract_feature(self.embedder(), &clip, &selector)?;
                Ok(head.predict_proba(&f.to_f64())?[0])
            })
            .map_err(|e| e.context(format!("stage eval-ad: {}", v.video_id)))?;
            results.push((r, truth.intervals.clone()));
            let probs = oracle_probabilities(&windows, &truth.intervals);
            oracle.push((DetectionResult::from_decisions(&v.video_id, &windows, &probs, 0.5)?, truth.intervals.clone()));
        }
        let (n, seed) = (self.config.bootstrap_resamples, self.config.bootstrap_seed);
        let score_at = |set: &[(DetectionResult, Vec<crate::evaluate::TimeInterval>)], t: f64| {
            let scored: Vec<DetectionResult> = set
                .iter()
                .map(|(r, truth)| {
                    let mut r = r.clone();
                    r.score_against(truth.clone(), t);
                    r
                })
                .collect();
            evaluate_detection(&scored, t, n, seed).map(|e| (e, scored))
        };
        let mut per_threshold = Vec::new();
        let mut oracle_evals = Vec::new();
        for &t in &self.config.t_iou_thresholds {
            let (evaluation, results) = score_at(&results, t)?;
            per_threshold.push(ThresholdDetections { evaluation, results });
            oracle_evals.push(score_at(&oracle, t)?.0);
        }
        Ok(Some(AdReport {
            n_videos: results.len(),
            per_threshold,
            oracle: oracle_evals,
        }))
    }

    /// All stages in memory, without writing artifacts other than the
    /// feature cache.
    pub fn execute(&self, with_detection: bool) -> Result<RunArtifacts> {
        let features = self.features()?;
        let mut cv = self.cross_validate(&features)?;
        let head = self.train_final(&features, &cv.chosen)?;
        cv.threshold = Some(head.threshold());
        cv.head_path = Some(HEAD_FILE.to_string());
        let predictions = self.predict(&head, &features, Split::Test)?;
        let recognition = self
            .evaluate_recognition(&predictions, head.threshold())
            .map_err(|e| e.context("stage eval-ar"))?;
        let detection = if with_detection {
            self.evaluate_detection(&head, &predictions)?
        } else {
            None
        };
        let report = RunReport {
            config_hash: self.config_hash.clone(),
            generated_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            seed: self.config.seed,
            bootstrap_seed: self.config.bootstrap_seed,
            backbone: self.embedder().tag().to_string(),
            feature_dim: features.first().map_or(0, |f| f.vector.len()),
            selection: self.config.selection,
            k: self.config.k,
            task: self.manifest.task,
            label_space: self.manifest.label_space.clone(),
            n_train: self.split_indices(Split::Train).len(),
            n_test: predictions.len(),
            cv,
            threshold: head.threshold(),
            recognition,
            detection,
        };
        Ok(RunArtifacts {
            report,
            head,
            predictions,
        })
    }

    pub fn write_json<T: Serialize>(&self, name: &str, body: &T) -> Result<PathBuf> {
        let path = self.out(name);
        fs::create_dir_all(&self.config.output_dir).map_err(|e| Error::io(&self.config.output_dir, e))?;
        let stamped = Stamped {
            config_hash: self.config_hash.clone(),
            body,
        };
        fs::write(&path, serde_json::to_vec_pretty(&stamped)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_head(&self, head: &ClassifierHead) -> Result<PathBuf> {
        fs::create_dir_all(&self.config.output_dir).map_err(|e| Error::io(&self.config.output_dir, e))?;
        let mut file = HeadFile::from(head);
        file.config_hash = Some(self.config_hash.clone());
        let path = self.out(HEAD_FILE);
        file.write(&path)?;
        Ok(path)
    }

    pub fn write_predictions(&self, predictions: &[Prediction]) -> Result<PathBuf> {
        let path = self.out(PREDICTIONS_FILE);
        write_jsonl(&path, predictions)?;
        Ok(path)
    }

    /// Reads an artifact written by this config, rejecting ones stamped by
    /// another.
    pub fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        let path = self.out(name);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stamped: Stamped<T> = serde_json::from_str(&text)?;
        if stamped.config_hash != self.config_hash {
            return Err(Error::Config(format!(
                "{} was produced by a different config",
                path.display()
            )));
        }
        Ok(Some(stamped.body))
    }

    /// Predictions written by this config, or `None` if there are none yet.
    pub fn read_predictions(&self) -> Result<Option<Vec<Prediction>>> {
        let path = self.out(PREDICTIONS_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let preds: Vec<Prediction> = read_jsonl(&path)?;
        if let Some(p) = preds.iter().find(|p| p.config_hash != self.config_hash) {
            return Err(Error::Config(format!(
                "{} holds a prediction for {} from a different config",
                path.display(),
                p.video_id
            )));
        }
        Ok(Some(preds))
    }

    /// Loads the head written by this config.
    pub fn read_head(&self) -> Result<ClassifierHead> {
        let path = self.out(HEAD_FILE);
        let file = HeadFile::read(&path)?;
        if file.config_hash.as_deref() != Some(self.config_hash.as_str()) {
            return Err(Error::Config(format!(
                "{} was produced by a different config",
                path.display()
            )));
        }
        ClassifierHead::try_from(file)
    }

    /// Runs every stage and writes the head, predictions, detections and
    /// report into the output directory.
    pub fn run(&self) -> Result<RunReport> {
        let a = self.execute(true)?;
        self.write_json(CV_FILE, &a.report.cv)?;
        self.write_head(&a.head)?;
        self.write_predictions(&a.predictions)?;
        if let Some(d) = &a.report.detection {
            self.write_json(DETECTIONS_FILE, d)?;
        }
        let path = self.out(REPORT_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&a.report)?).map_err(|e| Error::io(&path, e))?;
        Ok(a.report)
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunReport> {
    Pipeline::new(config.clone())?.run()
}

/// The recognition score compared in the ablation: F1 for binary tasks,
/// mAP for multi-label ones.
pub fn headline_score(report: &ArReport) -> f64 {
    match report {
        ArReport::Binary(b) => b.metrics.f1,
        ArReport::Multilabel(m) => m.map.map,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub motion_based: f64,
    pub evenly_spaced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub metric: String,
    pub runs: Vec<AblationRun>,
    /// Runs where motion-based selection scored strictly higher.
    pub motion_wins: usize,
    pub motion_mean: f64,
    pub evenly_mean: f64,
}

impl AblationReport {
    pub fn from_runs(metric: &str, runs: Vec<AblationRun>) -> Self {
        let n = runs.len().max(1) as f64;
        Self {
            metric: metric.to_string(),
            motion_wins: runs.iter().filter(|r| r.motion_based > r.evenly_spaced).count(),
            motion_mean: runs.iter().map(|r| r.motion_based).sum::<f64>() / n,
            evenly_mean: runs.iter().map(|r| r.evenly_spaced).sum::<f64>() / n,
            runs,
        }
    }
}

/// Trains and evaluates the same config under both selectors, returning
/// `(motion_based, evenly_spaced)` headline scores. Only the selector
/// differs, so features land in separate cache directories.
pub fn compare_selectors(config: &RunConfig) -> Result<(f64, f64)> {
    let mut scores = [0.0; 2];
    for (slot, method) in [SelectionMethod::MotionBased, SelectionMethod::EvenlySpaced].into_iter().enumerate() {
        let cfg = RunConfig {
            selection: method,
            ..config.clone()
        };
        let a = Pipeline::new(cfg)?
            .execute(false)
            .map_err(|e| e.context(format!("ablation, {}", method.as_str())))?;
        scores[slot] = headline_score(&a.report.recognition);
    }
    Ok((scores[0], scores[1]))
}

/// Repeats [`compare_selectors`] with seeds `config.seed + r` for
/// `r in 0..runs`.
pub fn run_ablation(config: &RunConfig, runs: usize) -> Result<AblationReport> {
    if runs == 0 {
        return Err(Error::Config("ablation needs at least one run".into()));
    }
    let metric = match DatasetManifest::read(&config.manifest)?.task {
        Task::Binary => "f1",
        Task::Multilabel => "map",
    };
    let results = (0..runs as u64)
        .map(|r| {
            let seed = config.seed.wrapping_add(r);
            let cfg = RunConfig {
                seed,
                bootstrap_seed: config.bootstrap_seed.wrapping_add(r),
                ..config.clone()
            };
            let (motion_based, evenly_spaced) = compare_selectors(&cfg)?;
            log::info!("ablation run {r}: motion {motion_based:.4}, evenly {evenly_spaced:.4}");
            Ok(AblationRun {
                seed,
                motion_based,
                evenly_spaced,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport::from_runs(metric, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_fields() {
        let c: RunConfig = serde_json::from_str(r#"{"manifest": "m.jsonl"}"#).unwrap();
        assert_eq!(c.k, 10);
        assert_eq!(c.t_iou_thresholds, vec![0.5, 0.25]);
        assert_eq!(c.bootstrap_resamples, 100);
        assert_eq!(c.cv.plan(Task::Binary, 0).grid.len(), 36);
        assert!(serde_json::from_str::<RunConfig>(r#"{"manifest": "m", "kk": 3}"#).is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = RunConfig::default();
        let b = RunConfig {
            selection: SelectionMethod::EvenlySpaced,
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = RunConfig {
            output_dir: PathBuf::from("elsewhere"),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), moved.hash());
    }

    #[test]
    fn validation_fails_before_any_work() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.jsonl");
        fs::write(&manifest, "").unwrap();
        let mut c = RunConfig {
            manifest: manifest.clone(),
            ..RunConfig::default()
        };
        c.embedder = EmbedderConfig {
            backend: Backend::Onnx,
            path: Some(dir.path().join("missing.onnx")),
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.embedder = EmbedderConfig::default();
        c.k = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.k = 10;
        c.t_iou_thresholds = vec![1.5];
        assert!(c.validate().is_err());
        c.t_iou_thresholds = vec![0.5];
        c.validate().unwrap();
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"manifest": "data/m.jsonl", "output_dir": "/abs/out"}"#).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.manifest, dir.path().join("data/m.jsonl"));
        assert_eq!(c.output_dir, PathBuf::from("/abs/out"));
    }

    #[test]
    fn ablation_tally() {
        let runs = vec![
            AblationRun { seed: 0, motion_based: 0.9, evenly_spaced: 0.8 },
            AblationRun { seed: 1, motion_based: 0.7, evenly_spaced: 0.7 },
        ];
        let r = AblationReport::from_runs("f1", runs);
        assert_eq!(r.motion_wins, 1);
        assert!((r.motion_mean - 0.8).abs() < 1e-12);
    }
}
