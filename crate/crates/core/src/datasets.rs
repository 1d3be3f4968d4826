//! Dataset manifests: clip slicing with middle-clip labelling, fish
//! predation filtering of action annotations, grouped train/test splits and
//! representative subsampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::Task;
use crate::detect::clip_id;
use crate::error::{Error, Result};
use crate::evaluate::{chi2_homogeneity, Chi2Result, TimeInterval};

pub const POSITIVE: &str = "positive";
pub const NEGATIVE: &str = "negative";

/// Clips cut from every coral-reef style source video.
pub const CLIPS_PER_VIDEO: usize = 5;

/// Index of the clip labelled positive.
pub const MIDDLE_CLIP: usize = CLIPS_PER_VIDEO / 2;

/// Fish predation actions, lower-case.
pub const PREDATION_ACTIONS: [&str; 8] = [
    "attacking",
    "being eaten",
    "biting",
    "chasing",
    "fighting",
    "fleeing",
    "retaliating",
    "struggling",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

/// Where a record's frames come from: a decodable video or frame directory
/// and the half-open frame range of the clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub path: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub feature_path: Option<String>,
    pub labels: Vec<String>,
    pub split: Option<Split>,
    pub source_video: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<MediaRef>,
}

impl ManifestRecord {
    /// Grouping key for splits and folds: the source video, or the record
    /// itself when it has none.
    pub fn group(&self) -> &str {
        self.source_video.as_deref().unwrap_or(&self.video_id)
    }
}

pub fn normalize_action(action: &str) -> String {
    action.trim().to_lowercase()
}

pub fn is_predation(action: &str) -> bool {
    PREDATION_ACTIONS.contains(&normalize_action(action).as_str())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub label_space: Vec<String>,
    pub task: Task,
}

impl DatasetManifest {
    /// Infers the task: records labelled only `positive`/`negative`, one
    /// label each, form a binary set; anything else is multi-label with the
    /// sorted union of labels as label space.
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        check_unique_ids(&records)?;
        let binary = records
            .iter()
            .all(|r| r.labels.len() == 1 && (r.labels[0] == POSITIVE || r.labels[0] == NEGATIVE));
        if binary && !records.is_empty() {
            return Ok(Self {
                records,
                label_space: vec![POSITIVE.to_string()],
                task: Task::Binary,
            });
        }
        let label_space: Vec<String> = records
            .iter()
            .flat_map(|r| r.labels.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            records,
            label_space,
            task: Task::Multilabel,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.records)
    }

    pub fn binary_label(&self, record: &ManifestRecord) -> Result<bool> {
        match record.labels.as_slice() {
            [l] if l == POSITIVE => Ok(true),
            [l] if l == NEGATIVE => Ok(false),
            other => Err(Error::InvalidInput(format!(
                "{} has labels {other:?}, expected exactly one of {POSITIVE}/{NEGATIVE}",
                record.video_id
            ))),
        }
    }

    /// Indices into `label_space` of the record's labels.
    pub fn label_indices(&self, record: &ManifestRecord) -> Result<Vec<usize>> {
        record
            .labels
            .iter()
            .map(|l| {
                self.label_space.binary_search(l).map_err(|_| {
                    Error::InvalidInput(format!("{} has label {l:?} outside the label space", record.video_id))
                })
            })
            .collect()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }
}

fn check_unique_ids(records: &[ManifestRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.video_id.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate video_id {}", r.video_id)));
        }
    }
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::from(e).context(format!("{} line {}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ground-truth event intervals of one untrimmed video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub source_video: String,
    pub intervals: Vec<TimeInterval>,
}

/// A source video to be cut into clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceVideo {
    pub video_id: String,
    pub path: String,
    pub n_frames: usize,
    pub fps: f64,
}

/// Cuts each video into five clips of `clip_length` seconds, labels the
/// middle one positive and the rest negative. Durations may miss
/// `5 * clip_length` by at most one frame; the last clip absorbs the
/// difference.
pub fn slice_coral_reef(videos: &[SourceVideo], clip_length: f64) -> Result<DatasetManifest> {
    if !(clip_length > 0.0 && clip_length.is_finite()) {
        return Err(Error::Config(format!("clip length must be positive, got {clip_length}")));
    }
    let mut records = Vec::with_capacity(videos.len() * CLIPS_PER_VIDEO);
    for v in videos {
        let per_clip = clip_length * v.fps;
        let expected = CLIPS_PER_VIDEO as f64 * per_clip;
        if !(v.fps > 0.0) || (v.n_frames as f64 - expected).abs() > 1.0 + 1e-9 {
            return Err(Error::Slicing {
                video_id: v.video_id.clone(),
                message: format!(
                    "{} frames at {} fps; expected {expected} (+/- 1) for {CLIPS_PER_VIDEO} clips of {clip_length} s",
                    v.n_frames, v.fps
                ),
            });
        }
        let bound = |t: usize| -> usize {
            if t == CLIPS_PER_VIDEO {
                v.n_frames
            } else {
                (t as f64 * per_clip).round() as usize
            }
        };
        for t in 0..CLIPS_PER_VIDEO {
            let (start_frame, end_frame) = (bound(t), bound(t + 1));
            if start_frame >= end_frame {
                return Err(Error::Slicing {
                    video_id: v.video_id.clone(),
                    message: format!("clip {t} would be empty"),
                });
            }
            let label = if t == MIDDLE_CLIP { POSITIVE } else { NEGATIVE };
            records.push(ManifestRecord {
                video_id: clip_id(&v.video_id, t),
                feature_path: None,
                labels: vec![label.to_string()],
                split: None,
                source_video: Some(v.video_id.clone()),
                media: Some(MediaRef {
                    path: v.path.clone(),
                    start_frame,
                    end_frame,
                }),
            });
        }
    }
    DatasetManifest::new(records)
}

/// The middle clip's span, which is the event interval under middle-clip
/// labelling.
pub fn middle_clip_truth(video_id: &str, clip_length: f64) -> TruthRecord {
    let start = MIDDLE_CLIP as f64 * clip_length;
    TruthRecord {
        source_video: video_id.to_string(),
        intervals: vec![TimeInterval::new(start, start + clip_length).expect("positive clip length")],
    }
}

/// One row of the normalised action annotation table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AkAnnotation {
    pub video_id: String,
    pub split: String,
    pub species_group: String,
    /// Semicolon-separated action names.
    pub actions: String,
}

impl AkAnnotation {
    pub fn action_list(&self) -> Vec<String> {
        self.actions
            .split(';')
            .map(normalize_action)
            .filter(|a| !a.is_empty())
            .collect()
    }

    pub fn is_fish(&self) -> bool {
        self.species_group.trim().eq_ignore_ascii_case("fish")
    }
}

pub fn read_ak_csv(path: &Path) -> Result<Vec<AkAnnotation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::InvalidInput(format!("{} row {}: {e}", path.display(), i + 2)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AkFilterResult {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

fn group_annotations(rows: &[AkAnnotation]) -> Result<BTreeMap<&str, (Split, Vec<&AkAnnotation>)>> {
    let mut videos: BTreeMap<&str, (Split, Vec<&AkAnnotation>)> = BTreeMap::new();
    for row in rows {
        let split: Split = row
            .split
            .parse()
            .map_err(|e: Error| e.context(format!("video {}", row.video_id)))?;
        let entry = videos.entry(&row.video_id).or_insert((split, Vec::new()));
        if entry.0 != split {
            return Err(Error::InvalidInput(format!(
                "video {} appears in both splits",
                row.video_id
            )));
        }
        entry.1.push(row);
    }
    Ok(videos)
}

/// Keeps videos in which a fish performs any action and labels them positive
/// iff a fish performs one of the predation actions. The published split is
/// kept. With a `vocabulary`, actions outside it (and outside the predation
/// set) are reported as warnings and treated as non-predation.
pub fn filter_ak_fish(rows: &[AkAnnotation], vocabulary: Option<&HashSet<String>>) -> Result<AkFilterResult> {
    let vocabulary: Option<HashSet<String>> =
        vocabulary.map(|v| v.iter().map(|a| normalize_action(a)).collect());
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    for (video_id, (split, rows)) in group_annotations(rows)? {
        let fish: Vec<&&AkAnnotation> = rows.iter().filter(|r| r.is_fish()).collect();
        if fish.iter().all(|r| r.action_list().is_empty()) {
            continue;
        }
        let mut positive = false;
        for row in &fish {
            for action in row.action_list() {
                if PREDATION_ACTIONS.contains(&action.as_str()) {
                    positive = true;
                } else if vocabulary.as_ref().is_some_and(|v| !v.contains(&action)) {
                    warnings.push(format!("{video_id}: unknown action {action:?}"));
                }
            }
        }
        records.push(ManifestRecord {
            video_id: video_id.to_string(),
            feature_path: None,
            labels: vec![if positive { POSITIVE } else { NEGATIVE }.to_string()],
            split: Some(split),
            source_video: None,
            media: None,
        });
    }
    if records.is_empty() {
        return Err(Error::InvalidInput("no video shows a fish performing an action".into()));
    }
    Ok(AkFilterResult {
        manifest: DatasetManifest::new(records)?,
        warnings,
    })
}

/// Multi-label manifest over every annotated video: labels are the union of
/// its actions across all actors.
pub fn ak_action_manifest(rows: &[AkAnnotation]) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    for (video_id, (split, rows)) in group_annotations(rows)? {
        let labels: BTreeSet<String> = rows.iter().flat_map(|r| r.action_list()).collect();
        records.push(ManifestRecord {
            video_id: video_id.to_string(),
            feature_path: None,
            labels: labels.into_iter().collect(),
            split: Some(split),
            source_video: None,
            media: None,
        });
    }
    DatasetManifest::new(records)
}

/// Assigns whole groups to the test split: `round(test_fraction * groups)`
/// groups drawn uniformly, the rest train.
pub fn split_grouped(manifest: &DatasetManifest, test_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut groups: Vec<&str> = manifest
        .records
        .iter()
        .map(ManifestRecord::group)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_test = (test_fraction * groups.len() as f64).round() as usize;
    if groups.len() < 2 || n_test == 0 || n_test == groups.len() {
        return Err(Error::Split(format!(
            "{} groups cannot be split with test fraction {test_fraction}",
            groups.len()
        )));
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test: HashSet<&str> = groups[..n_test].iter().copied().collect();
    let records = manifest
        .records
        .iter()
        .map(|r| ManifestRecord {
            split: Some(if test.contains(r.group()) {
                Split::Test
            } else {
                Split::Train
            }),
            ..r.clone()
        })
        .collect();
    DatasetManifest::new(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleReport {
    pub manifest: DatasetManifest,
    pub chi2: Chi2Result,
    pub attempts: usize,
    /// Classes with at least one instance in the sample.
    pub classes_kept: usize,
}

/// Acceptance level for a representative sample.
pub const SAMPLE_ALPHA: f64 = 0.05;

/// Draws `n` records, keeping the manifest's train:test proportion, until
/// the sample's label distribution passes the chi-square homogeneity test
/// against the full manifest at p >= 0.05. Attempt `i` uses seed `seed + i`.
pub fn representative_sample(
    manifest: &DatasetManifest,
    n: usize,
    seed: u64,
    max_attempts: usize,
) -> Result<SampleReport> {
    let total = manifest.records.len();
    if n == 0 || n > total {
        return Err(Error::Sampling(format!("cannot sample {n} of {total} records")));
    }
    if let Some(r) = manifest.records.iter().find(|r| r.split.is_none()) {
        return Err(Error::Sampling(format!("{} has no split", r.video_id)));
    }
    let train: Vec<&ManifestRecord> = manifest.in_split(Split::Train).collect();
    let test: Vec<&ManifestRecord> = manifest.in_split(Split::Test).collect();
    let n_train = ((n * train.len()) as f64 / total as f64).round() as usize;
    let n_train = n_train.min(train.len()).max(n.saturating_sub(test.len()));
    let n_test = n - n_train;

    let counts = |records: &mut dyn Iterator<Item = &ManifestRecord>| -> Result<Vec<u64>> {
        let mut c = vec![0u64; manifest.label_space.len()];
        for r in records {
            for i in manifest.label_indices(r)? {
                c[i] += 1;
            }
        }
        Ok(c)
    };
    let population = counts(&mut manifest.records.iter())?;
    let present: Vec<usize> = (0..population.len()).filter(|&i| population[i] > 0).collect();
    let population: Vec<u64> = present.iter().map(|&i| population[i]).collect();

    for attempt in 0..max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        let mut sample: Vec<ManifestRecord> = train
            .choose_multiple(&mut rng, n_train)
            .chain(test.choose_multiple(&mut rng, n_test))
            .map(|&r| r.clone())
            .collect();
        sample.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let all = counts(&mut sample.iter())?;
        let observed: Vec<u64> = present.iter().map(|&i| all[i]).collect();
        let chi2 = chi2_homogeneity(&observed, &population)?;
        if chi2.p_value >= SAMPLE_ALPHA {
            let classes_kept = observed.iter().filter(|&&c| c > 0).count();
            return Ok(SampleReport {
                manifest: DatasetManifest::new(sample)?,
                chi2,
                attempts: attempt + 1,
                classes_kept,
            });
        }
        log::info!("sample attempt {attempt} rejected, p = {}", chi2.p_value);
    }
    Err(Error::Sampling(format!(
        "no sample passed p >= {SAMPLE_ALPHA} in {max_attempts} attempts"
    )))
}
