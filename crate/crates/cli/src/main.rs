use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use marine::classify::ClassifierHead;
use marine::datasets::{
    ak_action_manifest, filter_ak_fish, middle_clip_truth, read_ak_csv, read_jsonl, representative_sample,
    slice_coral_reef, split_grouped, write_jsonl, DatasetManifest, SourceVideo, Split,
};
use marine::error::{Error, ErrorKind, Result};
use marine::evaluate::{ArReport, BootstrapReport};
use marine::frameselect::SelectionMethod;
use marine::modelselect::CvReport;
use marine::pipeline::{
    run_ablation, AdReport, Backend, Pipeline, RunConfig, CV_FILE, DETECTIONS_FILE, REPORT_FILE,
};
use marine::synth::{generate_synthetic, write_synthetic, EventPlacement, SyntheticSpec};

const AR_REPORT_FILE: &str = "ar_report.json";
const ABLATION_FILE: &str = "ablation.json";
const SYNTH_CONFIG_FILE: &str = "run.json";

#[derive(Parser)]
#[command(name = "marine", version, about = "Rare-event recognition and detection in underwater video")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut untrimmed source videos into five labelled clips each.
    Slice {
        /// Source videos as JSON Lines ({video_id, path, n_frames, fps}).
        #[arg(long)]
        sources: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        clip_length: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write middle-clip ground truth for detection.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Build a manifest from Animal Kingdom style annotations.
    FilterAk {
        #[arg(long)]
        annotations: PathBuf,
        /// Known action names, one per line; unknown actions are reported.
        #[arg(long)]
        vocabulary: Option<PathBuf>,
        /// Keep every video, labelled with all of its actions.
        #[arg(long)]
        multilabel: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign whole source videos to train or test.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a subsample whose label distribution matches the manifest.
    SampleAk {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        max_attempts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the selected frame indices of every clip as `<video_id>.json`.
    SelectFrames {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `<output_dir>/selections`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract and cache clip features.
    Extract {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Grouped cross-validation over the hyperparameter grid.
    Cv {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the final head with the configuration chosen by `cv`.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score the test split with the trained head.
    Predict {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Recognition metrics with bootstrap spreads.
    EvalAr {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Detection on the untrimmed test videos.
    EvalAd {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare motion-based and evenly spaced frame selection.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
    /// Every stage in sequence.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate a synthetic dataset and a config to run it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON file with generator settings; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n_videos: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        event_duration: Option<f64>,
        #[arg(long, value_enum)]
        placement: Option<Placement>,
        #[arg(long)]
        seed: Option<u64>,
        /// Seed of the train/test split.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Placement {
    Centered,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    Motion,
    Even,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    FeatureStore,
    Onnx,
}

/// A run config plus command-line overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bootstrap_seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    selection: Option<SelectionArg>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Feature-store directory or ONNX model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.bootstrap_seed {
            c.bootstrap_seed = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.selection {
            c.selection = match v {
                SelectionArg::Motion => SelectionMethod::MotionBased,
                SelectionArg::Even => SelectionMethod::EvenlySpaced,
            };
        }
        if let Some(v) = self.backend {
            c.embedder.backend = match v {
                BackendArg::Mock => Backend::Mock,
                BackendArg::FeatureStore => Backend::FeatureStore,
                BackendArg::Onnx => Backend::Onnx,
            };
        }
        if let Some(v) = &self.model {
            c.embedder.path = Some(v.clone());
        }
        if let Some(v) = self.bootstrap_resamples {
            c.bootstrap_resamples = v;
        }
        Ok(c)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Pipeline::new(self.config()?)
    }
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn split_counts(m: &DatasetManifest) -> String {
    format!(
        "{} records ({} train, {} test, {} unsplit)",
        m.records.len(),
        m.in_split(Split::Train).count(),
        m.in_split(Split::Test).count(),
        m.records.iter().filter(|r| r.split.is_none()).count()
    )
}

fn row(name: &str, value: f64, b: Option<&BootstrapReport>) -> String {
    match b {
        Some(b) => format!("{name:<10} {:>8.2}%   {:>6.2}% ± {:.2}%", 100.0 * value, 100.0 * b.mean, 100.0 * b.half_width_95),
        None => format!("{name:<10} {:>8.2}%   {:>8}", 100.0 * value, "-"),
    }
}

fn ar_table(report: &ArReport) -> String {
    let mut lines = vec![format!("{:<10} {:>9}   {}", "metric", "test", "bootstrap mean ± 1.96 std")];
    match report {
        ArReport::Binary(r) => {
            let m = &r.metrics;
            for (name, v) in [("accuracy", m.accuracy), ("precision", m.precision), ("recall", m.recall), ("f1", m.f1)] {
                lines.push(row(name, v, r.bootstrap.get(name)));
            }
            if let Some(auc) = r.roc_auc {
                lines.push(row("roc_auc", auc, r.bootstrap.get("roc_auc")));
            }
            lines.push(format!("threshold {:.4}, {} test clips, {} positive", r.threshold, r.n_test, r.n_positive));
        }
        ArReport::Multilabel(r) => {
            lines.push(row("map", r.map.map, r.bootstrap.get("map")));
            lines.push(row("micro_f1", r.micro_f1, r.bootstrap.get("micro_f1")));
            lines.push(format!("threshold {:.2}, {} test videos", r.threshold, r.n_test));
        }
    }
    lines.join("\n")
}

fn ad_table(report: &AdReport) -> String {
    let mut lines = vec![format!("{:<8} {:>9}   {}", "t-IoU", "AP", "bootstrap mean ± 1.96 std")];
    for t in &report.per_threshold {
        let e = &t.evaluation;
        lines.push(format!(
            "{:<8} {:>8.2}%   {:>6.2}% ± {:.2}%",
            e.threshold,
            100.0 * e.full.ap,
            100.0 * e.bootstrap.mean,
            100.0 * e.bootstrap.half_width_95
        ));
    }
    for o in &report.oracle {
        lines.push(format!("oracle at {}: AP {:.2}%", o.threshold, 100.0 * o.full.ap));
    }
    lines.push(format!("{} test videos", report.n_videos));
    lines.join("\n")
}

fn require<T>(value: Option<T>, what: &str, stage: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("no {what} for this config; run `{stage}` first")))
}

fn trained_head(p: &Pipeline) -> Result<ClassifierHead> {
    if !p.config().output_dir.join(marine::pipeline::HEAD_FILE).is_file() {
        return Err(Error::Config("no trained head for this config; run `train` first".into()));
    }
    p.read_head()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Slice {
            sources,
            clip_length,
            out,
            truth,
        } => {
            let videos: Vec<SourceVideo> = read_jsonl(&sources)?;
            let manifest = slice_coral_reef(&videos, clip_length)?;
            manifest.write(&out)?;
            if let Some(path) = truth {
                let t: Vec<_> = videos.iter().map(|v| middle_clip_truth(&v.video_id, clip_length)).collect();
                write_jsonl(&path, &t)?;
            }
            println!("{}", split_counts(&manifest));
        }
        Command::FilterAk {
            annotations,
            vocabulary,
            multilabel,
            out,
        } => {
            let rows = read_ak_csv(&annotations)?;
            let manifest = if multilabel {
                ak_action_manifest(&rows)?
            } else {
                let vocab: Option<HashSet<String>> = match vocabulary {
                    Some(path) => Some(
                        fs::read_to_string(&path)
                            .map_err(|e| Error::io(&path, e))?
                            .lines()
                            .map(str::trim)
                            .filter(|l| !l.is_empty())
                            .map(String::from)
                            .collect(),
                    ),
                    None => None,
                };
                let r = filter_ak_fish(&rows, vocab.as_ref())?;
                for w in &r.warnings {
                    log::warn!("{w}");
                }
                r.manifest
            };
            manifest.write(&out)?;
            println!("{}, {} labels", split_counts(&manifest), manifest.label_space.len());
        }
        Command::Split {
            manifest,
            test_fraction,
            seed,
            out,
        } => {
            let m = split_grouped(&DatasetManifest::read(&manifest)?, test_fraction, seed)?;
            m.write(&out)?;
            println!("{}", split_counts(&m));
        }
        Command::SampleAk {
            manifest,
            n,
            seed,
            max_attempts,
            out,
        } => {
            let r = representative_sample(&DatasetManifest::read(&manifest)?, n, seed, max_attempts)?;
            r.manifest.write(&out)?;
            println!(
                "{}; chi2 {:.3} (dof {}), p {:.4} after {} attempts; {} classes present",
                split_counts(&r.manifest),
                r.chi2.statistic,
                r.chi2.degrees_of_freedom,
                r.chi2.p_value,
                r.attempts,
                r.classes_kept
            );
        }
        Command::SelectFrames { run, out } => {
            let p = run.pipeline()?;
            let dir = out.unwrap_or_else(|| p.config().output_dir.join("selections"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let selections = p.frame_selections()?;
            for s in &selections {
                write_pretty(&dir.join(format!("{}.json", s.video_id)), s)?;
            }
            println!("{} selections in {}", selections.len(), dir.display());
        }
        Command::Extract { run } => {
            let p = run.pipeline()?;
            let features = p.features()?;
            println!("{} features in {}", features.len(), p.cache_dir().display());
        }
        Command::Cv { run } => {
            let p = run.pipeline()?;
            let cv = p.cross_validate(&p.features()?)?;
            let path = p.write_json(CV_FILE, &cv)?;
            let best = cv.rows.iter().map(|r| r.mean).fold(f64::NEG_INFINITY, f64::max);
            println!(
                "chose {} hidden layers, dropout {}, learning rate {} (mean {:?} {best:.4}); wrote {}",
                cv.chosen.hidden_layers,
                cv.chosen.dropout_rate,
                cv.chosen.learning_rate,
                cv.metric,
                path.display()
            );
        }
        Command::Train { run } => {
            let p = run.pipeline()?;
            let mut cv: CvReport = require(p.read_json(CV_FILE)?, "cross-validation report", "cv")?;
            let head = p.train_final(&p.features()?, &cv.chosen)?;
            let path = p.write_head(&head)?;
            cv.threshold = Some(head.threshold());
            cv.head_path = Some(marine::pipeline::HEAD_FILE.to_string());
            p.write_json(CV_FILE, &cv)?;
            println!("threshold {:.4}; wrote {}", head.threshold(), path.display());
        }
        Command::Predict { run } => {
            let p = run.pipeline()?;
            let head = trained_head(&p)?;
            let preds = p.predict(&head, &p.features()?, Split::Test)?;
            let path = p.write_predictions(&preds)?;
            println!("{} predictions in {}", preds.len(), path.display());
        }
        Command::EvalAr { run } => {
            let p = run.pipeline()?;
            let head = trained_head(&p)?;
            let preds = require(p.read_predictions()?, "predictions", "predict")?;
            let report = p.evaluate_recognition(&preds, head.threshold())?;
            p.write_json(AR_REPORT_FILE, &report)?;
            println!("{}", ar_table(&report));
        }
        Command::EvalAd { run } => {
            let p = run.pipeline()?;
            let head = trained_head(&p)?;
            let preds = p.read_predictions()?.unwrap_or_default();
            let report = p
                .evaluate_detection(&head, &preds)?
                .ok_or_else(|| Error::Config("detection needs `sources` and `truth` in the config".into()))?;
            p.write_json(DETECTIONS_FILE, &report)?;
            println!("{}", ad_table(&report));
        }
        Command::Ablate { run, runs } => {
            let config = run.config()?;
            let report = run_ablation(&config, runs)?;
            let path = config.output_dir.join(ABLATION_FILE);
            write_pretty(&path, &report)?;
            for r in &report.runs {
                println!("seed {:<4} motion {:.4}  even {:.4}", r.seed, r.motion_based, r.evenly_spaced);
            }
            println!(
                "{}: motion-based ahead in {}/{} runs (mean {:.4} vs {:.4})",
                report.metric,
                report.motion_wins,
                report.runs.len(),
                report.motion_mean,
                report.evenly_mean
            );
        }
        Command::Run { run } => {
            let p = run.pipeline()?;
            let report = p.run()?;
            println!("{}", ar_table(&report.recognition));
            if let Some(d) = &report.detection {
                println!("{}", ad_table(d));
            }
            println!("wrote {}", p.config().output_dir.join(REPORT_FILE).display());
        }
        Command::Synth {
            out,
            spec,
            n_videos,
            fps,
            event_duration,
            placement,
            seed,
            split_seed,
        } => {
            let mut s = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                }
                None => SyntheticSpec::default(),
            };
            s.n_videos = n_videos.unwrap_or(s.n_videos);
            s.fps = fps.unwrap_or(s.fps);
            s.event_duration = event_duration.unwrap_or(s.event_duration);
            s.seed = seed.unwrap_or(s.seed);
            if let Some(p) = placement {
                s.event_placement = match p {
                    Placement::Centered => EventPlacement::Centered,
                    Placement::Random => EventPlacement::Random,
                };
            }
            let videos = generate_synthetic(&s)?;
            write_synthetic(&s, &videos, &out, split_seed)?;
            // Relative paths, so the directory can be moved.
            let config = RunConfig {
                clip_length: s.clip_length,
                ..RunConfig::for_synthetic(Path::new(""))
            };
            write_pretty(&out.join(SYNTH_CONFIG_FILE), &config)?;
            println!(
                "{} videos in {}; run with `marine run --config {}`",
                videos.len(),
                out.display(),
                out.join(SYNTH_CONFIG_FILE).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
