//! Metrics for recognition and detection, bootstrap spreads and the
//! distribution check used when subsampling datasets.

mod bootstrap;
mod chi2;
mod detection;
mod metrics;
mod ranking;
mod recognition;

pub use bootstrap::{
    bootstrap, bootstrap_with, BootstrapReport, Resampler, SeededResampler, DEFAULT_RESAMPLES,
};
pub use chi2::{chi2_homogeneity, Chi2Result, MIN_EXPECTED};
pub use detection::{detection_ap, match_video, t_iou, DetectionAp, TimeInterval, VideoMatch};
pub use metrics::{confusion_metrics, roc_auc, BinaryConfusion, ClassificationMetrics, RocCurve};
pub use ranking::{average_precision, multilabel_map, MapReport};
pub use recognition::{evaluate_binary, evaluate_multilabel, ArReport, BinaryArReport, MultilabelArReport};
