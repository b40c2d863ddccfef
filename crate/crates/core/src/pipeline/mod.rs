//! File formats, the toy feature extractor, training and inference drivers.

pub mod coco;
pub mod config;
pub mod detect;
pub mod detector;
pub mod evaluate;
pub mod features;
pub mod labeling;
pub mod manifest;
pub mod proposals;
pub mod synthetic;

pub use config::TrainConfig;
pub use detect::{detect_all, detect_image, read_dump, write_dump};
pub use detector::{
    train_detector, DetectorCheckpoint, DetectorModel, FeatureSource, LossBreakdown, TrainOptions, TrainOutcome,
    Validation,
};
pub use evaluate::{corpus_label_report, evaluate_detections, label_report, write_pr_curves, write_report, Protocol};
pub use features::ToyFeatureProvider;
pub use labeling::{build_image_labels, union_labels, ImageLabels, LabelResources, LabelStrategy};
pub use manifest::{load_manifest, DatasetManifest, ManifestRecord};
pub use proposals::{grid_proposals, read_proposals, write_proposals};
pub use synthetic::{make_synthetic, SyntheticConfig, SyntheticPaths};
