//! Weakly supervised object detection from image captions.
//!
//! The crate has two halves. [`labels`] and [`textclf`] turn free-form
//! captions into image-level class labels: exact class-name matching first,
//! and a text-only classifier for captions that name nothing. [`mil`] and
//! [`oicr`] then train a detector from those labels alone: a two-stream
//! multiple-instance head followed by a stack of refinement classifiers
//! supervised by their predecessors' top-scoring proposals. [`geometry`] and
//! [`eval`] hold box utilities and the PASCAL / COCO / CorLoc metrics, and
//! [`pipeline`] wires everything to files on disk.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod labels;
pub mod mil;
pub mod nn;
pub mod oicr;
pub mod optim;
pub mod pipeline;
pub mod textclf;

pub use error::{Error, Result};
pub use eval::{EvaluationReport, GroundTruthBox};
pub use geometry::{iou, nms, BBox, Detection};
pub use labels::{
    tokenize, CategoryVocabulary, EmbeddingTable, LabelSet, Provenance, TokenizedCaption,
};
pub use mil::{mil_forward, MilHead, ProposalSet, ScoreBundle};
pub use oicr::{InstanceTargets, RefinementStack};
pub use textclf::TextClassifier;
