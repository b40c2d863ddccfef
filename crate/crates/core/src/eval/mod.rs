//! Detection and localization metrics plus report rendering.

mod ap;
mod coco;
mod corloc;
mod report;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

pub use ap::{
    average_precision, average_precision_with, per_class_ap, pr_curve, ApTable, Interpolation,
    PrPoint,
};
pub use coco::{coco_ap_sweep, coco_thresholds, CocoSummary, MAX_DETECTIONS};
pub use corloc::{corloc, corloc_class, top_detections, CorLocTable, CORLOC_IOU};
pub use report::EvaluationReport;

/// IoU threshold of the PASCAL protocol.
pub const VOC_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class: usize,
    pub bbox: BBox,
}
