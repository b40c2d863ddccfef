use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, Detection};

use super::ap::mean_defined;
use super::GroundTruthBox;

/// IoU a top detection needs to count as a correct localization.
pub const CORLOC_IOU: f64 = 0.5;

/// Highest-scoring detection per (image, class); earlier input wins ties.
pub fn top_detections(dets: &[Detection]) -> Vec<Detection> {
    let mut best: HashMap<(&str, usize), usize> = HashMap::new();
    let mut order = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        match best.get_mut(&(d.image_id.as_str(), d.class)) {
            Some(j) => {
                if d.score > dets[*j].score {
                    *j = i;
                }
            }
            None => {
                best.insert((d.image_id.as_str(), d.class), i);
                order.push((d.image_id.as_str(), d.class));
            }
        }
    }
    order.iter().map(|k| dets[best[k]].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorLocTable {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// Fraction of images containing a class whose top detection for it hits a
/// ground-truth box of that class. Classes absent from every image are `None`.
pub fn corloc_class(top: &[Detection], gts: &[GroundTruthBox], class: usize) -> Option<f64> {
    let positives: BTreeSet<&str> = gts
        .iter()
        .filter(|g| g.class == class)
        .map(|g| g.image_id.as_str())
        .collect();
    if positives.is_empty() {
        return None;
    }
    let best = top_detections(
        &top.iter()
            .filter(|d| d.class == class)
            .cloned()
            .collect::<Vec<_>>(),
    );
    let hits = positives
        .iter()
        .filter(|&&img| {
            best.iter().find(|d| d.image_id == img).is_some_and(|d| {
                gts.iter()
                    .any(|g| g.class == class && g.image_id == img && iou(&g.bbox, &d.bbox) >= CORLOC_IOU)
            })
        })
        .count();
    Some(hits as f64 / positives.len() as f64)
}

pub fn corloc(dets: &[Detection], gts: &[GroundTruthBox], num_classes: usize) -> CorLocTable {
    let top = top_detections(dets);
    let per_class: Vec<Option<f64>> = (0..num_classes).map(|c| corloc_class(&top, gts, c)).collect();
    CorLocTable {
        mean: mean_defined(per_class.iter().copied()),
        per_class,
    }
}
