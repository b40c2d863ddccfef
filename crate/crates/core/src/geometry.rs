//! Axis-aligned boxes, overlap, greedy suppression and score averaging.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Builds a box and rejects degenerate or non-finite coordinates.
    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self::new(x1, y1, x2, y2);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Invalid(format!("degenerate box ({x1}, {y1}, {x2}, {y2})")))
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Mirror across the vertical axis of an image `image_width` wide.
    pub fn flip_horizontal(&self, image_width: f64) -> BBox {
        BBox::new(image_width - self.x2, self.y1, image_width - self.x1, self.y2)
    }

    pub fn scale(&self, factor: f64) -> BBox {
        BBox::new(
            self.x1 * factor,
            self.y1 * factor,
            self.x2 * factor,
            self.y2 * factor,
        )
    }
}

/// Intersection over union, in `[0, 1]`; zero for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A scored, class-labelled box on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
}

/// Indices of `scores` sorted by descending score; ties keep input order.
pub(crate) fn rank_by_score(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy suppression over boxes of a single image and class.
///
/// Returns kept indices, highest score first.
pub fn nms_indices(boxes: &[BBox], scores: &[f64], iou_thr: f64) -> Vec<usize> {
    debug_assert_eq!(boxes.len(), scores.len());
    let mut keep: Vec<usize> = Vec::new();
    for i in rank_by_score(scores.iter().copied()) {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_thr) {
            keep.push(i);
        }
    }
    keep
}

/// Greedy non-maximum suppression, applied independently per (image, class).
///
/// The output is sorted by descending score (ties in input order), so every
/// group's survivors appear in the order they were kept.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut kept: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
    let mut out = Vec::new();
    for i in rank_by_score(dets.iter().map(|d| d.score)) {
        let d = &dets[i];
        let group = kept.entry((d.image_id.as_str(), d.class)).or_default();
        if group.iter().all(|&k| iou(&dets[k].bbox, &d.bbox) <= iou_thr) {
            group.push(i);
            out.push(d.clone());
        }
    }
    out
}

/// Elementwise mean of per-scale proposal score matrices.
pub fn average_multiscale(score_sets: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = score_sets
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no score sets to average".into()))?;
    let mut sum = Array2::<f64>::zeros(first.raw_dim());
    for s in score_sets {
        if s.raw_dim() != first.raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "score set of shape {:?} does not match {:?}",
                s.shape(),
                first.shape()
            )));
        }
        sum += s;
    }
    Ok(sum / score_sets.len() as f64)
}
