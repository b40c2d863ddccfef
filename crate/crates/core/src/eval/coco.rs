use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{rank_by_score, Detection};

use super::ap::{curve_from_outcomes, integrate, match_ranked, mean_defined, Interpolation};
use super::GroundTruthBox;

/// Area ranges used by the public COCO protocol, in squared pixels.
pub const SMALL_MAX_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_MAX_AREA: f64 = 96.0 * 96.0;
/// Detections kept per image and class before matching.
pub const MAX_DETECTIONS: usize = 100;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoSummary {
    pub thresholds: Vec<f64>,
    /// Mean over classes at each threshold.
    pub ap_per_threshold: Vec<Option<f64>>,
    /// Mean over thresholds 0.5:0.95 and classes.
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct AreaRange {
    min: f64,
    max: f64,
}

impl AreaRange {
    const ALL: AreaRange = AreaRange {
        min: 0.0,
        max: f64::INFINITY,
    };

    fn contains(&self, area: f64) -> bool {
        area >= self.min && area < self.max
    }
}

fn cap_per_image<'a>(dets: &[&'a Detection]) -> Vec<&'a Detection> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    dets.iter()
        .copied()
        .filter(|d| {
            let n = seen.entry(d.image_id.as_str()).or_default();
            *n += 1;
            *n <= MAX_DETECTIONS
        })
        .collect()
}

/// AP of one class at one threshold, with out-of-range ground truth ignored.
fn class_ap(dets: &[&Detection], gts: &[&GroundTruthBox], thr: f64, range: AreaRange) -> Option<f64> {
    let ignored: Vec<bool> = gts.iter().map(|g| !range.contains(g.bbox.area())).collect();
    let npos = ignored.iter().filter(|i| !**i).count();
    if npos == 0 {
        return None;
    }
    let outcomes = match_ranked(dets, gts, &ignored, thr, |d| !range.contains(d.bbox.area()));
    Some(integrate(
        &curve_from_outcomes(dets, &outcomes, npos),
        Interpolation::AllPoint,
    ))
}

fn sweep(
    per_class: &[(Vec<&Detection>, Vec<&GroundTruthBox>)],
    thresholds: &[f64],
    range: AreaRange,
) -> Vec<Option<f64>> {
    thresholds
        .iter()
        .map(|&t| mean_defined(per_class.iter().map(|(d, g)| class_ap(d, g, t, range))))
        .collect()
}

/// Average precision swept over IoU 0.5:0.05:0.95, with size-bucketed variants.
///
/// Uses box areas for the size buckets and all-point interpolation at each
/// threshold. At most [`MAX_DETECTIONS`] detections per image and class count.
pub fn coco_ap_sweep(dets: &[Detection], gts: &[GroundTruthBox], num_classes: usize) -> CocoSummary {
    let order = rank_by_score(dets.iter().map(|d| d.score));
    let per_class: Vec<(Vec<&Detection>, Vec<&GroundTruthBox>)> = (0..num_classes)
        .map(|c| {
            let ranked: Vec<&Detection> = order.iter().map(|&i| &dets[i]).filter(|d| d.class == c).collect();
            let g: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.class == c).collect();
            (cap_per_image(&ranked), g)
        })
        .collect();
    let thresholds = coco_thresholds();
    let ap_per_threshold = sweep(&per_class, &thresholds, AreaRange::ALL);
    let bucket = |min, max| mean_defined(sweep(&per_class, &thresholds, AreaRange { min, max }));
    CocoSummary {
        ap: mean_defined(ap_per_threshold.iter().copied()),
        ap50: ap_per_threshold[0],
        ap75: ap_per_threshold[5],
        ap_small: bucket(0.0, SMALL_MAX_AREA),
        ap_medium: bucket(SMALL_MAX_AREA, MEDIUM_MAX_AREA),
        ap_large: bucket(MEDIUM_MAX_AREA, f64::INFINITY),
        thresholds,
        ap_per_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn det(b: BBox) -> Detection {
        Detection {
            image_id: "a".into(),
            class: 0,
            score: 0.9,
            bbox: b,
        }
    }

    fn gt(b: BBox) -> GroundTruthBox {
        GroundTruthBox {
            image_id: "a".into(),
            class: 0,
            bbox: b,
        }
    }

    #[test]
    fn thresholds_are_exact() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[2], 0.6);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn perfect_detection() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let s = coco_ap_sweep(&[det(b)], &[gt(b)], 1);
        assert_eq!(s.ap, Some(1.0));
        assert!(s.ap_per_threshold.iter().all(|v| *v == Some(1.0)));
        assert_eq!(s.ap_small, Some(1.0));
        assert_eq!(s.ap_medium, None);
        assert_eq!(s.ap_large, None);
    }

    #[test]
    fn iou_point_six_passes_three_thresholds() {
        let s = coco_ap_sweep(
            &[det(BBox::new(0.0, 0.0, 10.0, 6.0))],
            &[gt(BBox::new(0.0, 0.0, 10.0, 10.0))],
            1,
        );
        assert!((s.ap.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(s.ap50, Some(1.0));
        assert_eq!(s.ap75, Some(0.0));
    }

    #[test]
    fn empty_detections() {
        let s = coco_ap_sweep(&[], &[gt(BBox::new(0.0, 0.0, 10.0, 10.0))], 1);
        assert_eq!(s.ap, Some(0.0));
    }

    #[test]
    fn out_of_bucket_false_positive_is_ignored() {
        // small GT matched, plus an unmatched large detection
        let small = BBox::new(0.0, 0.0, 10.0, 10.0);
        let mut big = det(BBox::new(100.0, 100.0, 300.0, 300.0));
        big.score = 0.95;
        let s = coco_ap_sweep(&[big, det(small)], &[gt(small)], 1);
        assert_eq!(s.ap_small, Some(1.0));
        assert_eq!(s.ap50, Some(0.5));
    }
}
