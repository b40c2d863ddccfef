use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, rank_by_score, Detection};

use super::GroundTruthBox;

/// How the precision/recall curve is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope (VOC2010+).
    #[default]
    AllPoint,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1 (VOC2007).
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Greedy matching of ranked detections to ground truth.
///
/// `ranked` must already be sorted by descending score. A detection takes the
/// unmatched ground-truth box of its image and class with the highest IoU at
/// or above `iou_thr`. Ignored ground truth is only taken when no regular box
/// qualifies, and makes the detection neutral. Unmatched detections for which
/// `ignore_unmatched` holds are neutral as well.
pub(crate) fn match_ranked(
    ranked: &[&Detection],
    gts: &[&GroundTruthBox],
    gt_ignored: &[bool],
    iou_thr: f64,
    ignore_unmatched: impl Fn(&Detection) -> bool,
) -> Vec<Outcome> {
    let mut by_image: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
    for (j, g) in gts.iter().enumerate() {
        by_image
            .entry((g.image_id.as_str(), g.class))
            .or_default()
            .push(j);
    }
    let mut matched = vec![false; gts.len()];
    ranked
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64, bool)> = None;
            if let Some(cands) = by_image.get(&(d.image_id.as_str(), d.class)) {
                for &j in cands {
                    if matched[j] {
                        continue;
                    }
                    let ov = iou(&d.bbox, &gts[j].bbox);
                    if ov < iou_thr {
                        continue;
                    }
                    let ign = gt_ignored[j];
                    let better = match best {
                        None => true,
                        // regular ground truth wins over ignored
                        Some((_, bo, bi)) => (bi && !ign) || (bi == ign && ov > bo),
                    };
                    if better {
                        best = Some((j, ov, ign));
                    }
                }
            }
            match best {
                Some((j, _, ign)) => {
                    matched[j] = true;
                    if ign {
                        Outcome::Ignored
                    } else {
                        Outcome::TruePositive
                    }
                }
                None if ignore_unmatched(d) => Outcome::Ignored,
                None => Outcome::FalsePositive,
            }
        })
        .collect()
}

/// One point of a precision/recall curve, taken after each ranked detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

pub(crate) fn curve_from_outcomes(
    ranked: &[&Detection],
    outcomes: &[Outcome],
    npos: usize,
) -> Vec<PrPoint> {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(outcomes.len());
    for (d, o) in ranked.iter().zip(outcomes) {
        match o {
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => fp += 1,
            Outcome::Ignored => continue,
        }
        curve.push(PrPoint {
            score: d.score,
            recall: tp as f64 / npos as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    curve
}

pub(crate) fn integrate(curve: &[PrPoint], interp: Interpolation) -> f64 {
    match interp {
        Interpolation::AllPoint => {
            let mut mrec = Vec::with_capacity(curve.len() + 2);
            let mut mpre = Vec::with_capacity(curve.len() + 2);
            mrec.push(0.0);
            mpre.push(0.0);
            for p in curve {
                mrec.push(p.recall);
                mpre.push(p.precision);
            }
            mrec.push(1.0);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (0..mrec.len() - 1)
                .filter(|&i| mrec[i + 1] != mrec[i])
                .map(|i| (mrec[i + 1] - mrec[i]) * mpre[i + 1])
                .sum()
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    curve
                        .iter()
                        .filter(|p| p.recall >= t)
                        .map(|p| p.precision)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

fn ranked(dets: &[Detection]) -> Vec<&Detection> {
    rank_by_score(dets.iter().map(|d| d.score))
        .into_iter()
        .map(|i| &dets[i])
        .collect()
}

/// Precision/recall curve of `dets` against `gts` at one IoU threshold.
pub fn pr_curve(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> Vec<PrPoint> {
    if gts.is_empty() {
        return Vec::new();
    }
    let ranked = ranked(dets);
    let gts: Vec<&GroundTruthBox> = gts.iter().collect();
    let outcomes = match_ranked(&ranked, &gts, &vec![false; gts.len()], iou_thr, |_| false);
    curve_from_outcomes(&ranked, &outcomes, gts.len())
}

/// All-point interpolated average precision; `None` when there is no ground truth.
///
/// Detections match ground truth of the same image and class only, so the
/// inputs are normally already restricted to a single class.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> Option<f64> {
    average_precision_with(dets, gts, iou_thr, Interpolation::AllPoint)
}

pub fn average_precision_with(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    iou_thr: f64,
    interp: Interpolation,
) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    Some(integrate(&pr_curve(dets, gts, iou_thr), interp))
}

/// Per-class average precision plus the mean over classes that have ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApTable {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

pub(crate) fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn per_class_ap(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    num_classes: usize,
    iou_thr: f64,
    interp: Interpolation,
) -> ApTable {
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let d: Vec<Detection> = dets.iter().filter(|d| d.class == c).cloned().collect();
            let g: Vec<GroundTruthBox> = gts.iter().filter(|g| g.class == c).cloned().collect();
            average_precision_with(&d, &g, iou_thr, interp)
        })
        .collect();
    ApTable {
        iou_threshold: iou_thr,
        interpolation: interp,
        mean: mean_defined(per_class.iter().copied()),
        per_class,
    }
}
