//! Online instance classifier refinement.
//!
//! A stack of `(C+1)`-way heads (background last). Head `k` is trained on
//! pseudo instance labels derived from the scores of stage `k-1`, where stage
//! 0 is the multiple-instance head.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::labels::LabelSet;
use crate::mil::{initial_detection_scores, ProposalSet, ScoreBundle, PROB_EPS};
use crate::nn::{softmax_rows, Affine};

pub const DEFAULT_REFINEMENTS: usize = 3;
pub const DEFAULT_OICR_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStack {
    /// Each head maps `d -> C+1`.
    pub heads: Vec<Affine>,
    pub iou_threshold: f64,
}

impl RefinementStack {
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        num_classes: usize,
        refinements: usize,
        iou_threshold: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "refinement IoU threshold {iou_threshold} outside (0, 1]"
            )));
        }
        Ok(Self {
            heads: (0..refinements)
                .map(|_| Affine::init(dim, num_classes + 1, rng))
                .collect(),
            iou_threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Pseudo instance labels, `m x (C+1)`, each row a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTargets(pub Array2<f64>);

/// Per-proposal softmax over the `C+1` outputs of one refinement head.
pub fn refine_scores(proposals: &ProposalSet, head: &Affine) -> Result<Array2<f64>> {
    if proposals.dim() != head.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "features of width {} for a head expecting {}",
            proposals.dim(),
            head.inputs()
        )));
    }
    let s = softmax_rows(&head.forward(&proposals.features.view()));
    if s.iter().all(|v| v.is_finite()) {
        Ok(s)
    } else {
        Err(Error::NonFiniteScore("refinement head"))
    }
}

/// Pseudo instance labels for the next refinement stage.
///
/// For every present class the top-scoring proposal (lowest index on ties) is
/// taken as reference, and all proposals overlapping it with IoU strictly
/// above `iou_thr` become foreground for that class. Proposals left without
/// foreground are background; each row is then normalized to sum to one.
/// Only the first `C` columns of `scores` are read.
pub fn generate_instance_targets(
    boxes: &[BBox],
    scores: &ArrayView2<f64>,
    labels: &LabelSet,
    iou_thr: f64,
) -> InstanceTargets {
    let (m, cols) = scores.dim();
    let c = cols - 1;
    debug_assert_eq!(boxes.len(), m);
    let mut y = Array2::<f64>::zeros((m, cols));
    for &class in labels.present.iter().filter(|&&k| k < c) {
        let column = scores.column(class);
        let mut top = 0;
        for i in 1..m {
            if column[i] > column[top] {
                top = i;
            }
        }
        let reference = boxes[top];
        for (i, b) in boxes.iter().enumerate() {
            if iou(b, &reference) > iou_thr {
                y[[i, class]] = 1.0;
            }
        }
    }
    for mut row in y.rows_mut() {
        let t: f64 = row.slice(s![..c]).sum();
        if t == 0.0 {
            row[c] = 1.0;
        } else {
            row.slice_mut(s![..c]).mapv_inplace(|v| v / t);
        }
    }
    InstanceTargets(y)
}

/// Mean over proposals of the cross-entropy between targets and scores.
pub fn oicr_loss(scores: &Array2<f64>, targets: &InstanceTargets) -> f64 {
    let m = scores.nrows() as f64;
    -scores
        .iter()
        .zip(targets.0.iter())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&s, &t)| t * s.max(PROB_EPS).ln())
        .sum::<f64>()
        / m
}

/// Gradient of [`oicr_loss`] for one head; targets are constants.
pub fn oicr_loss_gradient(proposals: &ProposalSet, scores: &Array2<f64>, targets: &InstanceTargets) -> Affine {
    let m = scores.nrows() as f64;
    let mut g_logit = Array2::zeros(scores.raw_dim());
    for (i, (srow, trow)) in scores.rows().into_iter().zip(targets.0.rows()).enumerate() {
        // dL/ds, zero where the log was clamped
        let g_s: Vec<f64> = srow
            .iter()
            .zip(trow)
            .map(|(&s, &t)| if s > PROB_EPS { -t / (m * s) } else { 0.0 })
            .collect();
        let dot: f64 = g_s.iter().zip(srow).map(|(g, s)| g * s).sum();
        for (j, &s) in srow.iter().enumerate() {
            g_logit[[i, j]] = s * (g_s[j] - dot);
        }
    }
    Affine::backward(&proposals.features.view(), &g_logit.view())
}

/// `L_mid + sum_k L_k`.
pub fn total_loss(mid: f64, refinement_losses: &[f64]) -> f64 {
    mid + refinement_losses.iter().sum::<f64>()
}

/// How refinement head outputs become final per-proposal class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    #[default]
    Mean,
    LastHead,
}

/// Final `m x C` detection scores: the mean (or last) of the refinement heads'
/// foreground columns, or `p_cls * p_det` when there are no refinement heads.
pub fn inference_scores(mil: &ScoreBundle, refined: &[Array2<f64>], mode: InferenceMode) -> Array2<f64> {
    let c = mil.p_cls.ncols();
    let used: &[Array2<f64>] = match (mode, refined) {
        (_, []) => {
            return initial_detection_scores(mil).slice(s![.., ..c]).to_owned();
        }
        (InferenceMode::LastHead, [.., last]) => std::slice::from_ref(last),
        (InferenceMode::Mean, all) => all,
    };
    let mut acc = Array2::<f64>::zeros((mil.p_cls.nrows(), c));
    for r in used {
        acc += &r.slice(s![.., ..c]);
    }
    acc / used.len() as f64
}
