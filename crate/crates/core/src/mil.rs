//! Two-stream multiple-instance detection head.
//!
//! Each proposal gets a classification logit and a detection logit per class.
//! Detection logits are normalized with a softmax over proposals, and the
//! image-level prediction is the sigmoid of the detection-weighted sum of
//! classification *logits*.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::labels::LabelSet;
use crate::nn::{sigmoid, softmax_columns, Affine};

/// Upper bound on proposals per image.
pub const MAX_PROPOSALS: usize = 500;
/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-8;

/// Proposals of one image with their `m x d` feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub image_id: String,
    pub boxes: Vec<BBox>,
    pub features: Array2<f64>,
}

impl ProposalSet {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BBox>, features: Array2<f64>) -> Result<Self> {
        let m = boxes.len();
        if m == 0 || m > MAX_PROPOSALS {
            return Err(Error::Invalid(format!(
                "{m} proposals, expected between 1 and {MAX_PROPOSALS}"
            )));
        }
        if features.nrows() != m {
            return Err(Error::ShapeMismatch(format!(
                "{m} boxes but {} feature rows",
                features.nrows()
            )));
        }
        if let Some(b) = boxes.iter().find(|b| !b.is_valid()) {
            return Err(Error::Invalid(format!("invalid proposal box {b:?}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite proposal feature".into()));
        }
        Ok(Self {
            image_id: image_id.into(),
            boxes,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Classification and detection branches, both `d -> C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilHead {
    pub cls: Affine,
    pub det: Affine,
}

impl MilHead {
    pub fn init<R: Rng + ?Sized>(dim: usize, num_classes: usize, rng: &mut R) -> Self {
        Self {
            cls: Affine::init(dim, num_classes, rng),
            det: Affine::init(dim, num_classes, rng),
        }
    }

    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        Self {
            cls: Affine::zeros(dim, num_classes),
            det: Affine::zeros(dim, num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cls.outputs()
    }

    pub fn dim(&self) -> usize {
        self.cls.inputs()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.cls.slices().into_iter().chain(self.det.slices()).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let [a, b] = self.cls.slices_mut();
        let [c, d] = self.det.slices_mut();
        vec![a, b, c, d]
    }

    pub fn add_assign(&mut self, other: &MilHead) {
        self.cls.add_assign(&other.cls);
        self.det.add_assign(&other.det);
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.cls.scale_mut(s);
        self.det.scale_mut(s);
    }
}

/// Per-proposal scores (`m x C`) and the image-level prediction (`C`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    pub o_cls: Array2<f64>,
    pub o_det: Array2<f64>,
    pub p_cls: Array2<f64>,
    pub p_det: Array2<f64>,
    pub p_hat: Array1<f64>,
}

impl ScoreBundle {
    /// Detection-weighted sum of classification logits, before the sigmoid.
    pub fn aggregated_logits(&self) -> Array1<f64> {
        (&self.p_det * &self.o_cls).sum_axis(Axis(0))
    }
}

pub fn mil_forward(proposals: &ProposalSet, head: &MilHead) -> Result<ScoreBundle> {
    if proposals.dim() != head.dim() {
        return Err(Error::ShapeMismatch(format!(
            "features of width {} for a head expecting {}",
            proposals.dim(),
            head.dim()
        )));
    }
    let x = proposals.features.view();
    let o_cls = head.cls.forward(&x);
    let o_det = head.det.forward(&x);
    let p_cls = o_cls.mapv(sigmoid);
    let p_det = softmax_columns(&o_det);
    let p_hat = (&p_det * &o_cls).sum_axis(Axis(0)).mapv(sigmoid);
    let bundle = ScoreBundle {
        o_cls,
        o_det,
        p_cls,
        p_det,
        p_hat,
    };
    let finite = [&bundle.o_cls, &bundle.o_det, &bundle.p_cls, &bundle.p_det]
        .iter()
        .all(|a| a.iter().all(|v| v.is_finite()))
        && bundle.p_hat.iter().all(|v| v.is_finite());
    if finite {
        Ok(bundle)
    } else {
        Err(Error::NonFiniteScore("multiple-instance head"))
    }
}

/// Binary cross-entropy of the image-level prediction, summed over classes.
pub fn mid_loss(scores: &ScoreBundle, labels: &LabelSet) -> f64 {
    let y = labels.multi_hot(scores.p_hat.len());
    scores
        .p_hat
        .iter()
        .zip(&y)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// Gradient of [`mid_loss`] with respect to both branches.
///
/// Clamped probabilities contribute no gradient.
pub fn mid_loss_gradient(proposals: &ProposalSet, scores: &ScoreBundle, labels: &LabelSet) -> MilHead {
    let c = scores.p_hat.len();
    let y = labels.multi_hot(c);
    let z = scores.aggregated_logits();
    let g_z: Vec<f64> = (0..c)
        .map(|k| {
            let p = scores.p_hat[k];
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                p - y[k]
            } else {
                0.0
            }
        })
        .collect();
    let mut g_cls = scores.p_det.clone();
    let mut g_det = scores.p_det.clone();
    for ((i, k), g) in g_cls.indexed_iter_mut() {
        *g *= g_z[k];
        g_det[[i, k]] *= g_z[k] * (scores.o_cls[[i, k]] - z[k]);
    }
    let x = proposals.features.view();
    MilHead {
        cls: Affine::backward(&x, &g_cls.view()),
        det: Affine::backward(&x, &g_det.view()),
    }
}

/// Iteration-0 detection scores: `p_cls * p_det` per class plus a zero
/// background column stored last.
pub fn initial_detection_scores(scores: &ScoreBundle) -> Array2<f64> {
    let (m, c) = scores.p_cls.dim();
    let mut s = Array2::zeros((m, c + 1));
    s.slice_mut(ndarray::s![.., ..c])
        .assign(&(&scores.p_cls * &scores.p_det));
    s
}
