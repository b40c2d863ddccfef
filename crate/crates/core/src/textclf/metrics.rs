use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPr {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `None` when nothing was predicted for the class.
    pub precision: Option<f64>,
    /// `None` when the class never occurs in the gold labels.
    pub recall: Option<f64>,
}

impl ClassPr {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }
}

/// Micro-averaged label precision/recall over all (image, class) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPrReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub per_class: Vec<ClassPr>,
}

pub fn eval_label_pr(pred: &[LabelSet], gold: &[LabelSet], num_classes: usize) -> Result<LabelPrReport> {
    if pred.len() != gold.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} gold label sets",
            pred.len(),
            gold.len()
        )));
    }
    let mut counts = vec![(0usize, 0usize, 0usize); num_classes];
    for (p, g) in pred.iter().zip(gold) {
        for &c in p.present.union(&g.present) {
            if c >= num_classes {
                return Err(Error::Invalid(format!("class index {c} out of range")));
            }
            match (p.contains(c), g.contains(c)) {
                (true, true) => counts[c].0 += 1,
                (true, false) => counts[c].1 += 1,
                (false, true) => counts[c].2 += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let total = ClassPr::from_counts(tp, fp, fn_);
    Ok(LabelPrReport {
        precision: total.precision,
        recall: total.recall,
        per_class: counts
            .into_iter()
            .map(|(tp, fp, fn_)| ClassPr::from_counts(tp, fp, fn_))
            .collect(),
    })
}
