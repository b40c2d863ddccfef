use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::textclf::LabelPrReport;

use super::{ApTable, CocoSummary, CorLocTable};

/// Everything one `evaluate` run computes. Serializes to JSON; [`to_text`]
/// renders the human-readable tables.
///
/// [`to_text`]: EvaluationReport::to_text
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub class_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voc: Option<ApTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coco: Option<CocoSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corloc: Option<CorLocTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelPrReport>,
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:6.2}", 100.0 * v),
        None => format!("{:>6}", "n/a"),
    }
}

impl EvaluationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(5);

        if let Some(voc) = &self.voc {
            let _ = writeln!(
                out,
                "Average precision (%) at IoU {:.2}, {:?} interpolation",
                voc.iou_threshold, voc.interpolation
            );
            for (name, ap) in self.class_names.iter().zip(&voc.per_class) {
                let _ = writeln!(out, "  {name:<width$}  {}", pct(*ap));
            }
            let _ = writeln!(out, "  {:<width$}  {}\n", "mAP", pct(voc.mean));
        }

        if let Some(coco) = &self.coco {
            let _ = writeln!(out, "COCO-style average precision (%)");
            for (label, v) in [
                ("AP@[.50:.95]", coco.ap),
                ("AP@.50", coco.ap50),
                ("AP@.75", coco.ap75),
                ("AP small", coco.ap_small),
                ("AP medium", coco.ap_medium),
                ("AP large", coco.ap_large),
            ] {
                let _ = writeln!(out, "  {label:<12}  {}", pct(v));
            }
            out.push('\n');
        }

        if let Some(cl) = &self.corloc {
            let _ = writeln!(out, "CorLoc (%)");
            for (name, v) in self.class_names.iter().zip(&cl.per_class) {
                let _ = writeln!(out, "  {name:<width$}  {}", pct(*v));
            }
            let _ = writeln!(out, "  {:<width$}  {}\n", "mean", pct(cl.mean));
        }

        if let Some(pr) = &self.labels {
            let _ = writeln!(out, "Label precision / recall (%)");
            for (name, c) in self.class_names.iter().zip(&pr.per_class) {
                let _ = writeln!(
                    out,
                    "  {name:<width$}  P {}  R {}",
                    pct(c.precision),
                    pct(c.recall)
                );
            }
            let _ = writeln!(
                out,
                "  {:<width$}  P {}  R {}",
                "micro",
                pct(pr.precision),
                pct(pr.recall)
            );
        }
        out
    }
}
