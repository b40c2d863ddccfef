//! Report assembly and emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{coco_ap_sweep, corloc, per_class_ap, pr_curve, EvaluationReport, GroundTruthBox, Interpolation, VOC_IOU};
use crate::geometry::Detection;
use crate::labels::{CategoryVocabulary, LabelSet, Provenance};
use crate::textclf::{eval_label_pr, CorpusRecord, LabelPrReport};

use super::labeling::{union_labels, ImageLabels, LabelResources, LabelStrategy};
use super::manifest::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Voc,
    Coco,
    CorLoc,
    LabelPr,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voc" => Ok(Protocol::Voc),
            "coco" => Ok(Protocol::Coco),
            "corloc" => Ok(Protocol::CorLoc),
            "labelpr" => Ok(Protocol::LabelPr),
            _ => Err(Error::InvalidConfig(format!("unknown protocol `{s}`"))),
        }
    }
}

/// Detection metrics for the requested protocols; `LabelPr` is ignored here.
pub fn evaluate_detections(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    class_names: &[String],
    protocols: &[Protocol],
    interp: Interpolation,
) -> EvaluationReport {
    let c = class_names.len();
    let mut report = EvaluationReport {
        class_names: class_names.to_vec(),
        ..Default::default()
    };
    for p in protocols {
        match p {
            Protocol::Voc => report.voc = Some(per_class_ap(dets, gts, c, VOC_IOU, interp)),
            Protocol::Coco => report.coco = Some(coco_ap_sweep(dets, gts, c)),
            Protocol::CorLoc => report.corloc = Some(corloc(dets, gts, c)),
            Protocol::LabelPr => {}
        }
    }
    report
}

/// Precision and recall of inferred image labels against manifest gold labels.
///
/// Records without gold labels are skipped; records without inferred labels
/// count as predicting nothing.
pub fn label_report(manifest: &DatasetManifest, labels: &ImageLabels, vocab: &CategoryVocabulary) -> Result<LabelPrReport> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for r in &manifest.records {
        if let Some(g) = manifest.gold_labels(r, vocab)? {
            let p = labels
                .get(&r.image_id)
                .cloned()
                .unwrap_or_else(|| LabelSet::empty(g.provenance));
            pred.push(p);
            gold.push(g);
        }
    }
    eval_label_pr(&pred, &gold, vocab.len())
}

/// Label precision and recall of `strategy` on a caption corpus. With `join`
/// each record's captions are labelled as one text instead of one by one.
pub fn corpus_label_report(
    records: &[CorpusRecord],
    strategy: LabelStrategy,
    vocab: &CategoryVocabulary,
    res: LabelResources<'_>,
    join: bool,
) -> Result<LabelPrReport> {
    let mut pred = Vec::with_capacity(records.len());
    let mut gold = Vec::with_capacity(records.len());
    for r in records {
        let g = LabelSet::new(vocab.indices(&r.gold_labels)?, Provenance::Gold);
        pred.push(match strategy {
            LabelStrategy::Gold => g.clone(),
            _ if join => union_labels(&[r.captions.join(" ")], strategy, vocab, res)?,
            _ => union_labels(&r.captions, strategy, vocab, res)?,
        });
        gold.push(g);
    }
    eval_label_pr(&pred, &gold, vocab.len())
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(dir: impl AsRef<Path>, report: &EvaluationReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    fs::write(dir.join("report.txt"), report.to_text())?;
    Ok(())
}

/// Per-class precision/recall curves as `pr_<class>.csv` and `pr_<class>.svg`.
pub fn write_pr_curves(
    dir: impl AsRef<Path>,
    dets: &[Detection],
    gts: &[GroundTruthBox],
    class_names: &[String],
    iou_thr: f64,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (c, name) in class_names.iter().enumerate() {
        let g: Vec<GroundTruthBox> = gts.iter().filter(|g| g.class == c).cloned().collect();
        if g.is_empty() {
            continue;
        }
        let d: Vec<Detection> = dets.iter().filter(|d| d.class == c).cloned().collect();
        let curve = pr_curve(&d, &g, iou_thr);
        let stem = name.replace(' ', "_");
        let mut csv = String::from("score,recall,precision\n");
        for p in &curve {
            let _ = writeln!(csv, "{:.6},{:.6},{:.6}", p.score, p.recall, p.precision);
        }
        fs::write(dir.join(format!("pr_{stem}.csv")), csv)?;
        let points: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
        fs::write(dir.join(format!("pr_{stem}.svg")), pr_svg(name, &points))?;
    }
    Ok(())
}

fn pr_svg(title: &str, points: &[(f64, f64)]) -> String {
    const SIZE: f64 = 300.0;
    const PAD: f64 = 40.0;
    let x = |r: f64| PAD + r * SIZE;
    let y = |p: f64| PAD + (1.0 - p) * SIZE;
    let mut path = String::new();
    for (i, (r, p)) in points.iter().enumerate() {
        let _ = write!(path, "{}{:.1},{:.1} ", if i == 0 { "M" } else { "L" }, x(*r), y(*p));
    }
    let total = SIZE + 2.0 * PAD;
    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}">
<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#888"/>
<text x="{PAD}" y="{ty}" font-size="14">{title}</text>
<text x="{cx}" y="{by}" font-size="12" text-anchor="middle">recall</text>
<text x="12" y="{cy}" font-size="12" transform="rotate(-90 12 {cy})" text-anchor="middle">precision</text>
<path d="{path}" fill="none" stroke="#c33" stroke-width="2"/>
</svg>
"##,
        ty = PAD - 10.0,
        cx = PAD + SIZE / 2.0,
        by = total - 10.0,
        cy = PAD + SIZE / 2.0,
        path = path.trim_end(),
    )
}
