//! Multi-scale inference and the tab-separated detection dump.
//!
//! One detection per line, fixed decimals so dumps diff cleanly:
//!
//! ```text
//! image_id<TAB>class<TAB>score<TAB>x1<TAB>y1<TAB>x2<TAB>y2
//! img_007  dog  0.913204  24.00  48.00  48.00  72.00
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, LineIssue, Result};
use crate::geometry::{average_multiscale, nms_indices, BBox, Detection};
use crate::labels::CategoryVocabulary;

use super::config::TrainConfig;
use super::detector::{DetectorModel, FeatureSource};

/// Scores averaged over the configured scales, per-class NMS, then the
/// confidence floor. Records without an image run once on stored features.
pub fn detect_image(model: &DetectorModel, source: &FeatureSource, idx: usize, config: &TrainConfig) -> Result<Vec<Detection>> {
    let scales: Vec<Option<u32>> = if source.has_image(idx) {
        config.scales.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut boxes = Vec::new();
    let mut per_scale = Vec::with_capacity(scales.len());
    for s in scales {
        let p = source.get(idx, s, false)?;
        per_scale.push(model.scores(&p, config.inference)?);
        if boxes.is_empty() {
            boxes = p.boxes.clone();
        }
    }
    let scores = average_multiscale(&per_scale)?;
    let image_id = &source.manifest().records[idx].image_id;
    let mut out = Vec::new();
    for class in 0..model.num_classes() {
        let column: Vec<f64> = scores.column(class).to_vec();
        for i in nms_indices(&boxes, &column, config.nms_iou) {
            if column[i] > config.confidence_floor {
                out.push(Detection {
                    image_id: image_id.clone(),
                    class,
                    score: column[i],
                    bbox: boxes[i],
                });
            }
        }
    }
    Ok(out)
}

/// Detections for every record, in manifest order.
pub fn detect_all(model: &DetectorModel, source: &FeatureSource, config: &TrainConfig) -> Result<Vec<Detection>> {
    let per_image = (0..source.len())
        .into_par_iter()
        .map(|i| detect_image(model, source, i, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn format_dump(dets: &[Detection], class_names: &[String]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = d.bbox;
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
            d.image_id, class_names[d.class], d.score, b.x1, b.y1, b.x2, b.y2
        );
    }
    s
}

pub fn write_dump(path: impl AsRef<Path>, dets: &[Detection], class_names: &[String]) -> Result<()> {
    fs::write(path, format_dump(dets, class_names))?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>, vocab: &CategoryVocabulary) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, vocab) {
            Ok(d) => out.push(d),
            Err(message) => issues.push(LineIssue { line: n + 1, message }),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(Error::Parse {
            path: path.into(),
            issues,
        })
    }
}

fn parse_line(line: &str, vocab: &CategoryVocabulary) -> std::result::Result<Detection, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [image_id, class, rest @ ..] = fields.as_slice() else {
        return Err("expected 7 tab-separated fields".into());
    };
    if rest.len() != 5 {
        return Err(format!("expected 7 tab-separated fields, found {}", fields.len()));
    }
    let class = vocab.index_of(class).ok_or_else(|| format!("unknown class `{class}`"))?;
    let nums = rest
        .iter()
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad number `{v}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let bbox = BBox::try_new(nums[1], nums[2], nums[3], nums[4]).map_err(|e| e.to_string())?;
    Ok(Detection {
        image_id: image_id.to_string(),
        class,
        score: nums[0],
        bbox,
    })
}
