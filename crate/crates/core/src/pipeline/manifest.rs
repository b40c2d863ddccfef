//! Line-delimited JSON dataset manifests.
//!
//! ```text
//! {"image_id": "img_000", "image": "images/img_000.png", "proposals": "proposals/img_000.bin",
//!  "captions": ["a dog next to a car"], "gold_labels": ["dog", "car"],
//!  "gt_boxes": [{"class": "dog", "bbox": [4, 8, 20, 30]}]}
//! ```
//!
//! Relative paths resolve against the manifest's directory. `image` is
//! optional when the proposal file carries precomputed features.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineIssue, Result};
use crate::eval::GroundTruthBox;
use crate::geometry::BBox;
use crate::labels::{CategoryVocabulary, LabelSet, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub class: String,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    pub proposals: PathBuf,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gt_boxes: Vec<BoxAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    /// Directory that relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.root.join(p)
        }
    }

    pub fn image_path(&self, r: &ManifestRecord) -> Option<PathBuf> {
        r.image.as_deref().map(|p| self.resolve(p))
    }

    pub fn proposal_path(&self, r: &ManifestRecord) -> PathBuf {
        self.resolve(&r.proposals)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    /// Ground-truth boxes of every record, in record order.
    pub fn ground_truth(&self, vocab: &CategoryVocabulary) -> Result<Vec<GroundTruthBox>> {
        let mut out = Vec::new();
        for r in &self.records {
            for a in &r.gt_boxes {
                let class = vocab
                    .index_of(&a.class)
                    .ok_or_else(|| Error::UnknownClass(a.class.clone()))?;
                let [x1, y1, x2, y2] = a.bbox;
                out.push(GroundTruthBox {
                    image_id: r.image_id.clone(),
                    class,
                    bbox: BBox::try_new(x1, y1, x2, y2)?,
                });
            }
        }
        Ok(out)
    }

    /// Gold label set of a record, or `None` when it has none.
    pub fn gold_labels(&self, r: &ManifestRecord, vocab: &CategoryVocabulary) -> Result<Option<LabelSet>> {
        r.gold_labels
            .as_ref()
            .map(|names| Ok(LabelSet::new(vocab.indices(names)?, Provenance::Gold)))
            .transpose()
    }

    /// Classes present according to the box annotations, falling back to the
    /// gold labels for records without boxes.
    pub fn present_classes(&self, r: &ManifestRecord, vocab: &CategoryVocabulary) -> Result<BTreeSet<usize>> {
        if r.gt_boxes.is_empty() {
            return Ok(self.gold_labels(r, vocab)?.map(|l| l.present).unwrap_or_default());
        }
        r.gt_boxes
            .iter()
            .map(|a| vocab.index_of(&a.class).ok_or_else(|| Error::UnknownClass(a.class.clone())))
            .collect()
    }
}

/// Parses and validates a manifest. Every malformed or inconsistent line is
/// reported in one [`Error::Parse`]; a missing proposal file is reported as
/// [`Error::MissingProposalFile`] once the lines themselves are valid.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let root = path.parent().map(Path::to_owned).unwrap_or_default();
    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut issue = |message: String| {
            issues.push(LineIssue {
                line: n + 1,
                message,
            })
        };
        let r: ManifestRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                issue(e.to_string());
                continue;
            }
        };
        if r.image_id.is_empty() {
            issue("empty image_id".into());
        } else if !seen.insert(r.image_id.clone()) {
            issue(format!("duplicate image_id `{}`", r.image_id));
        }
        if r.captions.is_empty() && r.gold_labels.is_none() {
            issue(format!("`{}` has neither captions nor gold_labels", r.image_id));
        }
        for a in &r.gt_boxes {
            let [x1, y1, x2, y2] = a.bbox;
            if !BBox::new(x1, y1, x2, y2).is_valid() {
                issue(format!("`{}` has a degenerate box {:?}", r.image_id, a.bbox));
            }
        }
        records.push(r);
    }
    if !issues.is_empty() {
        return Err(Error::Parse {
            path: path.into(),
            issues,
        });
    }
    let manifest = DatasetManifest { root, records };
    for r in &manifest.records {
        let p = manifest.proposal_path(r);
        if !p.is_file() {
            return Err(Error::MissingProposalFile(p));
        }
    }
    Ok(manifest)
}
