//! Image-level labels from manifest captions.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineIssue, Result};
use crate::labels::{
    embedding_pseudo_label, exact_match, infer_two_step, synonym_match, tokenize, CategoryVocabulary,
    EmbeddingTable, LabelSet, Provenance,
};
use crate::textclf::TextClassifier;

use super::manifest::DatasetManifest;

/// How captions become labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelStrategy {
    /// Class names found verbatim.
    Exact,
    /// Class names and their listed synonyms.
    Synonym,
    /// Exact match, else the class nearest to a caption word in embedding space.
    Embedding,
    /// Exact match, else the text classifier.
    TwoStep,
    /// The text classifier alone.
    Classifier,
    /// The manifest's gold labels.
    Gold,
}

impl LabelStrategy {
    pub const ALL: [LabelStrategy; 6] = [
        LabelStrategy::Exact,
        LabelStrategy::Synonym,
        LabelStrategy::Embedding,
        LabelStrategy::TwoStep,
        LabelStrategy::Classifier,
        LabelStrategy::Gold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelStrategy::Exact => "exact",
            LabelStrategy::Synonym => "synonym",
            LabelStrategy::Embedding => "embedding",
            LabelStrategy::TwoStep => "two-step",
            LabelStrategy::Classifier => "classifier",
            LabelStrategy::Gold => "gold",
        }
    }
}

impl fmt::Display for LabelStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown label strategy `{s}`")))
    }
}

/// What a strategy may need besides the vocabulary.
#[derive(Clone, Copy, Default)]
pub struct LabelResources<'a> {
    pub embeddings: Option<&'a EmbeddingTable>,
    pub classifier: Option<&'a TextClassifier>,
}

/// Label sets keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageLabels {
    pub labels: BTreeMap<String, LabelSet>,
}

impl ImageLabels {
    pub fn get(&self, image_id: &str) -> Option<&LabelSet> {
        self.labels.get(image_id)
    }

    /// Images whose label set is empty; they never reach detector training.
    pub fn excluded(&self) -> Vec<&str> {
        self.labels
            .iter()
            .filter(|(_, l)| l.is_empty())
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// One JSON object per line: `{"image_id", "labels": [names], "provenance"}`.
    pub fn save(&self, path: impl AsRef<Path>, vocab: &CategoryVocabulary) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (id, l) in &self.labels {
            let rec = LabelRecord {
                image_id: id.clone(),
                labels: l.present.iter().map(|&c| vocab.name(c).to_owned()).collect(),
                provenance: l.provenance,
            };
            serde_json::to_writer(&mut f, &rec)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, vocab: &CategoryVocabulary) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut labels = BTreeMap::new();
        let mut issues = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<LabelRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(|r| {
                    let set = vocab.indices(&r.labels).map_err(|e| e.to_string())?;
                    Ok((r.image_id, LabelSet::new(set, r.provenance)))
                });
            match parsed {
                Ok((id, set)) => {
                    labels.insert(id, set);
                }
                Err(message) => issues.push(LineIssue { line: n + 1, message }),
            }
        }
        if issues.is_empty() {
            Ok(Self { labels })
        } else {
            Err(Error::Parse {
                path: path.into(),
                issues,
            })
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    image_id: String,
    labels: Vec<String>,
    provenance: Provenance,
}

fn rank(p: Provenance) -> u8 {
    match p {
        Provenance::Gold => 0,
        Provenance::Exact => 1,
        Provenance::Synonym => 2,
        Provenance::Embedding => 3,
        Provenance::Classifier => 4,
    }
}

/// Labels of one caption under `strategy` (not meaningful for `Gold`).
pub fn caption_labels(
    caption: &str,
    strategy: LabelStrategy,
    vocab: &CategoryVocabulary,
    res: LabelResources<'_>,
) -> Result<LabelSet> {
    let tokens = tokenize(caption);
    let need_table = || {
        res.embeddings
            .ok_or_else(|| Error::InvalidConfig(format!("strategy `{strategy}` needs word embeddings")))
    };
    let need_classifier = || {
        res.classifier
            .ok_or_else(|| Error::InvalidConfig(format!("strategy `{strategy}` needs a text classifier")))
    };
    match strategy {
        LabelStrategy::Exact | LabelStrategy::Gold => Ok(exact_match(&tokens, vocab)),
        LabelStrategy::Synonym => Ok(synonym_match(&tokens, vocab)),
        LabelStrategy::Embedding => {
            let exact = exact_match(&tokens, vocab);
            if exact.is_empty() {
                embedding_pseudo_label(&tokens, need_table()?, vocab)
            } else {
                Ok(exact)
            }
        }
        LabelStrategy::TwoStep => infer_two_step(&tokens, vocab, need_classifier()?, need_table()?),
        LabelStrategy::Classifier => match need_classifier()?.predict(&tokens, need_table()?) {
            Err(Error::EmptyInput) => Ok(LabelSet::empty(Provenance::Classifier)),
            other => other,
        },
    }
}

/// Union of the labels of several captions. The provenance of the union is
/// the least direct source that contributed a class.
pub fn union_labels<S: AsRef<str>>(
    captions: &[S],
    strategy: LabelStrategy,
    vocab: &CategoryVocabulary,
    res: LabelResources<'_>,
) -> Result<LabelSet> {
    let mut union = LabelSet::empty(match strategy {
        LabelStrategy::Synonym => Provenance::Synonym,
        LabelStrategy::Classifier => Provenance::Classifier,
        _ => Provenance::Exact,
    });
    for c in captions {
        let l = caption_labels(c.as_ref(), strategy, vocab, res)?;
        if !l.is_empty() && rank(l.provenance) > rank(union.provenance) {
            union.provenance = l.provenance;
        }
        union.present.extend(l.present);
    }
    Ok(union)
}

/// Labels of every manifest image: gold labels, or the union over captions.
pub fn build_image_labels(
    manifest: &DatasetManifest,
    strategy: LabelStrategy,
    vocab: &CategoryVocabulary,
    res: LabelResources<'_>,
) -> Result<ImageLabels> {
    let mut labels = BTreeMap::new();
    for r in &manifest.records {
        let set = if strategy == LabelStrategy::Gold {
            manifest
                .gold_labels(r, vocab)?
                .ok_or_else(|| Error::Invalid(format!("`{}` has no gold labels", r.image_id)))?
        } else {
            union_labels(&r.captions, strategy, vocab, res)?
        };
        labels.insert(r.image_id.clone(), set);
    }
    Ok(ImageLabels { labels })
}
