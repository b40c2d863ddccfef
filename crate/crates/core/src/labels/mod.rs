//! Caption text to image-level category labels.

mod embedding;
mod matching;
mod vocab;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use embedding::{cosine_distance, EmbeddingTable};
pub use matching::{embedding_pseudo_label, exact_match, infer_two_step, synonym_match};
pub use vocab::CategoryVocabulary;

/// Lowercased, punctuation-free whitespace tokens of one caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedCaption {
    pub tokens: Vec<String>,
    pub source: String,
}

impl TokenizedCaption {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercase, drop ASCII punctuation, split on whitespace.
pub fn tokenize(caption: &str) -> TokenizedCaption {
    let cleaned: String = caption
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    TokenizedCaption {
        tokens: cleaned.split_whitespace().map(str::to_owned).collect(),
        source: caption.to_owned(),
    }
}

/// Where a label set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Synonym,
    Embedding,
    Classifier,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub present: BTreeSet<usize>,
    pub provenance: Provenance,
}

impl LabelSet {
    pub fn new(present: impl IntoIterator<Item = usize>, provenance: Provenance) -> Self {
        Self {
            present: present.into_iter().collect(),
            provenance,
        }
    }

    pub fn empty(provenance: Provenance) -> Self {
        Self::new([], provenance)
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.present.contains(&class)
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    /// 0/1 indicator vector of length `num_classes`.
    pub fn multi_hot(&self, num_classes: usize) -> Vec<f64> {
        let mut y = vec![0.0; num_classes];
        for &c in &self.present {
            y[c] = 1.0;
        }
        y
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.present.is_subset(&other.present)
    }
}
