use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, LineIssue, Result};

use super::tokenize;

/// Ordered class names plus a phrase-to-class synonym map.
///
/// Every class name is a synonym of itself. Keys are normalized through
/// [`tokenize`], so multi-word names are stored as space-joined tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryVocabulary {
    classes: Vec<String>,
    synonyms: HashMap<String, usize>,
    max_phrase_len: usize,
}

fn normalize(phrase: &str) -> String {
    tokenize(phrase).tokens.join(" ")
}

impl CategoryVocabulary {
    pub fn new<S: AsRef<str>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(|c| normalize(c.as_ref())).collect();
        if classes.is_empty() {
            return Err(Error::Invalid("vocabulary has no classes".into()));
        }
        let mut synonyms = HashMap::new();
        for (i, name) in classes.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Invalid(format!("class {i} has an empty name")));
            }
            if synonyms.insert(name.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate class name `{name}`")));
            }
        }
        let max_phrase_len = classes.iter().map(|c| c.split(' ').count()).max().unwrap_or(1);
        Ok(Self {
            classes,
            synonyms,
            max_phrase_len,
        })
    }

    /// Reads one class name per non-empty line.
    pub fn from_class_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, class: usize) -> &str {
        &self.classes[class]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let name = normalize(name);
        self.classes.iter().position(|c| *c == name)
    }

    /// Resolves class names to indices, failing on the first unknown one.
    pub fn indices<S: AsRef<str>>(&self, names: &[S]) -> Result<BTreeSet<usize>> {
        names
            .iter()
            .map(|n| self.index_of(n.as_ref()).ok_or_else(|| Error::UnknownClass(n.as_ref().into())))
            .collect()
    }

    pub fn synonym(&self, phrase: &str) -> Option<usize> {
        self.synonyms.get(phrase).copied()
    }

    pub fn synonyms(&self) -> impl Iterator<Item = (&str, usize)> {
        self.synonyms.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Longest class-name or synonym phrase, in tokens.
    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    pub fn add_synonym(&mut self, phrase: &str, class: usize) -> Result<()> {
        if class >= self.classes.len() {
            return Err(Error::Invalid(format!("synonym target {class} out of range")));
        }
        let key = normalize(phrase);
        if key.is_empty() {
            return Err(Error::Invalid(format!("synonym `{phrase}` is empty after normalization")));
        }
        if let Some(&own) = self.synonyms.get(&key) {
            if self.classes[own] == key && own != class {
                return Err(Error::Invalid(format!("cannot remap class name `{key}`")));
            }
        }
        self.max_phrase_len = self.max_phrase_len.max(key.split(' ').count());
        self.synonyms.insert(key, class);
        Ok(())
    }

    /// Loads `word<TAB>class_name` lines. All malformed lines are reported together.
    pub fn load_synonyms(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut issues = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let issue = |message: String| LineIssue { line: n + 1, message };
            let Some((word, class)) = line.split_once('\t') else {
                issues.push(issue("expected `word<TAB>class_name`".into()));
                continue;
            };
            match self.index_of(class.trim()) {
                Some(c) => {
                    if let Err(e) = self.add_synonym(word, c) {
                        issues.push(issue(e.to_string()));
                    }
                }
                None => issues.push(issue(format!("unknown class `{}`", class.trim()))),
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Parse {
                path: path.into(),
                issues,
            })
        }
    }

    /// Hex SHA-256 over the ordered class names.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.classes {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}
