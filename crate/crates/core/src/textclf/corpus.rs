use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineIssue, Result};
use crate::labels::{tokenize, CategoryVocabulary, LabelSet, Provenance, TokenizedCaption};

/// One line of a caption corpus: an image with its captions and gold classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub image_id: String,
    #[serde(default)]
    pub captions: Vec<String>,
    #[serde(alias = "labels")]
    pub gold_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCaption {
    pub tokens: TokenizedCaption,
    pub gold: LabelSet,
}

/// Reads line-delimited JSON records; every malformed line is reported.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CorpusRecord>(line) {
            Ok(r) => out.push(r),
            Err(e) => issues.push(LineIssue {
                line: n + 1,
                message: e.to_string(),
            }),
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

/// One example per caption, or one per image with its captions joined when
/// `concatenate` is set.
pub fn examples_from_records(
    records: &[CorpusRecord],
    vocab: &CategoryVocabulary,
    concatenate: bool,
) -> Result<Vec<LabeledCaption>> {
    let mut out = Vec::new();
    for r in records {
        let gold = LabelSet::new(vocab.indices(&r.gold_labels)?, Provenance::Gold);
        if concatenate {
            out.push(LabeledCaption {
                tokens: tokenize(&r.captions.join(" ")),
                gold,
            });
        } else {
            out.extend(r.captions.iter().map(|c| LabeledCaption {
                tokens: tokenize(c),
                gold: gold.clone(),
            }));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_and_expand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(
            &p,
            r#"{"image_id":"1","captions":["a man.","a bike"],"gold_labels":["person","bicycle"]}

{"image_id":"2","captions":["empty road"],"labels":[]}
"#,
        )
        .unwrap();
        let recs = load_corpus(&p).unwrap();
        assert_eq!(recs.len(), 2);
        let v = CategoryVocabulary::new(["person", "bicycle"]).unwrap();
        let per_caption = examples_from_records(&recs, &v, false).unwrap();
        assert_eq!(per_caption.len(), 3);
        assert!(per_caption[2].gold.is_empty());
        let joined = examples_from_records(&recs, &v, true).unwrap();
        assert_eq!(joined.len(), 2);
        assert_eq!(joined[0].tokens.tokens, ["a", "man", "a", "bike"]);
    }

    #[test]
    fn bad_lines_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "{\"captions\":[]}\nnot json\n").unwrap();
        match load_corpus(&p) {
            Err(Error::Parse { issues, .. }) => assert_eq!(issues.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_gold_class() {
        let r = CorpusRecord {
            image_id: "x".into(),
            captions: vec!["a cat".into()],
            gold_labels: vec!["cat".into()],
        };
        let v = CategoryVocabulary::new(["dog"]).unwrap();
        assert!(matches!(examples_from_records(&[r], &v, false), Err(Error::UnknownClass(_))));
    }
}
