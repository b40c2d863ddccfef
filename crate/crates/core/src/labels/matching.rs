use crate::error::{Error, Result};
use crate::textclf::TextClassifier;

use super::{cosine_distance, CategoryVocabulary, EmbeddingTable, LabelSet, Provenance, TokenizedCaption};

/// Every contiguous token n-gram up to `max_len` tokens, space-joined.
fn ngrams(tokens: &[String], max_len: usize) -> impl Iterator<Item = String> + '_ {
    (1..=max_len.min(tokens.len()))
        .flat_map(move |n| tokens.windows(n).map(|w| w.join(" ")))
}

/// Classes whose name occurs verbatim as a token n-gram of the caption.
pub fn exact_match(caption: &TokenizedCaption, vocab: &CategoryVocabulary) -> LabelSet {
    let max_len = vocab.classes().iter().map(|c| c.split(' ').count()).max().unwrap_or(1);
    let present = ngrams(&caption.tokens, max_len).filter_map(|g| {
        vocab
            .synonym(&g)
            .filter(|&c| vocab.name(c) == g)
    });
    LabelSet::new(present, Provenance::Exact)
}

/// Classes reached by any caption n-gram through the synonym map.
pub fn synonym_match(caption: &TokenizedCaption, vocab: &CategoryVocabulary) -> LabelSet {
    let present = ngrams(&caption.tokens, vocab.max_phrase_len()).filter_map(|g| vocab.synonym(&g));
    LabelSet::new(present, Provenance::Synonym)
}

/// The single class whose name embedding is closest (cosine) to any caption token.
///
/// Tokens without an embedding are skipped; an all-unknown caption yields an
/// empty set. Multi-word class names use the mean of their word vectors.
/// Equidistant classes resolve to the lower index.
pub fn embedding_pseudo_label(
    caption: &TokenizedCaption,
    table: &EmbeddingTable,
    vocab: &CategoryVocabulary,
) -> Result<LabelSet> {
    let class_vecs = vocab
        .classes()
        .iter()
        .map(|name| {
            table
                .phrase(name)
                .ok_or_else(|| Error::MissingClassEmbedding(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let token_vecs: Vec<&[f32]> = caption.tokens.iter().filter_map(|t| table.get(t)).collect();
    if token_vecs.is_empty() {
        return Ok(LabelSet::empty(Provenance::Embedding));
    }
    let mut best: Option<(usize, f64)> = None;
    for (c, cv) in class_vecs.iter().enumerate() {
        let d = token_vecs
            .iter()
            .map(|tv| cosine_distance(cv, tv))
            .fold(f64::INFINITY, f64::min);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    Ok(LabelSet::new(best.map(|(c, _)| c), Provenance::Embedding))
}

/// Exact match first; when nothing matches, ask the text classifier.
///
/// A caption with no embeddable token gives an empty classifier prediction.
pub fn infer_two_step(
    caption: &TokenizedCaption,
    vocab: &CategoryVocabulary,
    classifier: &TextClassifier,
    table: &EmbeddingTable,
) -> Result<LabelSet> {
    let exact = exact_match(caption, vocab);
    if !exact.is_empty() {
        return Ok(exact);
    }
    match classifier.predict(caption, table) {
        Err(Error::EmptyInput) => Ok(LabelSet::empty(Provenance::Classifier)),
        other => other,
    }
}
