//! Text-only multi-label classifier: word vectors, a rectified projection,
//! max-pooling over tokens and a per-class affine output.

mod corpus;
mod metrics;
mod train;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CategoryVocabulary, EmbeddingTable, LabelSet, Provenance, TokenizedCaption};
use crate::nn::{sigmoid, Affine};

pub use corpus::{examples_from_records, load_corpus, CorpusRecord, LabeledCaption};
pub use metrics::{eval_label_pr, ClassPr, LabelPrReport};
pub use train::{train_text_classifier, TextClfConfig, TrainReport};

pub const DEFAULT_HIDDEN: usize = 400;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const CHECKPOINT_FORMAT: &str = "wsod-text-classifier";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextClassifier {
    pub class_names: Vec<String>,
    pub vocab_hash: String,
    pub embedding_dim: usize,
    /// `hidden x embedding_dim`
    pub projection: Affine,
    /// `classes x hidden`
    pub output: Affine,
    /// Sigmoid score at or above which a class is predicted, in (0, 1).
    pub threshold: f64,
    /// Fine-tuned word vectors that take precedence over the frozen table.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tuned_embeddings: BTreeMap<String, Vec<f64>>,
}

/// Gradient of the training loss, shaped like the classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifierGrad {
    pub projection: Affine,
    pub output: Affine,
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

struct Trace {
    words: Vec<String>,
    inputs: Array2<f64>,
    /// Per hidden unit: token index holding the max pre-activation.
    argmax: Vec<usize>,
    pooled: Array1<f64>,
    logits: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: TextClassifier,
}

/// Numerically stable sigmoid cross-entropy of one logit.
pub(crate) fn bce_with_logits(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

impl TextClassifier {
    /// Fresh parameters: zero biases, uniform weights scaled by fan-in.
    pub fn init<R: Rng + ?Sized>(
        vocab: &CategoryVocabulary,
        embedding_dim: usize,
        hidden: usize,
        threshold: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold {threshold} outside (0, 1)")));
        }
        if embedding_dim == 0 || hidden == 0 {
            return Err(Error::InvalidConfig("embedding and hidden sizes must be positive".into()));
        }
        let projection = Affine::init(embedding_dim, hidden, rng);
        let output = Affine::init(hidden, vocab.len(), rng);
        Ok(Self {
            class_names: vocab.classes().to_vec(),
            vocab_hash: vocab.hash(),
            embedding_dim,
            projection,
            output,
            threshold,
            tuned_embeddings: BTreeMap::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.output.outputs()
    }

    pub fn hidden(&self) -> usize {
        self.projection.outputs()
    }

    fn lookup(&self, word: &str, table: &EmbeddingTable) -> Option<Vec<f64>> {
        if let Some(v) = self.tuned_embeddings.get(word) {
            return Some(v.clone());
        }
        table.get(word).map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }

    fn trace(&self, caption: &TokenizedCaption, table: &EmbeddingTable) -> Result<Trace> {
        let mut words = Vec::new();
        let mut flat = Vec::new();
        for tok in &caption.tokens {
            if let Some(v) = self.lookup(tok, table) {
                if v.len() != self.embedding_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "embedding of `{tok}` has length {}, classifier expects {}",
                        v.len(),
                        self.embedding_dim
                    )));
                }
                words.push(tok.clone());
                flat.extend(v);
            }
        }
        if words.is_empty() {
            return Err(Error::EmptyInput);
        }
        let inputs = Array2::from_shape_vec((words.len(), self.embedding_dim), flat)
            .expect("row-major token matrix");
        let pre = self.projection.forward(&inputs.view());
        let hidden = self.hidden();
        let mut argmax = vec![0usize; hidden];
        let mut pooled = Array1::zeros(hidden);
        for j in 0..hidden {
            let col = pre.column(j);
            let mut best = 0;
            for t in 1..col.len() {
                if col[t] > col[best] {
                    best = t;
                }
            }
            argmax[j] = best;
            pooled[j] = col[best].max(0.0);
        }
        let logits = self.output.forward_one(&pooled.view());
        Ok(Trace {
            words,
            inputs,
            argmax,
            pooled,
            logits,
        })
    }

    /// Per-class logits. Fails with [`Error::EmptyInput`] when no token embeds.
    pub fn forward(&self, caption: &TokenizedCaption, table: &EmbeddingTable) -> Result<Array1<f64>> {
        let logits = self.trace(caption, table)?.logits;
        if logits.iter().all(|v| v.is_finite()) {
            Ok(logits)
        } else {
            Err(Error::NonFiniteScore("text classifier logits"))
        }
    }

    /// Classes scoring at least the threshold, or the top class if none does.
    pub fn predict(&self, caption: &TokenizedCaption, table: &EmbeddingTable) -> Result<LabelSet> {
        Ok(self.labels_from_logits(&self.forward(caption, table)?))
    }

    pub fn labels_from_logits(&self, logits: &Array1<f64>) -> LabelSet {
        let mut present: Vec<usize> = logits
            .iter()
            .enumerate()
            .filter(|(_, &z)| sigmoid(z) >= self.threshold)
            .map(|(c, _)| c)
            .collect();
        if present.is_empty() {
            let mut best = 0;
            for (c, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = c;
                }
            }
            present.push(best);
        }
        LabelSet::new(present, Provenance::Classifier)
    }

    /// Mean per-class sigmoid cross-entropy of one example.
    pub fn example_loss(&self, example: &LabeledCaption, table: &EmbeddingTable) -> Result<f64> {
        let logits = self.trace(&example.tokens, table)?.logits;
        let y = example.gold.multi_hot(self.num_classes());
        Ok(logits.iter().zip(&y).map(|(&x, &y)| bce_with_logits(x, y)).sum::<f64>() / y.len() as f64)
    }

    /// Mean loss over `batch` and its gradient. Examples without any embedded
    /// token are skipped; the returned count says how many contributed.
    pub fn loss_and_gradient(
        &self,
        batch: &[&LabeledCaption],
        table: &EmbeddingTable,
        with_embeddings: bool,
    ) -> Result<(f64, TextClassifierGrad, usize)> {
        let c = self.num_classes();
        let mut grad = TextClassifierGrad {
            projection: Affine::zeros(self.embedding_dim, self.hidden()),
            output: Affine::zeros(self.hidden(), c),
            embeddings: BTreeMap::new(),
        };
        let mut loss = 0.0;
        let mut used = 0usize;
        for ex in batch {
            let tr = match self.trace(&ex.tokens, table) {
                Ok(tr) => tr,
                Err(Error::EmptyInput) => continue,
                Err(e) => return Err(e),
            };
            used += 1;
            let y = ex.gold.multi_hot(c);
            let mut g_logit = Array1::zeros(c);
            for k in 0..c {
                loss += bce_with_logits(tr.logits[k], y[k]) / c as f64;
                g_logit[k] = (sigmoid(tr.logits[k]) - y[k]) / c as f64;
            }
            for k in 0..c {
                grad.output.bias[k] += g_logit[k];
                for j in 0..self.hidden() {
                    grad.output.weight[[k, j]] += g_logit[k] * tr.pooled[j];
                }
            }
            let g_pooled = self.output.weight.t().dot(&g_logit);
            for j in 0..self.hidden() {
                if tr.pooled[j] <= 0.0 {
                    continue;
                }
                let g = g_pooled[j];
                let t = tr.argmax[j];
                grad.projection.bias[j] += g;
                let x = tr.inputs.row(t);
                for (w, &xi) in grad.projection.weight.row_mut(j).iter_mut().zip(x) {
                    *w += g * xi;
                }
                if with_embeddings {
                    let ge = grad
                        .embeddings
                        .entry(tr.words[t].clone())
                        .or_insert_with(|| vec![0.0; self.embedding_dim]);
                    for (e, &w) in ge.iter_mut().zip(self.projection.weight.row(j)) {
                        *e += g * w;
                    }
                }
            }
        }
        if used > 0 {
            let s = 1.0 / used as f64;
            loss *= s;
            grad.projection.scale_mut(s);
            grad.output.scale_mut(s);
            grad.embeddings
                .values_mut()
                .for_each(|v| v.iter_mut().for_each(|x| *x *= s));
        }
        Ok((loss, grad, used))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    /// Loads a checkpoint and checks it was trained for `vocab`.
    pub fn load(path: impl AsRef<Path>, vocab: &CategoryVocabulary) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.model.vocab_hash != vocab.hash() {
            return Err(Error::Invalid(
                "classifier was trained for a different class vocabulary".into(),
            ));
        }
        Ok(ck.model)
    }
}
