use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CategoryVocabulary, EmbeddingTable};
use crate::optim::Adagrad;

use super::{LabeledCaption, TextClassifier, DEFAULT_HIDDEN, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextClfConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Fine-tune the word vectors of training tokens along with the heads.
    pub train_embeddings: bool,
    /// One example per image (captions joined) instead of one per caption.
    pub concatenate: bool,
}

impl Default for TextClfConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            lr: 0.01,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            train_embeddings: false,
            concatenate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Examples dropped because none of their tokens has an embedding.
    pub skipped_examples: usize,
    pub steps: usize,
}

/// Fits the classifier with AdaGrad on mean per-class sigmoid cross-entropy.
///
/// Runs on one thread; the same seed and data give bitwise-identical weights.
pub fn train_text_classifier(
    data: &[LabeledCaption],
    table: &EmbeddingTable,
    vocab: &CategoryVocabulary,
    config: &TextClfConfig,
) -> Result<(TextClassifier, TrainReport)> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("text classifier needs training data".into()));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = TextClassifier::init(vocab, table.dim(), config.hidden, config.threshold, &mut rng)?;

    let usable: Vec<&LabeledCaption> = data
        .iter()
        .filter(|ex| ex.tokens.tokens.iter().any(|t| table.contains(t)))
        .collect();
    let skipped_examples = data.len() - usable.len();

    if config.train_embeddings {
        for ex in &usable {
            for tok in &ex.tokens.tokens {
                if let Some(v) = table.get(tok) {
                    model
                        .tuned_embeddings
                        .entry(tok.clone())
                        .or_insert_with(|| v.iter().map(|&x| f64::from(x)).collect());
                }
            }
        }
    }

    let mut opt = Adagrad::new(config.lr);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let zeros = vec![0.0; table.dim()];
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledCaption> = chunk.iter().map(|&i| usable[i]).collect();
            let (loss, grad, used) = model.loss_and_gradient(&batch, table, config.train_embeddings)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: steps as u64,
                    detail: "text classifier loss".into(),
                });
            }
            total += loss * used as f64;
            seen += used;

            let mut params: Vec<&mut [f64]> = Vec::new();
            params.extend(model.projection.slices_mut());
            params.extend(model.output.slices_mut());
            let mut grads: Vec<&[f64]> = Vec::new();
            grads.extend(grad.projection.slices());
            grads.extend(grad.output.slices());
            for (word, v) in model.tuned_embeddings.iter_mut() {
                params.push(v.as_mut_slice());
                grads.push(grad.embeddings.get(word).map_or(zeros.as_slice(), Vec::as_slice));
            }
            opt.step(params, grads);
            steps += 1;
        }
        epoch_losses.push(if seen > 0 { total / seen as f64 } else { 0.0 });
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            skipped_examples,
            steps,
        },
    ))
}
