//! The full detector, its checkpoints and the training loop.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::Rgb32FImage;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{per_class_ap, GroundTruthBox, Interpolation, VOC_IOU};
use crate::labels::{CategoryVocabulary, LabelSet};
use crate::mil::{initial_detection_scores, mid_loss, mid_loss_gradient, mil_forward, MilHead, ProposalSet, ScoreBundle};
use crate::nn::Affine;
use crate::oicr::{
    generate_instance_targets, inference_scores, oicr_loss, oicr_loss_gradient, refine_scores, InferenceMode,
    RefinementStack,
};
use crate::optim::Adagrad;

use super::config::TrainConfig;
use super::detect::detect_all;
use super::features::{load_image, ToyFeatureProvider};
use super::labeling::ImageLabels;
use super::manifest::DatasetManifest;
use super::proposals::{read_proposals, ProposalFile};

const CHECKPOINT_FORMAT: &str = "wsod-detector";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub class_names: Vec<String>,
    pub feature_dim: usize,
    pub mil: MilHead,
    pub refinement: RefinementStack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGrad {
    pub mil: MilHead,
    pub heads: Vec<Affine>,
}

impl DetectorGrad {
    fn zeros_like(model: &DetectorModel) -> Self {
        let (d, c) = (model.feature_dim, model.num_classes());
        Self {
            mil: MilHead::zeros(d, c),
            heads: vec![Affine::zeros(d, c + 1); model.refinement.len()],
        }
    }

    fn add_assign(&mut self, other: &DetectorGrad) {
        self.mil.add_assign(&other.mil);
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            a.add_assign(b);
        }
    }

    fn scale_mut(&mut self, s: f64) {
        self.mil.scale_mut(s);
        for h in &mut self.heads {
            h.scale_mut(s);
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.mil.slices();
        for h in &self.heads {
            out.extend(h.slices());
        }
        out
    }
}

/// Loss terms of one image or the mean over a batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mid: f64,
    pub refinements: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    fn add_assign(&mut self, other: &LossBreakdown) {
        self.mid += other.mid;
        self.total += other.total;
        if self.refinements.len() < other.refinements.len() {
            self.refinements.resize(other.refinements.len(), 0.0);
        }
        for (a, b) in self.refinements.iter_mut().zip(&other.refinements) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.mid *= s;
        self.total *= s;
        self.refinements.iter_mut().for_each(|v| *v *= s);
    }
}

impl DetectorModel {
    pub fn init<R: Rng + ?Sized>(
        vocab: &CategoryVocabulary,
        feature_dim: usize,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mil = MilHead::init(feature_dim, vocab.len(), rng);
        let refinement = RefinementStack::init(feature_dim, vocab.len(), config.refinements, config.oicr_iou, rng)?;
        Ok(Self {
            class_names: vocab.classes().to_vec(),
            feature_dim,
            mil,
            refinement,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Multiple-instance scores and each refinement head's `m x (C+1)` output.
    pub fn forward(&self, p: &ProposalSet) -> Result<(ScoreBundle, Vec<Array2<f64>>)> {
        let mil = mil_forward(p, &self.mil)?;
        let refined = self
            .refinement
            .heads
            .iter()
            .map(|h| refine_scores(p, h))
            .collect::<Result<Vec<_>>>()?;
        Ok((mil, refined))
    }

    /// Final `m x C` per-proposal class scores.
    pub fn scores(&self, p: &ProposalSet, mode: InferenceMode) -> Result<Array2<f64>> {
        let (mil, refined) = self.forward(p)?;
        Ok(inference_scores(&mil, &refined, mode))
    }

    /// Image-level loss and its gradient. Each refinement head is supervised
    /// by targets built from the previous stage's scores, held constant.
    pub fn loss_and_gradient(&self, p: &ProposalSet, labels: &LabelSet) -> Result<(LossBreakdown, DetectorGrad)> {
        let (mil, refined) = self.forward(p)?;
        let mid = mid_loss(&mil, labels);
        let mut grad = DetectorGrad {
            mil: mid_loss_gradient(p, &mil, labels),
            heads: Vec::with_capacity(refined.len()),
        };
        let mut previous = initial_detection_scores(&mil);
        let mut refinements = Vec::with_capacity(refined.len());
        for scores in refined {
            let targets = generate_instance_targets(&p.boxes, &previous.view(), labels, self.refinement.iou_threshold);
            refinements.push(oicr_loss(&scores, &targets));
            grad.heads.push(oicr_loss_gradient(p, &scores, &targets));
            previous = scores;
        }
        let total = mid + refinements.iter().sum::<f64>();
        Ok((
            LossBreakdown {
                mid,
                refinements,
                total,
            },
            grad,
        ))
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.mil.slices_mut();
        for h in &mut self.refinement.heads {
            out.extend(h.slices_mut());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.mil.cls.is_finite() && self.mil.det.is_finite() && self.refinement.heads.iter().all(Affine::is_finite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorCheckpoint {
    pub format: String,
    pub version: u32,
    /// Number of completed optimizer steps.
    pub step: u64,
    pub vocab_hash: String,
    pub config: TrainConfig,
    pub model: DetectorModel,
    pub optimizer: Adagrad,
    /// Validation mAP at this step, when validation ran.
    #[serde(default)]
    pub val_map: Option<f64>,
}

impl DetectorCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, vocab: &CategoryVocabulary) -> Result<Self> {
        let ck: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.vocab_hash != vocab.hash() {
            return Err(Error::Invalid("checkpoint was trained with a different class list".into()));
        }
        Ok(ck)
    }
}

/// Proposal features of manifest records, extracted on demand and cached.
///
/// Records with an image are re-extracted per scale and flip by the feature
/// provider; records without one use the features stored in their proposal
/// file and ignore scale and flip.
pub struct FeatureSource {
    manifest: DatasetManifest,
    provider: ToyFeatureProvider,
    max_proposals: usize,
    cache_limit: usize,
    files: Mutex<HashMap<usize, Arc<ProposalFile>>>,
    images: Mutex<HashMap<usize, Arc<Rgb32FImage>>>,
    sets: Mutex<HashMap<(usize, Option<u32>, bool), Arc<ProposalSet>>>,
}

impl FeatureSource {
    pub fn new(manifest: DatasetManifest, provider: ToyFeatureProvider, max_proposals: usize) -> Self {
        Self {
            manifest,
            provider,
            max_proposals,
            cache_limit: 1 << 14,
            files: Mutex::default(),
            images: Mutex::default(),
            sets: Mutex::default(),
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn provider(&self) -> &ToyFeatureProvider {
        &self.provider
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn has_image(&self, idx: usize) -> bool {
        self.manifest.records[idx].image.is_some()
    }

    /// Feature width produced for record `idx`.
    pub fn feature_dim(&self, idx: usize) -> Result<usize> {
        if self.has_image(idx) {
            return Ok(self.provider.feature_dim());
        }
        Ok(self.get(idx, None, false)?.dim())
    }

    fn file(&self, idx: usize) -> Result<Arc<ProposalFile>> {
        if let Some(f) = self.files.lock().unwrap().get(&idx) {
            return Ok(f.clone());
        }
        let mut f = read_proposals(self.manifest.proposal_path(&self.manifest.records[idx]))?;
        f.boxes.truncate(self.max_proposals);
        if let Some(feat) = &mut f.features {
            *feat = feat.slice(ndarray::s![..f.boxes.len(), ..]).to_owned();
        }
        let f = Arc::new(f);
        self.files.lock().unwrap().insert(idx, f.clone());
        Ok(f)
    }

    fn image(&self, idx: usize, path: &Path) -> Result<Arc<Rgb32FImage>> {
        if let Some(img) = self.images.lock().unwrap().get(&idx) {
            return Ok(img.clone());
        }
        let img = Arc::new(load_image(path)?);
        self.images.lock().unwrap().insert(idx, img.clone());
        Ok(img)
    }

    pub fn get(&self, idx: usize, scale: Option<u32>, flip: bool) -> Result<Arc<ProposalSet>> {
        let record = &self.manifest.records[idx];
        let image_path = self.manifest.image_path(record);
        let key = if image_path.is_some() { (idx, scale, flip) } else { (idx, None, false) };
        if let Some(s) = self.sets.lock().unwrap().get(&key) {
            return Ok(s.clone());
        }
        let file = self.file(idx)?;
        let features = match &image_path {
            Some(path) => self.provider.extract(&*self.image(idx, path)?, &file.boxes, scale, flip),
            None => file.features.clone().ok_or_else(|| {
                Error::Invalid(format!(
                    "`{}` has neither an image nor stored proposal features",
                    record.image_id
                ))
            })?,
        };
        let set = Arc::new(ProposalSet::new(record.image_id.clone(), file.boxes.clone(), features)?);
        let mut sets = self.sets.lock().unwrap();
        if sets.len() < self.cache_limit {
            sets.insert(key, set.clone());
        }
        Ok(set)
    }
}

/// Held-out images scored by mAP@0.5 for best-model retention.
pub struct Validation<'a> {
    pub source: &'a FeatureSource,
    pub ground_truth: Vec<GroundTruthBox>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where `latest.json` and `best.json` go every `eval_interval` steps and at the end.
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<DetectorCheckpoint>,
    pub validation: Option<Validation<'a>>,
    /// Called after each step with the step number and the mean batch loss.
    pub on_step: Option<&'a (dyn Fn(u64, &LossBreakdown) + Sync)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: DetectorCheckpoint,
    pub best: Option<DetectorCheckpoint>,
    /// Mean batch loss of every step run in this call.
    pub losses: Vec<LossBreakdown>,
    /// Images left out because their label set is empty or missing.
    pub excluded: Vec<String>,
    /// How many gradient contributions each image made.
    pub contributions: BTreeMap<String, u64>,
}

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mean mAP@0.5 of `model` over a validation set.
pub fn validation_map(model: &DetectorModel, val: &Validation<'_>, config: &TrainConfig) -> Result<f64> {
    let dets = detect_all(model, val.source, config)?;
    Ok(per_class_ap(&dets, &val.ground_truth, model.num_classes(), VOC_IOU, Interpolation::AllPoint)
        .mean
        .unwrap_or(0.0))
}

/// Minimizes the multiple-instance plus refinement loss with AdaGrad.
///
/// Every step draws its images, scales and flips from a generator keyed by
/// `(seed, step)`, so a run resumed from a checkpoint follows the same
/// trajectory as an uninterrupted one.
pub fn train_detector(
    source: &FeatureSource,
    labels: &ImageLabels,
    vocab: &CategoryVocabulary,
    config: &TrainConfig,
    opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest = source.manifest();
    let mut excluded = Vec::new();
    let mut train: Vec<(usize, &LabelSet)> = Vec::new();
    for (i, r) in manifest.records.iter().enumerate() {
        match labels.get(&r.image_id) {
            Some(l) if !l.is_empty() => train.push((i, l)),
            _ => excluded.push(r.image_id.clone()),
        }
    }
    if train.is_empty() {
        return Err(Error::Invalid("no training image has a non-empty label set".into()));
    }

    let mut ck = match opts.resume {
        Some(ck) => {
            if ck.model.num_classes() != vocab.len() || ck.model.refinement.len() != config.refinements {
                return Err(Error::InvalidConfig("checkpoint does not match the configured model".into()));
            }
            ck
        }
        None => {
            let dim = source.feature_dim(train[0].0)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            DetectorCheckpoint {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                step: 0,
                vocab_hash: vocab.hash(),
                config: config.clone(),
                model: DetectorModel::init(vocab, dim, config, &mut rng)?,
                optimizer: Adagrad::new(config.lr),
                val_map: None,
            }
        }
    };
    ck.config = config.clone();
    ck.optimizer.lr = config.lr;

    if let Some(dir) = &opts.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut best: Option<DetectorCheckpoint> = opts
        .checkpoint_dir
        .as_ref()
        .map(|d| d.join("best.json"))
        .filter(|p| p.is_file())
        .map(|p| DetectorCheckpoint::load(p, vocab))
        .transpose()?;

    let n = train.len();
    let batch = config.batch_size;
    let mut losses = Vec::new();
    let mut contributions: BTreeMap<String, u64> = BTreeMap::new();
    let mut order_cache: Option<(u64, Vec<usize>)> = None;

    while ck.step < config.steps {
        let step = ck.step;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(step);
        let mut picks = Vec::with_capacity(batch);
        for b in 0..batch {
            let pos = step * batch as u64 + b as u64;
            let epoch = pos / n as u64;
            if order_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
                order_cache = Some((epoch, epoch_order(n, config.seed, epoch)));
            }
            let (train_idx, label) = train[order_cache.as_ref().unwrap().1[(pos % n as u64) as usize]];
            let scale = config.scales[rng.random_range(0..config.scales.len())];
            let flip = config.flip && rng.random_bool(0.5);
            picks.push((train_idx, label, scale, flip));
        }

        let model = &ck.model;
        let results = picks
            .par_iter()
            .map(|&(idx, label, scale, flip)| {
                let p = source.get(idx, Some(scale), flip)?;
                model.loss_and_gradient(&p, label)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grad = DetectorGrad::zeros_like(model);
        let mut loss = LossBreakdown::default();
        for (l, g) in &results {
            loss.add_assign(l);
            grad.add_assign(g);
        }
        loss.scale(1.0 / batch as f64);
        grad.scale_mut(1.0 / batch as f64);
        if !loss.total.is_finite() || !grad.slices().iter().all(|s| s.iter().all(|v| v.is_finite())) {
            let ids: Vec<&str> = picks.iter().map(|p| manifest.records[p.0].image_id.as_str()).collect();
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("loss {:?} on images {ids:?}", loss),
            });
        }
        for &(idx, ..) in &picks {
            *contributions.entry(manifest.records[idx].image_id.clone()).or_default() += 1;
        }
        let grads = grad.slices();
        ck.optimizer.step(ck.model.slices_mut(), grads);
        ck.step += 1;
        if let Some(cb) = opts.on_step {
            cb(ck.step, &loss);
        }
        losses.push(loss);

        let checkpoint_now = ck.step == config.steps || (config.eval_interval > 0 && ck.step % config.eval_interval == 0);
        if checkpoint_now {
            if let Some(val) = &opts.validation {
                let map = validation_map(&ck.model, val, config)?;
                ck.val_map = Some(map);
                if best.as_ref().is_none_or(|b| b.val_map.is_none_or(|bm| map > bm)) {
                    best = Some(ck.clone());
                    if let Some(dir) = &opts.checkpoint_dir {
                        ck.save(dir.join("best.json"))?;
                    }
                }
            }
            if let Some(dir) = &opts.checkpoint_dir {
                ck.save(dir.join("latest.json"))?;
            }
        }
    }

    Ok(TrainOutcome {
        checkpoint: ck,
        best,
        losses,
        excluded,
        contributions,
    })
}
