//! Central finite differences against the analytic gradients.

use rand::Rng;

use wsod::labels::{tokenize, CategoryVocabulary, EmbeddingTable};
use wsod::mil::{mid_loss, mid_loss_gradient, mil_forward};
use wsod::nn::Affine;
use wsod::oicr::{generate_instance_targets, oicr_loss, oicr_loss_gradient, refine_scores};
use wsod::pipeline::{DetectorModel, TrainConfig};
use wsod::textclf::LabeledCaption;
use wsod::{LabelSet, MilHead, ProposalSet, TextClassifier};

use super::{random_labels, random_matrix, random_proposals, rng};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|)`, with magnitudes below 1e-6 treated as 1e-6 so
/// that entries that are zero on both sides compare cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error over every parameter entry of `model`.
pub fn max_rel_err<M: Clone>(
    model: &M,
    analytic: &[Vec<f64>],
    params: fn(&mut M) -> Vec<&mut [f64]>,
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let mut plus = model.clone();
            params(&mut plus)[t][i] += STEP;
            let mut minus = model.clone();
            params(&mut minus)[t][i] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

fn owned(slices: Vec<&[f64]>) -> Vec<Vec<f64>> {
    slices.into_iter().map(<[f64]>::to_vec).collect()
}

fn instance(rng: &mut impl Rng) -> (ProposalSet, LabelSet, usize) {
    let m = rng.random_range(2..=6);
    let c = rng.random_range(1..=4);
    let d = rng.random_range(2..=6);
    (random_proposals(rng, m, d), random_labels(rng, c, true), c)
}

/// Multiple-instance loss with respect to both branches.
pub fn mid_case(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (p, labels, c) = instance(&mut rng);
    let head = MilHead::init(p.dim(), c, &mut rng);
    let scores = mil_forward(&p, &head).unwrap();
    let g = mid_loss_gradient(&p, &scores, &labels);
    max_rel_err(&head, &owned(g.slices()), MilHead::slices_mut, |h| {
        mid_loss(&mil_forward(&p, h).unwrap(), &labels)
    })
}

fn affine_params(a: &mut Affine) -> Vec<&mut [f64]> {
    a.slices_mut().into()
}

/// One refinement head under fixed pseudo labels.
pub fn oicr_case(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (p, labels, c) = instance(&mut rng);
    let head = Affine::init(p.dim(), c + 1, &mut rng);
    let previous = random_matrix(&mut rng, p.len(), c + 1, 1.0).mapv(f64::abs);
    let targets = generate_instance_targets(&p.boxes, &previous.view(), &labels, 0.5);
    let scores = refine_scores(&p, &head).unwrap();
    let g = oicr_loss_gradient(&p, &scores, &targets);
    max_rel_err(&head, &owned(g.slices().into()), affine_params, |h| {
        oicr_loss(&refine_scores(&p, h).unwrap(), &targets)
    })
}

/// Sum of all losses of the full detector, every stage's targets frozen at
/// their values for the unperturbed parameters.
pub fn total_case(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (p, labels, c) = instance(&mut rng);
    let vocab = CategoryVocabulary::new((0..c).map(|i| format!("class{i}"))).unwrap();
    let config = TrainConfig {
        refinements: rng.random_range(1..=3),
        ..TrainConfig::default()
    };
    let model = DetectorModel::init(&vocab, p.dim(), &config, &mut rng).unwrap();
    let (_, grad) = model.loss_and_gradient(&p, &labels).unwrap();

    let (mil, refined) = model.forward(&p).unwrap();
    let mut previous = wsod::mil::initial_detection_scores(&mil);
    let mut targets = Vec::new();
    for s in refined {
        targets.push(generate_instance_targets(&p.boxes, &previous.view(), &labels, config.oicr_iou));
        previous = s;
    }
    let loss = |m: &DetectorModel| {
        let (mil, refined) = m.forward(&p).unwrap();
        let parts: Vec<f64> = refined.iter().zip(&targets).map(|(s, t)| oicr_loss(s, t)).collect();
        wsod::oicr::total_loss(mid_loss(&mil, &labels), &parts)
    };
    max_rel_err(&model, &owned(grad.slices()), DetectorModel::slices_mut, loss)
}

fn classifier_params(m: &mut TextClassifier) -> Vec<&mut [f64]> {
    let [a, b] = m.projection.slices_mut();
    let [c, d] = m.output.slices_mut();
    let mut out = vec![a, b, c, d];
    out.extend(m.tuned_embeddings.values_mut().map(Vec::as_mut_slice));
    out
}

/// Text classifier on a five-token caption, word vectors included.
pub fn textclf_case(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let dim = 5;
    let words = ["w0", "w1", "w2", "w3", "w4", "w5"];
    let mut table = EmbeddingTable::new(dim);
    for w in words {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        table.insert(w, &v).unwrap();
    }
    let c = rng.random_range(1..=4);
    let vocab = CategoryVocabulary::new((0..c).map(|i| format!("class{i}"))).unwrap();
    let mut model = TextClassifier::init(&vocab, dim, 6, 0.5, &mut rng).unwrap();
    let caption: Vec<&str> = (0..5).map(|_| words[rng.random_range(0..words.len())]).collect();
    for w in &caption {
        let v = table.get(w).unwrap().iter().map(|&x| f64::from(x)).collect();
        model.tuned_embeddings.insert((*w).to_owned(), v);
    }
    let example = LabeledCaption {
        tokens: tokenize(&caption.join(" ")),
        gold: random_labels(&mut rng, c, true),
    };
    let batch = [&example];
    let (_, grad, _) = model.loss_and_gradient(&batch, &table, true).unwrap();
    let mut analytic = owned(grad.projection.slices().into_iter().chain(grad.output.slices()).collect());
    for w in model.tuned_embeddings.keys() {
        analytic.push(grad.embeddings.get(w).cloned().unwrap_or_else(|| vec![0.0; dim]));
    }
    max_rel_err(&model, &analytic, classifier_params, |m| {
        m.loss_and_gradient(&batch, &table, false).unwrap().0
    })
}

/// Runs `case` on `instances` seeds and returns the worst relative error.
pub fn worst(case: fn(u64) -> f64, instances: u64) -> f64 {
    (0..instances).map(case).fold(0.0, f64::max)
}

pub const CASES: [(&str, fn(u64) -> f64); 4] = [
    ("mid_loss", mid_case),
    ("oicr_loss", oicr_case),
    ("total_loss", total_case),
    ("text classifier loss", textclf_case),
];

/// Every loss on `instances` random instances; fails above [`TOLERANCE`].
pub fn check_all(instances: u64) -> Result<String, String> {
    let mut parts = Vec::new();
    for (name, case) in CASES {
        let w = worst(case, instances);
        if !(w <= TOLERANCE) {
            return Err(format!("{name}: worst relative error {w:.3e} over {instances} instances"));
        }
        parts.push(format!("{name} {w:.1e}"));
    }
    Ok(format!("{instances} instances each, worst errors: {}", parts.join(", ")))
}
