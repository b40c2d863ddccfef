//! Invariants checked under a seeded property-testing runner.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use wsod::eval::{average_precision, corloc, coco_ap_sweep};
use wsod::geometry::nms;
use wsod::labels::{embedding_pseudo_label, exact_match, infer_two_step, synonym_match, tokenize};
use wsod::mil::{mil_forward, MilHead};
use wsod::nn::Affine;
use wsod::oicr::generate_instance_targets;
use wsod::{
    iou, BBox, CategoryVocabulary, Detection, EmbeddingTable, GroundTruthBox, LabelSet, Provenance, ProposalSet,
    TextClassifier,
};

const SEED: [u8; 32] = *b"wsod-property-suite-fixed-seed!!";

/// Runs `test` on `cases` values of `strategy` with a fixed generator.
pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::from_seed(RngAlgorithm::ChaCha, &SEED));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..40.0f64, 0.0..40.0f64, 0.5..30.0f64, 0.5..30.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

fn int_bbox() -> impl Strategy<Value = BBox> {
    (0u8..10, 0u8..10, 1u8..6, 1u8..6).prop_map(|(x, y, w, h)| {
        BBox::new(x.into(), y.into(), f64::from(x + w), f64::from(y + h))
    })
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-scale..scale, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// Proposals with identity features, so head weights are per-proposal logits.
fn identity_head(o_cls: &Array2<f64>, o_det: &Array2<f64>) -> (ProposalSet, MilHead) {
    let (m, c) = o_cls.dim();
    let boxes = (0..m).map(|i| BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0)).collect();
    let p = ProposalSet::new("x", boxes, Array2::eye(m)).unwrap();
    let head = MilHead {
        cls: Affine {
            weight: o_cls.t().to_owned(),
            bias: Array1::zeros(c),
        },
        det: Affine {
            weight: o_det.t().to_owned(),
            bias: Array1::zeros(c),
        },
    };
    (p, head)
}

fn logit_pair() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1usize..=12, 1usize..=5).prop_flat_map(|(m, c)| (matrix(m, c, 30.0), matrix(m, c, 30.0)))
}

// --- caption labelling ---------------------------------------------------

const WORDS: [&str; 14] = [
    "a", "person", "man", "riding", "bicycle", "bike", "dining", "table", "next", "to", "the", "dog", "red",
    "dining table",
];

fn vocab() -> CategoryVocabulary {
    let mut v = CategoryVocabulary::new(["person", "bicycle", "dining table", "dog"]).unwrap();
    v.add_synonym("man", 0).unwrap();
    v.add_synonym("bike", 1).unwrap();
    v.add_synonym("table", 2).unwrap();
    v
}

fn caption() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 0..12).prop_map(|w| w.join(" "))
}

pub fn exact_within_synonym() -> Result<(), String> {
    let v = vocab();
    run(500, caption(), |c| {
        let t = tokenize(&c);
        prop_assert!(exact_match(&t, &v).present.is_subset(&synonym_match(&t, &v).present));
        Ok(())
    })
}

pub fn exact_idempotent_and_duplicate_tokens() -> Result<(), String> {
    let v = vocab();
    run(500, caption(), |c| {
        let t = tokenize(&c);
        let once = exact_match(&t, &v);
        prop_assert_eq!(&once, &exact_match(&t, &v));
        let doubled: Vec<String> = t.tokens.iter().flat_map(|w| [w.clone(), w.clone()]).collect();
        prop_assert_eq!(&once, &exact_match(&tokenize(&doubled.join(" ")), &v));
        Ok(())
    })
}

fn tiny_table(v: &CategoryVocabulary) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(3);
    for (i, w) in ["a", "person", "man", "riding", "bicycle", "bike", "dining", "table", "next", "to", "the", "dog", "red"]
        .iter()
        .enumerate()
    {
        let x = i as f32;
        t.insert(*w, &[x.sin(), x.cos(), (x * 0.7).sin() + 0.1]).unwrap();
    }
    assert!(v.classes().iter().all(|c| t.phrase(c).is_some()));
    t
}

pub fn two_step_provenance() -> Result<(), String> {
    let v = vocab();
    let table = tiny_table(&v);
    let mut rng = super::rng(3);
    let clf = TextClassifier::init(&v, 3, 4, 0.5, &mut rng).unwrap();
    run(500, caption(), |c| {
        let t = tokenize(&c);
        let got = infer_two_step(&t, &v, &clf, &table).unwrap();
        let exact = exact_match(&t, &v);
        prop_assert_eq!(got.provenance == Provenance::Exact, !exact.is_empty());
        Ok(())
    })
}

pub fn embedding_label_at_most_one() -> Result<(), String> {
    let v = vocab();
    let table = tiny_table(&v);
    run(500, caption(), |c| {
        let l = embedding_pseudo_label(&tokenize(&c), &table, &v).unwrap();
        prop_assert!(l.len() <= 1);
        Ok(())
    })
}

pub fn tokenize_round_trip() -> Result<(), String> {
    run(500, "[ -~\t\n]{0,60}", |s| {
        let t = tokenize(&s);
        prop_assert_eq!(&tokenize(&t.tokens.join(" ")).tokens, &t.tokens);
        Ok(())
    })
}

// --- text classifier -----------------------------------------------------

fn classifier_fixture(hidden: usize) -> (CategoryVocabulary, EmbeddingTable, TextClassifier) {
    let v = CategoryVocabulary::new(["c0", "c1", "c2"]).unwrap();
    let mut table = EmbeddingTable::new(4);
    for i in 0..8 {
        let x = i as f32;
        table.insert(format!("w{i}"), &[x.sin(), x.cos(), (2.0 * x).sin(), 0.3 - 0.1 * x]).unwrap();
    }
    let mut rng = super::rng(11);
    let clf = TextClassifier::init(&v, 4, hidden, 0.5, &mut rng).unwrap();
    (v, table, clf)
}

fn token_list() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0usize..8).prop_map(|i| format!("w{i}")), 1..8)
}

pub fn classifier_permutation_invariant() -> Result<(), String> {
    let (_, table, clf) = classifier_fixture(16);
    run(300, token_list().prop_flat_map(|t| (Just(t.clone()), Just(t).prop_shuffle())), |(a, b)| {
        let fa = clf.forward(&tokenize(&a.join(" ")), &table).unwrap();
        let fb = clf.forward(&tokenize(&b.join(" ")), &table).unwrap();
        prop_assert_eq!(fa, fb);
        Ok(())
    })
}

/// With an identity output layer the logits are the pooled features.
pub fn max_pool_monotone() -> Result<(), String> {
    let (_, table, mut clf) = classifier_fixture(3);
    clf.output = Affine {
        weight: Array2::eye(3),
        bias: Array1::zeros(3),
    };
    run(300, (token_list(), 0usize..8), |(tokens, extra)| {
        let before = clf.forward(&tokenize(&tokens.join(" ")), &table).unwrap();
        let after = clf
            .forward(&tokenize(&format!("{} w{extra}", tokens.join(" "))), &table)
            .unwrap();
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(a >= b);
        }
        Ok(())
    })
}

// --- multiple-instance head ----------------------------------------------

pub fn p_det_columns_sum_to_one() -> Result<(), String> {
    run(1000, logit_pair(), |(o_cls, o_det)| {
        let (p, h) = identity_head(&o_cls, &o_det);
        let s = mil_forward(&p, &h).unwrap();
        for col in s.p_det.columns() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-6);
        }
        Ok(())
    })
}

pub fn softmax_shift_invariant() -> Result<(), String> {
    run(500, (logit_pair(), -50.0..50.0f64, any::<prop::sample::Index>()), |((o_cls, o_det), shift, col)| {
        let k = col.index(o_det.ncols());
        let mut shifted = o_det.clone();
        shifted.column_mut(k).mapv_inplace(|v| v + shift);
        let (p, h) = identity_head(&o_cls, &o_det);
        let (p2, h2) = identity_head(&o_cls, &shifted);
        let a = mil_forward(&p, &h).unwrap().p_det;
        let b = mil_forward(&p2, &h2).unwrap().p_det;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        Ok(())
    })
}

pub fn p_hat_monotone_in_cls_logits() -> Result<(), String> {
    let cases = (logit_pair(), any::<prop::sample::Index>(), any::<prop::sample::Index>(), 0.0..5.0f64);
    run(500, cases, |((o_cls, o_det), i, k, bump)| {
        let (i, k) = (i.index(o_cls.nrows()), k.index(o_cls.ncols()));
        let mut raised = o_cls.clone();
        raised[[i, k]] += bump;
        let (p, h) = identity_head(&o_cls, &o_det);
        let (p2, h2) = identity_head(&raised, &o_det);
        let a = mil_forward(&p, &h).unwrap();
        let b = mil_forward(&p2, &h2).unwrap();
        prop_assert_eq!(&a.p_det, &b.p_det);
        prop_assert!(b.p_hat[k] >= a.p_hat[k]);
        Ok(())
    })
}

pub fn mil_forward_permutation_equivariant() -> Result<(), String> {
    let strategy = (1usize..=10, 1usize..=4, 1usize..=5).prop_flat_map(|(m, c, d)| {
        (matrix(m, d, 2.0), Just(c), Just((0..m).collect::<Vec<_>>()).prop_shuffle())
    });
    let mut rng = super::rng(5);
    let heads: Vec<Vec<MilHead>> = (1..=5)
        .map(|d| (1..=4).map(|c| MilHead::init(d, c, &mut rng)).collect())
        .collect();
    run(300, strategy, |(x, c, perm)| {
        let m = x.nrows();
        let boxes: Vec<BBox> = (0..m).map(|i| BBox::new(i as f64, 0.0, i as f64 + 2.0, 2.0)).collect();
        let head = &heads[x.ncols() - 1][c - 1];
        let xp = Array2::from_shape_fn(x.raw_dim(), |(i, j)| x[[perm[i], j]]);
        let bp = perm.iter().map(|&i| boxes[i]).collect();
        let a = mil_forward(&ProposalSet::new("x", boxes, x).unwrap(), head).unwrap();
        let b = mil_forward(&ProposalSet::new("x", bp, xp).unwrap(), head).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for k in 0..c {
                prop_assert!((a.p_det[[src, k]] - b.p_det[[i, k]]).abs() < 1e-12);
                prop_assert!((a.p_cls[[src, k]] - b.p_cls[[i, k]]).abs() < 1e-12);
            }
        }
        for (x, y) in a.p_hat.iter().zip(&b.p_hat) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        Ok(())
    })
}

// --- refinement targets --------------------------------------------------

fn target_instance() -> impl Strategy<Value = (Vec<BBox>, Array2<f64>, BTreeSet<usize>, f64)> {
    (1usize..=20, 1usize..=5).prop_flat_map(|(m, c)| {
        (
            prop::collection::vec(int_bbox(), m),
            prop::collection::vec(0u8..=10, m * (c + 1))
                .prop_map(move |v| Array2::from_shape_fn((m, c + 1), |(i, j)| f64::from(v[i * (c + 1) + j]) / 10.0)),
            prop::collection::btree_set(0..c, 0..=c),
            prop::sample::select(vec![0.3, 0.5, 0.7]),
        )
    })
}

pub fn targets_rows_exact() -> Result<(), String> {
    run(1000, target_instance(), |(boxes, scores, present, thr)| {
        let labels = LabelSet::new(present, Provenance::Gold);
        let y = generate_instance_targets(&boxes, &scores.view(), &labels, thr).0;
        for row in y.rows() {
            prop_assert!(super::oracles::row_is_exact_distribution(&row.to_vec()));
        }
        Ok(())
    })
}

pub fn overlapping_proposals_have_no_background() -> Result<(), String> {
    run(1000, target_instance(), |(boxes, scores, present, thr)| {
        let c = scores.ncols() - 1;
        let labels = LabelSet::new(present.clone(), Provenance::Gold);
        let y = generate_instance_targets(&boxes, &scores.view(), &labels, thr).0;
        for &k in &present {
            let col = scores.column(k);
            let top = (0..boxes.len()).fold(0, |b, i| if col[i] > col[b] { i } else { b });
            for (i, b) in boxes.iter().enumerate() {
                if iou(b, &boxes[top]) > thr {
                    prop_assert_eq!(y[[i, c]], 0.0);
                }
            }
        }
        Ok(())
    })
}

pub fn single_class_disjoint_one_foreground_row() -> Result<(), String> {
    let strategy = (1usize..=12, 1usize..=5).prop_flat_map(|(m, c)| {
        (Just(m), matrix(m, c + 1, 1.0), 0..c, prop::sample::select(vec![0.3, 0.5, 0.7]))
    });
    run(500, strategy, |(m, scores, class, thr)| {
        let boxes: Vec<BBox> = (0..m).map(|i| BBox::new(3.0 * i as f64, 0.0, 3.0 * i as f64 + 2.0, 2.0)).collect();
        let labels = LabelSet::new([class], Provenance::Gold);
        let y = generate_instance_targets(&boxes, &scores.view(), &labels, thr).0;
        let c = scores.ncols() - 1;
        prop_assert_eq!(y.rows().into_iter().filter(|r| r[c] == 0.0).count(), 1);
        Ok(())
    })
}

// --- boxes and metrics ---------------------------------------------------

pub fn iou_laws() -> Result<(), String> {
    run(1000, (bbox(), bbox()), |(a, b)| {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        Ok(())
    })
}

fn detections() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0usize..2, 0usize..2, 0.0..1.0f64, bbox()), 0..25).prop_map(|v| {
        v.into_iter()
            .map(|(img, class, score, bbox)| Detection {
                image_id: format!("i{img}"),
                class,
                score,
                bbox,
            })
            .collect()
    })
}

pub fn nms_laws() -> Result<(), String> {
    run(500, (detections(), 0.1..0.9f64), |(dets, thr)| {
        let kept = nms(&dets, thr);
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(dets.contains(a));
            for b in &kept[i + 1..] {
                if a.image_id == b.image_id && a.class == b.class {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
                }
            }
        }
        Ok(())
    })
}

fn ground_truth() -> impl Strategy<Value = Vec<GroundTruthBox>> {
    prop::collection::vec((0usize..2, 0usize..2, bbox()), 1..6).prop_map(|v| {
        v.into_iter()
            .map(|(img, class, bbox)| GroundTruthBox {
                image_id: format!("i{img}"),
                class,
                bbox,
            })
            .collect()
    })
}

pub fn ap_rank_only() -> Result<(), String> {
    run(500, (detections(), ground_truth(), 0.01..100.0f64), |(dets, gts, k)| {
        let scaled: Vec<Detection> = dets.iter().map(|d| Detection { score: d.score * k, ..d.clone() }).collect();
        for c in 0..2 {
            let d0: Vec<Detection> = dets.iter().filter(|d| d.class == c).cloned().collect();
            let d1: Vec<Detection> = scaled.iter().filter(|d| d.class == c).cloned().collect();
            let g: Vec<GroundTruthBox> = gts.iter().filter(|g| g.class == c).cloned().collect();
            prop_assert_eq!(average_precision(&d0, &g, 0.5), average_precision(&d1, &g, 0.5));
        }
        let a = coco_ap_sweep(&dets, &gts, 2).ap;
        let b = coco_ap_sweep(&scaled, &gts, 2).ap;
        prop_assert_eq!(a, b);
        Ok(())
    })
}

pub fn corloc_laws() -> Result<(), String> {
    run(500, (detections(), ground_truth(), bbox(), 0usize..2), |(dets, gts, hit, class)| {
        let before = corloc(&dets, &gts, 2);
        for v in before.per_class.iter().flatten() {
            prop_assert!((0.0..=1.0).contains(v));
        }
        let mut dets2 = dets.clone();
        dets2.push(Detection {
            image_id: "fresh".into(),
            class,
            score: 1.0,
            bbox: hit,
        });
        let mut gts2 = gts.clone();
        gts2.push(GroundTruthBox {
            image_id: "fresh".into(),
            class,
            bbox: hit,
        });
        let after = corloc(&dets2, &gts2, 2);
        prop_assert!(after.per_class[class].unwrap() >= before.per_class[class].unwrap_or(0.0));
        Ok(())
    })
}

pub const ALL: [(&str, fn() -> Result<(), String>); 19] = [
    ("exact match within synonym match", exact_within_synonym),
    ("exact match idempotent, duplicate tokens", exact_idempotent_and_duplicate_tokens),
    ("two-step provenance exact iff exact match", two_step_provenance),
    ("embedding label has at most one class", embedding_label_at_most_one),
    ("tokenize round trip", tokenize_round_trip),
    ("classifier token-order invariance", classifier_permutation_invariant),
    ("max-pool monotone under added tokens", max_pool_monotone),
    ("p_det columns sum to one", p_det_columns_sum_to_one),
    ("softmax shift invariance", softmax_shift_invariant),
    ("p_hat monotone in classification logits", p_hat_monotone_in_cls_logits),
    ("mil_forward permutation equivariance", mil_forward_permutation_equivariant),
    ("target rows exact distributions", targets_rows_exact),
    ("overlapping proposals have no background", overlapping_proposals_have_no_background),
    ("single class, disjoint boxes: one foreground row", single_class_disjoint_one_foreground_row),
    ("iou symmetric, bounded, reflexive", iou_laws),
    ("nms ordered, separated, subset", nms_laws),
    ("AP depends on ranking only", ap_rank_only),
    ("corloc bounded and monotone under hits", corloc_laws),
    ("exact labels within synonym labels per caption set", exact_within_synonym_union),
];

/// Union over a caption list, the per-image form of the subset law.
pub fn exact_within_synonym_union() -> Result<(), String> {
    let v = vocab();
    run(300, prop::collection::vec(caption(), 0..4), |caps| {
        let mut e = BTreeSet::new();
        let mut s = BTreeSet::new();
        for c in &caps {
            let t = tokenize(c);
            e.extend(exact_match(&t, &v).present);
            s.extend(synonym_match(&t, &v).present);
        }
        prop_assert!(e.is_subset(&s));
        Ok(())
    })
}

/// Every property; the error lists each failing one.
pub fn check_all() -> Result<String, String> {
    let failures: Vec<String> = ALL
        .iter()
        .filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}")))
        .collect();
    if failures.is_empty() {
        Ok(format!("{} property suites green", ALL.len()))
    } else {
        Err(failures.join("\n"))
    }
}
