//! Naive re-implementations checked against the library on random instances.

use ndarray::Array2;
use rand::Rng;

use wsod::eval::{average_precision, coco_ap_sweep};
use wsod::oicr::generate_instance_targets;
use wsod::{BBox, Detection, GroundTruthBox, LabelSet};

use super::{int_box, random_labels, rng};

/// Intersection over union written out coordinate by coordinate.
pub fn naive_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = f64::max(0.0, f64::min(a.x2, b.x2) - f64::max(a.x1, b.x1));
    let ih = f64::max(0.0, f64::min(a.y2, b.y2) - f64::max(a.y1, b.y1));
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    let area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    inter / (area_a + area_b - inter)
}

/// Pseudo-label generation as three nested loops over proposals, classes and
/// proposals again, with foreground counts kept as integers.
pub fn naive_instance_targets(boxes: &[BBox], scores: &Array2<f64>, labels: &LabelSet, thr: f64) -> Array2<f64> {
    let m = boxes.len();
    let c = scores.ncols() - 1;
    let mut fg = vec![vec![false; c]; m];
    for (r, row) in fg.iter_mut().enumerate() {
        for (class, flag) in row.iter_mut().enumerate() {
            if !labels.present.contains(&class) {
                continue;
            }
            let mut top = 0;
            let mut best = f64::NEG_INFINITY;
            for i in 0..m {
                if scores[[i, class]] > best {
                    best = scores[[i, class]];
                    top = i;
                }
            }
            if naive_iou(&boxes[r], &boxes[top]) > thr {
                *flag = true;
            }
        }
    }
    let mut y = Array2::zeros((m, c + 1));
    for r in 0..m {
        let count = fg[r].iter().filter(|f| **f).count();
        if count == 0 {
            y[[r, c]] = 1.0;
        } else {
            for class in 0..c {
                if fg[r][class] {
                    y[[r, class]] = 1.0 / count as f64;
                }
            }
        }
    }
    y
}

/// A row sums to one exactly when its non-zero entries are `n` copies of `1/n`.
pub fn row_is_exact_distribution(row: &[f64]) -> bool {
    let nz: Vec<f64> = row.iter().copied().filter(|v| *v != 0.0).collect();
    !nz.is_empty() && nz.iter().all(|v| *v == 1.0 / nz.len() as f64)
}

/// Library targets against the naive version on `trials` random instances
/// with `m <= 20`, `C <= 5` and thresholds 0.3 / 0.5 / 0.7. Integer box
/// corners and a coarse score grid make IoU boundaries and score ties common.
pub fn check_instance_targets(trials: usize, seed: u64) -> Result<String, String> {
    let mut rng = rng(seed);
    let mut fg_rows = 0usize;
    for trial in 0..trials {
        let m = rng.random_range(1..=20);
        let c = rng.random_range(1..=5);
        let thr = [0.3, 0.5, 0.7][rng.random_range(0..3)];
        let boxes: Vec<BBox> = (0..m).map(|_| int_box(&mut rng, 12)).collect();
        let scores = Array2::from_shape_simple_fn((m, c + 1), || rng.random_range(0..=10) as f64 / 10.0);
        let labels = random_labels(&mut rng, c, true);
        let got = generate_instance_targets(&boxes, &scores.view(), &labels, thr).0;
        let want = naive_instance_targets(&boxes, &scores, &labels, thr);
        if got != want {
            return Err(format!("trial {trial}: targets differ\n got {got:?}\nwant {want:?}"));
        }
        for (i, row) in got.rows().into_iter().enumerate() {
            if !row_is_exact_distribution(&row.to_vec()) {
                return Err(format!("trial {trial}: row {i} is not an exact distribution: {row:?}"));
            }
            if row[c] == 0.0 {
                fg_rows += 1;
            }
        }
    }
    Ok(format!("{trials} instances identical, {fg_rows} foreground rows"))
}

/// Greedy matching of the first `k` ranked detections from scratch: each takes
/// the unmatched ground-truth box of its image with the highest IoU at or
/// above `thr`, the earliest such box on ties.
fn true_positives_in_prefix(ranked: &[&Detection], gts: &[GroundTruthBox], thr: f64) -> usize {
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for d in ranked {
        let mut best: Option<usize> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[j] || g.image_id != d.image_id || g.class != d.class {
                continue;
            }
            let ov = naive_iou(&d.bbox, &g.bbox);
            if ov >= thr && best.is_none_or(|b| ov > naive_iou(&d.bbox, &gts[b].bbox)) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
        }
    }
    tp
}

/// All-point AP from every prefix of the ranked list: recall steps weighted by
/// the best precision at or beyond each step.
pub fn brute_force_ap(dets: &[Detection], gts: &[GroundTruthBox], thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut ranked: Vec<&Detection> = dets.iter().collect();
    // stable: equal scores keep input order
    ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let n = ranked.len();
    let npos = gts.len() as f64;
    let tp: Vec<usize> = (1..=n).map(|k| true_positives_in_prefix(&ranked[..k], gts, thr)).collect();
    let precision: Vec<f64> = (0..n).map(|k| tp[k] as f64 / (k + 1) as f64).collect();
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for k in 0..n {
        if tp[k] > prev_tp {
            let best = precision[k..].iter().copied().fold(0.0, f64::max);
            ap += (tp[k] - prev_tp) as f64 / npos * best;
            prev_tp = tp[k];
        }
    }
    Some(ap)
}

fn det(image: &str, score: f64, bbox: BBox) -> Detection {
    Detection {
        image_id: image.into(),
        class: 0,
        score,
        bbox,
    }
}

fn gt(image: &str, bbox: BBox) -> GroundTruthBox {
    GroundTruthBox {
        image_id: image.into(),
        class: 0,
        bbox,
    }
}

/// Library AP against [`brute_force_ap`] on tiny instances (at most six
/// detections, at most three ground-truth boxes, one or two images).
pub fn check_ap_oracle(trials: usize, seed: u64) -> Result<String, String> {
    let mut rng = rng(seed);
    let mut undefined = 0;
    for trial in 0..trials {
        let images = ["a", "b"];
        let n_img = rng.random_range(1..=2);
        let n_det = rng.random_range(0..=6);
        let n_gt = rng.random_range(0..=3);
        let dets: Vec<Detection> = (0..n_det)
            .map(|_| {
                det(
                    images[rng.random_range(0..n_img)],
                    rng.random_range(1..=5) as f64 / 5.0,
                    int_box(&mut rng, 6),
                )
            })
            .collect();
        let gts: Vec<GroundTruthBox> = (0..n_gt)
            .map(|_| gt(images[rng.random_range(0..n_img)], int_box(&mut rng, 6)))
            .collect();
        let got = average_precision(&dets, &gts, 0.5);
        let want = brute_force_ap(&dets, &gts, 0.5);
        match (got, want) {
            (None, None) => undefined += 1,
            (Some(g), Some(w)) if (g - w).abs() < 1e-12 => {}
            _ => return Err(format!("trial {trial}: library {got:?} vs oracle {want:?}\n{dets:?}\n{gts:?}")),
        }
    }
    Ok(format!("{trials} instances agree ({undefined} without ground truth)"))
}

/// The worked examples: AP 5/6 and IoU 0.9.
pub fn check_hand_cases() -> Result<String, String> {
    let g = [gt("a", BBox::new(0.0, 0.0, 10.0, 10.0)), gt("a", BBox::new(20.0, 20.0, 30.0, 30.0))];
    let d = [
        det("a", 0.9, BBox::new(0.0, 0.0, 10.0, 10.0)),
        det("a", 0.8, BBox::new(40.0, 40.0, 50.0, 50.0)),
        det("a", 0.7, BBox::new(20.0, 20.0, 30.0, 30.0)),
    ];
    let ap = average_precision(&d, &g, 0.5).ok_or("AP undefined")?;
    if (ap - 5.0 / 6.0).abs() > 1e-12 {
        return Err(format!("hand AP {ap} != 5/6"));
    }
    let v = wsod::iou(&BBox::new(0.0, 0.0, 10.0, 10.0), &BBox::new(0.0, 0.0, 10.0, 9.0));
    if v != 0.9 {
        return Err(format!("IoU {v} != 0.9"));
    }
    Ok("AP = 5/6 (within 1e-12) and IoU = 0.9 exactly".into())
}

/// One detection against one ground-truth box: the sweep is the share of
/// thresholds `0.50, 0.55, ..., 0.95` not above their IoU.
pub fn check_coco_counting(trials: usize, seed: u64) -> Result<String, String> {
    let mut rng = rng(seed);
    for trial in 0..trials {
        let g = super::float_box(&mut rng, 20.0);
        let b = if rng.random_bool(0.3) { g } else { super::float_box(&mut rng, 20.0) };
        let v = naive_iou(&b, &g);
        let passing = (0..10).filter(|i| (50 + 5 * i) as f64 / 100.0 <= v).count();
        let want = passing as f64 / 10.0;
        let s = coco_ap_sweep(&[det("a", 0.5, b)], &[gt("a", g)], 1);
        let got = s.ap.ok_or("sweep undefined")?;
        if (got - want).abs() > 1e-12 {
            return Err(format!("trial {trial}: IoU {v}: sweep {got} vs {want}"));
        }
    }
    let s = coco_ap_sweep(&[det("a", 0.5, BBox::new(0.0, 0.0, 10.0, 6.0))], &[gt("a", BBox::new(0.0, 0.0, 10.0, 10.0))], 1);
    if s.ap.map(|v| (v - 0.3).abs() < 1e-12) != Some(true) {
        return Err(format!("IoU 0.6 case gave {:?}", s.ap));
    }
    Ok(format!("{trials} single-detection sweeps match threshold counts"))
}
