//! Seeded random inputs for the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsod::{BBox, Detection, GroundTruthBox, ProposalSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut impl Rng, extent: f64) -> BBox {
    let x = rng.random_range(0.0..extent * 0.8);
    let y = rng.random_range(0.0..extent * 0.8);
    let w = rng.random_range(4.0..extent * 0.5);
    let h = rng.random_range(4.0..extent * 0.5);
    BBox::new(x, y, x + w, y + h)
}

pub fn random_boxes(rng: &mut impl Rng, n: usize) -> Vec<BBox> {
    (0..n).map(|_| random_box(rng, 500.0)).collect()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn proposals(rng: &mut impl Rng, m: usize, d: usize) -> ProposalSet {
    ProposalSet::new("bench", random_boxes(rng, m), random_matrix(rng, m, d)).expect("valid proposals")
}

/// `images` images, each with a few ground-truth boxes and `per_image`
/// detections jittered around them or placed at random.
pub fn detection_set(rng: &mut impl Rng, images: usize, per_image: usize) -> (Vec<Detection>, Vec<GroundTruthBox>) {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for i in 0..images {
        let id = format!("img{i}");
        let truth: Vec<BBox> = (0..rng.random_range(1..4)).map(|_| random_box(rng, 500.0)).collect();
        for b in &truth {
            gts.push(GroundTruthBox {
                image_id: id.clone(),
                class: 0,
                bbox: *b,
            });
        }
        for _ in 0..per_image {
            let bbox = if rng.random_bool(0.5) {
                let t = truth[rng.random_range(0..truth.len())];
                let j = rng.random_range(-5.0..5.0);
                BBox::new(t.x1 + j, t.y1 + j, t.x2 + j, t.y2 + j)
            } else {
                random_box(rng, 500.0)
            };
            dets.push(Detection {
                image_id: id.clone(),
                class: 0,
                score: rng.random(),
                bbox,
            });
        }
    }
    (dets, gts)
}
