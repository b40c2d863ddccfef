//! Oracles, gradient checks and property suites shared by the core test
//! targets and the CLI crate's acceptance harness.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod props;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wsod::{BBox, LabelSet, Provenance, ProposalSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box with integer corners inside `[0, extent]`.
pub fn int_box(rng: &mut impl Rng, extent: u32) -> BBox {
    let x1 = rng.random_range(0..extent);
    let y1 = rng.random_range(0..extent);
    let x2 = rng.random_range(x1 + 1..=extent);
    let y2 = rng.random_range(y1 + 1..=extent);
    BBox::new(x1.into(), y1.into(), x2.into(), y2.into())
}

pub fn float_box(rng: &mut impl Rng, extent: f64) -> BBox {
    let x1 = rng.random_range(0.0..extent * 0.8);
    let y1 = rng.random_range(0.0..extent * 0.8);
    let x2 = rng.random_range(x1 + 0.5..=extent);
    let y2 = rng.random_range(y1 + 0.5..=extent);
    BBox::new(x1, y1, x2, y2)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// Random, possibly empty, subset of `0..c`.
pub fn random_labels(rng: &mut impl Rng, c: usize, allow_empty: bool) -> LabelSet {
    loop {
        let l = LabelSet::new((0..c).filter(|_| rng.random_bool(0.5)), Provenance::Gold);
        if allow_empty || !l.is_empty() {
            return l;
        }
    }
}

pub fn random_proposals(rng: &mut impl Rng, m: usize, d: usize) -> ProposalSet {
    let boxes = (0..m).map(|_| float_box(rng, 50.0)).collect();
    ProposalSet::new("img", boxes, random_matrix(rng, m, d, 1.0)).unwrap()
}
