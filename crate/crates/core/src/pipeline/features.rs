//! A small fixed convolutional feature extractor with region pooling.
//!
//! Stands in for a pretrained backbone: two convolution layers (colour
//! opponency, then a 3x3 smoothing) produce a feature map, and each proposal
//! is described by average-pooled features over a grid of bins inside the box,
//! over the whole box, and over a context ring around it.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::Rgb32FImage;
use ndarray::{Array1, Array2, Array3, Array4};

use crate::error::Result;
use crate::geometry::BBox;

pub fn load_image(path: impl AsRef<Path>) -> Result<Rgb32FImage> {
    Ok(image::open(path)?.to_rgb32f())
}

/// Resizes so the shorter side equals `scale` and optionally mirrors.
/// Returns the transformed image and the coordinate scale factor.
pub fn transform_image(img: &Rgb32FImage, scale: Option<u32>, flip: bool) -> (Rgb32FImage, f64) {
    let (w, h) = img.dimensions();
    let factor = scale.map_or(1.0, |s| f64::from(s) / f64::from(w.min(h)));
    let nw = ((f64::from(w) * factor).round() as u32).max(1);
    let nh = ((f64::from(h) * factor).round() as u32).max(1);
    let mut out = if (nw, nh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, nw, nh, FilterType::Triangle)
    };
    if flip {
        imageops::flip_horizontal_in_place(&mut out);
    }
    (out, f64::from(nw) / f64::from(w))
}

/// Same-padded 2-D convolution with an optional rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `out x in x k x k`, `k` odd.
    pub weight: Array4<f32>,
    pub bias: Array1<f32>,
    pub relu: bool,
}

impl ConvLayer {
    pub fn apply(&self, input: &Array3<f32>) -> Array3<f32> {
        let (cout, cin, k, _) = self.weight.dim();
        let (_, h, w) = input.dim();
        let r = (k / 2) as isize;
        let mut out = Array3::<f32>::zeros((cout, h, w));
        for o in 0..cout {
            let mut plane = out.index_axis_mut(ndarray::Axis(0), o);
            plane.fill(self.bias[o]);
            for i in 0..cin {
                let src = input.index_axis(ndarray::Axis(0), i);
                for dy in 0..k {
                    for dx in 0..k {
                        let wv = self.weight[[o, i, dy, dx]];
                        if wv == 0.0 {
                            continue;
                        }
                        let (oy, ox) = (dy as isize - r, dx as isize - r);
                        for y in 0..h {
                            let sy = y as isize + oy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for x in 0..w {
                                let sx = x as isize + ox;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                plane[[y, x]] += wv * src[[sy as usize, sx as usize]];
                            }
                        }
                    }
                }
            }
            if self.relu {
                plane.mapv_inplace(|v| v.max(0.0));
            }
        }
        out
    }
}

/// Per-channel summed-area tables of a feature map.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    /// `channels x (height+1) x (width+1)`
    integral: Array3<f64>,
}

impl FeatureMap {
    fn from_activations(act: &Array3<f32>) -> Self {
        let (c, h, w) = act.dim();
        let mut integral = Array3::<f64>::zeros((c, h + 1, w + 1));
        for ch in 0..c {
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    row += f64::from(act[[ch, y, x]]);
                    integral[[ch, y + 1, x + 1]] = integral[[ch, y, x + 1]] + row;
                }
            }
        }
        Self {
            width: w,
            height: h,
            integral,
        }
    }

    pub fn channels(&self) -> usize {
        self.integral.dim().0
    }

    /// Integer pixel span `[lo, hi)` covering `[a, b)`, at least one pixel wide.
    fn span(a: f64, b: f64, limit: usize) -> (usize, usize) {
        let lo = (a.floor().max(0.0) as usize).min(limit - 1);
        let hi = (b.ceil().max(0.0) as usize).clamp(lo + 1, limit);
        (lo, hi)
    }

    fn region_sum(&self, ch: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = &self.integral;
        s[[ch, y1, x1]] - s[[ch, y0, x1]] - s[[ch, y1, x0]] + s[[ch, y0, x0]]
    }

    fn pixel_bounds(&self, b: &BBox) -> (usize, usize, usize, usize) {
        let (x0, x1) = Self::span(b.x1, b.x2, self.width);
        let (y0, y1) = Self::span(b.y1, b.y2, self.height);
        (x0, y0, x1, y1)
    }

    /// Mean activation of each channel over a box (feature-map coordinates).
    pub fn mean(&self, b: &BBox, out: &mut Vec<f64>) {
        let (x0, y0, x1, y1) = self.pixel_bounds(b);
        let area = ((x1 - x0) * (y1 - y0)) as f64;
        for ch in 0..self.channels() {
            out.push(self.region_sum(ch, x0, y0, x1, y1) / area);
        }
    }

    /// Mean activation over `outer` minus `inner`; zeros for an empty ring.
    pub fn ring_mean(&self, inner: &BBox, outer: &BBox, out: &mut Vec<f64>) {
        let (ox0, oy0, ox1, oy1) = self.pixel_bounds(outer);
        let (ix0, iy0, ix1, iy1) = self.pixel_bounds(inner);
        let (ix0, iy0) = (ix0.max(ox0), iy0.max(oy0));
        let (ix1, iy1) = (ix1.min(ox1).max(ix0), iy1.min(oy1).max(iy0));
        let area = ((ox1 - ox0) * (oy1 - oy0)) as f64 - ((ix1 - ix0) * (iy1 - iy0)) as f64;
        for ch in 0..self.channels() {
            if area <= 0.0 {
                out.push(0.0);
                continue;
            }
            let s = self.region_sum(ch, ox0, oy0, ox1, oy1) - self.region_sum(ch, ix0, iy0, ix1, iy1);
            out.push(s / area);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeatureProvider {
    pub layers: Vec<ConvLayer>,
    /// Pooling grid inside each box is `bins x bins`.
    pub bins: usize,
    /// The context ring spans the box grown by this fraction of its size.
    pub context: f64,
}

impl Default for ToyFeatureProvider {
    fn default() -> Self {
        // channels: R, G, B and the six rectified pairwise differences
        const PAIRS: [(usize, usize); 6] = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)];
        let channels = 3 + PAIRS.len();
        let mut colour = Array4::<f32>::zeros((channels, 3, 1, 1));
        for c in 0..3 {
            colour[[c, c, 0, 0]] = 1.0;
        }
        for (k, (a, b)) in PAIRS.iter().enumerate() {
            colour[[3 + k, *a, 0, 0]] = 1.0;
            colour[[3 + k, *b, 0, 0]] = -1.0;
        }
        let mut smooth = Array4::<f32>::zeros((channels, channels, 3, 3));
        for c in 0..channels {
            for dy in 0..3 {
                for dx in 0..3 {
                    smooth[[c, c, dy, dx]] = 1.0 / 9.0;
                }
            }
        }
        Self {
            layers: vec![
                ConvLayer {
                    weight: colour,
                    bias: Array1::zeros(channels),
                    relu: true,
                },
                ConvLayer {
                    weight: smooth,
                    bias: Array1::zeros(channels),
                    relu: false,
                },
            ],
            bins: 2,
            context: 0.5,
        }
    }
}

impl ToyFeatureProvider {
    pub fn channels(&self) -> usize {
        self.layers.last().map_or(3, |l| l.weight.dim().0)
    }

    /// `channels * (bins^2 + 2)`: binned means, whole-box mean, context ring.
    pub fn feature_dim(&self) -> usize {
        self.channels() * (self.bins * self.bins + 2)
    }

    pub fn feature_map(&self, img: &Rgb32FImage) -> FeatureMap {
        let (w, h) = img.dimensions();
        let mut act = Array3::<f32>::zeros((3, h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                act[[c, y as usize, x as usize]] = p.0[c];
            }
        }
        for layer in &self.layers {
            act = layer.apply(&act);
        }
        FeatureMap::from_activations(&act)
    }

    /// One feature row per box; boxes are in feature-map pixel coordinates.
    pub fn pool(&self, map: &FeatureMap, boxes: &[BBox]) -> Array2<f64> {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(boxes.len() * d);
        let n = self.bins as f64;
        for b in boxes {
            let (bw, bh) = (b.width() / n, b.height() / n);
            for i in 0..self.bins {
                for j in 0..self.bins {
                    let cell = BBox::new(
                        b.x1 + j as f64 * bw,
                        b.y1 + i as f64 * bh,
                        b.x1 + (j + 1) as f64 * bw,
                        b.y1 + (i + 1) as f64 * bh,
                    );
                    map.mean(&cell, &mut data);
                }
            }
            map.mean(b, &mut data);
            let (gx, gy) = (b.width() * self.context / 2.0, b.height() * self.context / 2.0);
            let outer = BBox::new(b.x1 - gx, b.y1 - gy, b.x2 + gx, b.y2 + gy);
            map.ring_mean(b, &outer, &mut data);
        }
        Array2::from_shape_vec((boxes.len(), d), data).expect("one row per box")
    }

    /// Features of `boxes` (original image coordinates) after resizing the
    /// image to `scale` and optionally mirroring it.
    pub fn extract(&self, img: &Rgb32FImage, boxes: &[BBox], scale: Option<u32>, flip: bool) -> Array2<f64> {
        let (t, factor) = transform_image(img, scale, flip);
        let w = f64::from(t.width());
        let mapped: Vec<BBox> = boxes
            .iter()
            .map(|b| {
                let s = b.scale(factor);
                if flip {
                    s.flip_horizontal(w)
                } else {
                    s
                }
            })
            .collect();
        self.pool(&self.feature_map(&t), &mapped)
    }
}
