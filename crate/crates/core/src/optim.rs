//! Adaptive per-parameter gradient accumulation (AdaGrad).

use serde::{Deserialize, Serialize};

/// Accumulator start value, matching the common TensorFlow default.
pub const INITIAL_ACCUMULATOR: f64 = 0.1;

/// `acc += g^2; p -= lr * g / sqrt(acc)`, element by element.
///
/// Accumulators are created on the first step from the shapes handed in, so
/// every later call must pass tensors in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adagrad {
    pub lr: f64,
    pub initial_accumulator: f64,
    accumulators: Vec<Vec<f64>>,
}

impl Adagrad {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            initial_accumulator: INITIAL_ACCUMULATOR,
            accumulators: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.accumulators.is_empty() {
            self.accumulators = grads
                .iter()
                .map(|g| vec![self.initial_accumulator; g.len()])
                .collect();
        }
        assert_eq!(self.accumulators.len(), params.len(), "optimizer state does not fit model");
        for ((p, g), acc) in params.into_iter().zip(grads).zip(&mut self.accumulators) {
            assert_eq!(p.len(), g.len());
            for ((p, g), a) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                *a += g * g;
                *p -= self.lr * g / a.sqrt();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_formula() {
        let mut opt = Adagrad::new(0.01);
        let mut p = vec![1.0, -2.0];
        opt.step(vec![&mut p], vec![&[0.3, 0.0]]);
        assert!((p[0] - (1.0 - 0.01 * 0.3 / (0.1f64 + 0.09).sqrt())).abs() < 1e-15);
        assert_eq!(p[1], -2.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adagrad::new(0.5);
        let mut x = vec![3.0];
        for _ in 0..500 {
            let g = [2.0 * (x[0] - 1.0)];
            opt.step(vec![&mut x], vec![&g]);
        }
        assert!((x[0] - 1.0).abs() < 1e-3);
    }
}
