//! Dense layer, dropout, and the softmax cross-entropy head.

use super::{gemm, Op, Param, Real};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Fully connected layer `y = x . w^T + b`, weights stored `out x in`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
    cache_x: Vec<T>,
    cache_rows: usize,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            w: Param::uniform(&format!("{name}.w"), &[out_dim, in_dim], bound, rng),
            b: Param::uniform(&format!("{name}.b"), &[out_dim], bound, rng),
            in_dim,
            out_dim,
            cache_x: Vec::new(),
            cache_rows: 0,
        }
    }

    pub fn forward(&mut self, x: &[T], rows: usize, train: bool) -> Vec<T> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = vec![T::ZERO; rows * self.out_dim];
        gemm(
            Op::N,
            Op::T,
            rows,
            self.in_dim,
            self.out_dim,
            T::ONE,
            x,
            &self.w.value,
            T::ZERO,
            &mut y,
        );
        for r in 0..rows {
            let row = &mut y[r * self.out_dim..(r + 1) * self.out_dim];
            for (v, b) in row.iter_mut().zip(&self.b.value) {
                *v += *b;
            }
        }
        if train {
            self.cache_x = x.to_vec();
            self.cache_rows = rows;
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, dy: &[T]) -> Vec<T> {
        let rows = self.cache_rows;
        debug_assert_eq!(dy.len(), rows * self.out_dim);
        // dW += dy^T . x
        gemm(
            Op::T,
            Op::N,
            self.out_dim,
            rows,
            self.in_dim,
            T::ONE,
            dy,
            &self.cache_x,
            T::ONE,
            &mut self.w.grad,
        );
        for r in 0..rows {
            let row = &dy[r * self.out_dim..(r + 1) * self.out_dim];
            for (g, d) in self.b.grad.iter_mut().zip(row) {
                *g += *d;
            }
        }
        let mut dx = vec![T::ZERO; rows * self.in_dim];
        gemm(
            Op::N,
            Op::N,
            rows,
            self.out_dim,
            self.in_dim,
            T::ONE,
            dy,
            &self.w.value,
            T::ZERO,
            &mut dx,
        );
        dx
    }
}

/// In-place ReLU; returns nothing, backward uses the cached output sign.
pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Masks `dy` by the activation output (`dy = 0` where `y == 0`).
pub fn relu_backward_from_output<T: Real>(dy: &mut [T], y: &[T]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v <= T::ZERO {
            *d = T::ZERO;
        }
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)` at train time so
/// eval needs no rescaling. Returns the multiplier mask for backward.
pub fn dropout_mask<T: Real>(len: usize, p: f64, rng: &mut ChaCha20Rng) -> Vec<T> {
    debug_assert!((0.0..1.0).contains(&p));
    if p == 0.0 {
        return vec![T::ONE; len];
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < p {
                T::ZERO
            } else {
                keep
            }
        })
        .collect()
}

pub fn apply_mask<T: Real>(x: &mut [T], mask: &[T]) {
    for (v, m) in x.iter_mut().zip(mask) {
        *v *= *m;
    }
}

/// Mean softmax cross-entropy over a batch of 2-class logits.
///
/// Returns `(mean loss, dL/dlogits, correct argmax count)`.
pub fn softmax_xent<T: Real>(
    logits: &[T],
    labels: &[usize],
    classes: usize,
) -> (f64, Vec<T>, usize) {
    let rows = labels.len();
    debug_assert_eq!(logits.len(), rows * classes);
    let mut dlogits = vec![T::ZERO; logits.len()];
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let inv_rows = T::from_f64(1.0 / rows as f64);
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits[r * classes..(r + 1) * classes];
        let mut max = row[0];
        let mut argmax = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > max {
                max = v;
                argmax = i;
            }
        }
        if argmax == label {
            correct += 1;
        }
        let mut denom = T::ZERO;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.to_f64().ln();
        loss_sum += log_denom - (row[label] - max).to_f64();
        let drow = &mut dlogits[r * classes..(r + 1) * classes];
        for (i, &v) in row.iter().enumerate() {
            let softmax = (v - max).exp() / denom;
            let target = if i == label { T::ONE } else { T::ZERO };
            drow[i] = (softmax - target) * inv_rows;
        }
    }
    (loss_sum / rows as f64, dlogits, correct)
}
