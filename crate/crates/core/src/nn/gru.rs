//! Stacked unidirectional GRU. Gate order is (reset, update, candidate),
//! i.e. r, z, n, with the candidate's hidden contribution gated by r:
//!
//!   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//!   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//!   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//!   h' = (1 - z) * n + z * h

use super::{gemm, sigmoid, Op, Param, Real};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct GruLayer<T> {
    pub w_ih: Param<T>, // (3H, I)
    pub w_hh: Param<T>, // (3H, H)
    pub b_ih: Param<T>, // (3H)
    pub b_hh: Param<T>, // (3H)
    pub input_dim: usize,
    pub hidden: usize,
}

impl<T: Real> GruLayer<T> {
    fn new(name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruLayer {
            w_ih: Param::uniform(&format!("{name}.w_ih"), &[3 * hidden, input_dim], bound, rng),
            w_hh: Param::uniform(&format!("{name}.w_hh"), &[3 * hidden, hidden], bound, rng),
            b_ih: Param::uniform(&format!("{name}.b_ih"), &[3 * hidden], bound, rng),
            b_hh: Param::uniform(&format!("{name}.b_hh"), &[3 * hidden], bound, rng),
            input_dim,
            hidden,
        }
    }
}

#[derive(Debug, Clone)]
struct StepCache<T> {
    x: Vec<T>,      // (B, I) layer input at this step
    h_prev: Vec<T>, // (B, H)
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    gh_n: Vec<T>, // W_hn h_prev + b_hn, pre-gating
}

/// Multi-layer GRU returning the final time step of the top layer.
#[derive(Debug, Clone)]
pub struct Gru<T> {
    pub layers: Vec<GruLayer<T>>,
    pub input_dim: usize,
    pub hidden: usize,
    cache: Option<Vec<Vec<StepCache<T>>>>,
    cache_batch: usize,
    cache_steps: usize,
}

impl<T: Real> Gru<T> {
    pub fn new(
        name: &str,
        input_dim: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden };
                GruLayer::new(&format!("{name}.l{l}"), in_dim, hidden, rng)
            })
            .collect();
        Gru {
            layers,
            input_dim,
            hidden,
            cache: None,
            cache_batch: 0,
            cache_steps: 0,
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| vec![&l.w_ih, &l.w_hh, &l.b_ih, &l.b_hh])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| vec![&mut l.w_ih, &mut l.w_hh, &mut l.b_ih, &mut l.b_hh])
            .collect()
    }

    /// One cell step for a whole batch. Returns `h_next` and the cache.
    fn cell_forward(layer: &GruLayer<T>, x: &[T], h_prev: &[T], batch: usize) -> (Vec<T>, StepCache<T>) {
        let hd = layer.hidden;
        let g3 = 3 * hd;
        // gi = x . W_ih^T + b_ih ; gh = h_prev . W_hh^T + b_hh
        let mut gi = vec![T::ZERO; batch * g3];
        gemm(Op::N, Op::T, batch, layer.input_dim, g3, T::ONE, x, &layer.w_ih.value, T::ZERO, &mut gi);
        let mut gh = vec![T::ZERO; batch * g3];
        gemm(Op::N, Op::T, batch, hd, g3, T::ONE, h_prev, &layer.w_hh.value, T::ZERO, &mut gh);
        let mut r = vec![T::ZERO; batch * hd];
        let mut z = vec![T::ZERO; batch * hd];
        let mut n = vec![T::ZERO; batch * hd];
        let mut gh_n = vec![T::ZERO; batch * hd];
        let mut h_next = vec![T::ZERO; batch * hd];
        for b in 0..batch {
            let gi = &gi[b * g3..(b + 1) * g3];
            let gh = &gh[b * g3..(b + 1) * g3];
            for j in 0..hd {
                let bias_i = layer.b_ih.value[j];
                let bias_i_z = layer.b_ih.value[hd + j];
                let bias_i_n = layer.b_ih.value[2 * hd + j];
                let bias_h = layer.b_hh.value[j];
                let bias_h_z = layer.b_hh.value[hd + j];
                let bias_h_n = layer.b_hh.value[2 * hd + j];
                let rv = sigmoid(gi[j] + bias_i + gh[j] + bias_h);
                let zv = sigmoid(gi[hd + j] + bias_i_z + gh[hd + j] + bias_h_z);
                let ghn = gh[2 * hd + j] + bias_h_n;
                let nv = (gi[2 * hd + j] + bias_i_n + rv * ghn).tanh();
                let hp = h_prev[b * hd + j];
                let idx = b * hd + j;
                r[idx] = rv;
                z[idx] = zv;
                n[idx] = nv;
                gh_n[idx] = ghn;
                h_next[idx] = (T::ONE - zv) * nv + zv * hp;
            }
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            z,
            n,
            gh_n,
        };
        (h_next, cache)
    }

    /// Forward over `x` laid out `(batch, steps, input_dim)`; initial hidden
    /// state is zero. Returns the top layer's final step, `(batch, hidden)`.
    pub fn forward(&mut self, x: &[T], batch: usize, steps: usize, train: bool) -> Vec<T> {
        assert!(steps >= 1, "sequence must have at least one step");
        assert_eq!(x.len(), batch * steps * self.input_dim);
        let hd = self.hidden;
        let mut caches: Vec<Vec<StepCache<T>>> = Vec::with_capacity(self.layers.len());
        // Layer input sequence, rewritten in place per layer.
        let mut seq: Vec<Vec<T>> = (0..steps)
            .map(|t| {
                let mut step = Vec::with_capacity(batch * self.input_dim);
                for b in 0..batch {
                    let base = (b * steps + t) * self.input_dim;
                    step.extend_from_slice(&x[base..base + self.input_dim]);
                }
                step
            })
            .collect();
        let mut last_h = vec![T::ZERO; batch * hd];
        for layer in &self.layers {
            let mut h = vec![T::ZERO; batch * hd];
            let mut layer_cache = Vec::with_capacity(steps);
            let mut out_seq = Vec::with_capacity(steps);
            for step_x in &seq {
                let (h_next, cache) = Self::cell_forward(layer, step_x, &h, batch);
                h = h_next;
                if train {
                    layer_cache.push(cache);
                }
                out_seq.push(h.clone());
            }
            last_h = h;
            seq = out_seq;
            caches.push(layer_cache);
        }
        if train {
            self.cache = Some(caches);
            self.cache_batch = batch;
            self.cache_steps = steps;
        }
        last_h
    }

    /// Backward from the gradient at the top layer's final step.
    /// Accumulates parameter gradients and returns `dL/dx`
    /// laid out `(batch, steps, input_dim)`.
    pub fn backward(&mut self, dh_last: &[T]) -> Vec<T> {
        let caches = self.cache.take().expect("backward without train forward");
        let batch = self.cache_batch;
        let steps = self.cache_steps;
        let hd = self.hidden;
        debug_assert_eq!(dh_last.len(), batch * hd);

        // Per-step gradient flowing into each layer's hidden outputs from the
        // layer above (or the loss, for the top layer's last step).
        let mut dh_seq: Vec<Vec<T>> = (0..steps).map(|_| vec![T::ZERO; batch * hd]).collect();
        dh_seq[steps - 1].copy_from_slice(dh_last);

        let mut dx_seq: Vec<Vec<T>> = Vec::new();
        for (li, layer) in self.layers.iter_mut().enumerate().rev() {
            let layer_cache = &caches[li];
            let in_dim = layer.input_dim;
            let g3 = 3 * hd;
            let mut dx_layer: Vec<Vec<T>> = (0..steps).map(|_| vec![T::ZERO; batch * in_dim]).collect();
            let mut dh_carry = vec![T::ZERO; batch * hd];
            for t in (0..steps).rev() {
                let cache = &layer_cache[t];
                let mut dgi = vec![T::ZERO; batch * g3];
                let mut dgh = vec![T::ZERO; batch * g3];
                let mut dh_prev = vec![T::ZERO; batch * hd];
                for b in 0..batch {
                    for j in 0..hd {
                        let idx = b * hd + j;
                        let dh = dh_seq[t][idx] + dh_carry[idx];
                        let (r, z, n, ghn) =
                            (cache.r[idx], cache.z[idx], cache.n[idx], cache.gh_n[idx]);
                        let hp = cache.h_prev[idx];
                        let dn = dh * (T::ONE - z);
                        let dz = dh * (hp - n);
                        dh_prev[idx] = dh * z;
                        let dn_pre = dn * (T::ONE - n * n);
                        let dr = dn_pre * ghn;
                        let dghn = dn_pre * r;
                        let dr_pre = dr * r * (T::ONE - r);
                        let dz_pre = dz * z * (T::ONE - z);
                        let gbase = b * g3;
                        dgi[gbase + j] = dr_pre;
                        dgi[gbase + hd + j] = dz_pre;
                        dgi[gbase + 2 * hd + j] = dn_pre;
                        dgh[gbase + j] = dr_pre;
                        dgh[gbase + hd + j] = dz_pre;
                        dgh[gbase + 2 * hd + j] = dghn;
                    }
                }
                // Parameter gradients.
                gemm(Op::T, Op::N, g3, batch, in_dim, T::ONE, &dgi, &cache.x, T::ONE, &mut layer.w_ih.grad);
                gemm(Op::T, Op::N, g3, batch, hd, T::ONE, &dgh, &cache.h_prev, T::ONE, &mut layer.w_hh.grad);
                for b in 0..batch {
                    for j in 0..g3 {
                        layer.b_ih.grad[j] += dgi[b * g3 + j];
                        layer.b_hh.grad[j] += dgh[b * g3 + j];
                    }
                }
                // Input and recurrent gradients.
                gemm(Op::N, Op::N, batch, g3, in_dim, T::ONE, &dgi, &layer.w_ih.value, T::ZERO, &mut dx_layer[t]);
                gemm(Op::N, Op::N, batch, g3, hd, T::ONE, &dgh, &layer.w_hh.value, T::ONE, &mut dh_prev);
                dh_carry = dh_prev;
            }
            dh_seq = dx_layer.clone();
            dx_seq = dx_layer;
        }

        // Re-interleave to (batch, steps, input_dim).
        let in_dim = self.input_dim;
        let mut dx = vec![T::ZERO; batch * steps * in_dim];
        for (t, step) in dx_seq.iter().enumerate() {
            for b in 0..batch {
                let dst = (b * steps + t) * in_dim;
                dx[dst..dst + in_dim].copy_from_slice(&step[b * in_dim..(b + 1) * in_dim]);
            }
        }
        dx
    }
}
