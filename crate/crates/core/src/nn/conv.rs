//! Three-block convolutional encoder: each block is conv3x3 -> batch norm ->
//! ReLU, with one adaptive max pool, dropout, and flatten after the third
//! block. Image-level work runs in parallel; every cross-image reduction is
//! combined sequentially in image order so results do not depend on thread
//! scheduling.

use super::layers::dropout_mask;
use super::{gemm, Op, Param, Real};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

/// Output grid of the adaptive max pool, fixed so the flattened feature
/// width is independent of the input image size.
pub const POOL_GRID: usize = 4;

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// 3x3 convolution, padding 1, stride 1, no bias (batch norm follows and
/// would cancel it). Weights stored `c_out x (c_in * 9)`.
#[derive(Debug, Clone)]
pub struct Conv3x3<T> {
    pub w: Param<T>,
    pub c_in: usize,
    pub c_out: usize,
}

impl<T: Real> Conv3x3<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha20Rng) -> Self {
        let fan_in = c_in * TAPS;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv3x3 {
            w: Param::uniform(&format!("{name}.w"), &[c_out, fan_in], bound, rng),
            c_in,
            c_out,
        }
    }
}

/// Unrolls `x` (c x h x w) into `col` (c*9 x h*w) with zero padding.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(col.len(), c * TAPS * h * w);
    let hw = h * w;
    col.fill(T::ZERO);
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * TAPS + ky * KERNEL + kx) * hw;
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = (h as isize - dy).min(h as isize) as usize;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize) as usize;
                for y in y_lo..y_hi {
                    let src_y = (y as isize + dy) as usize;
                    let dst = row + y * w;
                    let src = src_y * w;
                    col[dst + x_lo..dst + x_hi].copy_from_slice(
                        &plane[src + ((x_lo as isize + dx) as usize)
                            ..src + ((x_hi as isize + dx) as usize)],
                    );
                }
            }
        }
    }
}

/// Scatters a column matrix back into image space, accumulating.
fn col2im_add<T: Real>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane_base = ch * hw;
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ch * TAPS + ky * KERNEL + kx) * hw;
                let dy = ky as isize - 1;
                let dxo = kx as isize - 1;
                let y_lo = (-dy).max(0) as usize;
                let y_hi = (h as isize - dy).min(h as isize) as usize;
                let x_lo = (-dxo).max(0) as usize;
                let x_hi = (w as isize - dxo).min(w as isize) as usize;
                for y in y_lo..y_hi {
                    let src_y = (y as isize + dy) as usize;
                    let src = row + y * w;
                    let dst = plane_base + src_y * w;
                    for x in x_lo..x_hi {
                        dx[dst + ((x as isize + dxo) as usize)] += col[src + x];
                    }
                }
            }
        }
    }
}

/// Batch normalization over (image, spatial) per channel. Statistics are
/// accumulated in f64 regardless of the element type.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub channels: usize,
    /// Saved train-batch statistics for the backward pass.
    batch_mean: Vec<f64>,
    batch_invstd: Vec<f64>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(&format!("{name}.gamma"), &[channels], 1.0),
            beta: Param::filled(&format!("{name}.beta"), &[channels], 0.0),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            channels,
            batch_mean: Vec::new(),
            batch_invstd: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct StackCache<T> {
    n_imgs: usize,
    h: usize,
    w: usize,
    x0: Vec<T>,
    y1: Vec<T>,
    y2: Vec<T>,
    y3: Vec<T>,
    pool_argmax: Vec<u32>,
    drop_mask: Vec<T>,
}

/// The CNN encoder: conv(c1) -> bn -> relu, conv(c2) -> bn -> relu,
/// conv(c3) -> bn -> relu, adaptive max pool to 4x4, dropout, flatten.
#[derive(Debug, Clone)]
pub struct CnnStack<T> {
    pub conv1: Conv3x3<T>,
    pub conv2: Conv3x3<T>,
    pub conv3: Conv3x3<T>,
    pub bn1: BatchNorm<T>,
    pub bn2: BatchNorm<T>,
    pub bn3: BatchNorm<T>,
    pub dropout_p: f64,
    cache: Option<StackCache<T>>,
}

/// Minimum input side: three 3x3 convolutions plus a 4x4 pool grid need at
/// least this much spatial extent to be meaningful.
pub const MIN_IMAGE_SIDE: usize = 8;

impl<T: Real> CnnStack<T> {
    pub fn new(
        name: &str,
        channels: (usize, usize, usize),
        dropout_p: f64,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let (c1, c2, c3) = channels;
        CnnStack {
            conv1: Conv3x3::new(&format!("{name}.conv1"), 3, c1, rng),
            conv2: Conv3x3::new(&format!("{name}.conv2"), c1, c2, rng),
            conv3: Conv3x3::new(&format!("{name}.conv3"), c2, c3, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), c1),
            bn2: BatchNorm::new(&format!("{name}.bn2"), c2),
            bn3: BatchNorm::new(&format!("{name}.bn3"), c3),
            dropout_p,
            cache: None,
        }
    }

    /// Flattened feature width; constant in the input size by construction.
    pub fn feature_dim(&self) -> usize {
        self.conv3.c_out * POOL_GRID * POOL_GRID
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![
            &self.conv1.w,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.w,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.conv3.w,
            &self.bn3.gamma,
            &self.bn3.beta,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.conv1.w,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.w,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.conv3.w,
            &mut self.bn3.gamma,
            &mut self.bn3.beta,
        ]
    }

    /// Runs one convolution over a batch of images in parallel.
    fn conv_batch(conv: &Conv3x3<T>, x: &[T], n_imgs: usize, h: usize, w: usize) -> Vec<T> {
        let hw = h * w;
        let in_len = conv.c_in * hw;
        let out_len = conv.c_out * hw;
        let k = conv.c_in * TAPS;
        let mut out = vec![T::ZERO; n_imgs * out_len];
        out.par_chunks_mut(out_len)
            .zip(x.par_chunks(in_len))
            .for_each(|(y, img)| {
                let mut col = vec![T::ZERO; k * hw];
                im2col(img, conv.c_in, h, w, &mut col);
                gemm(Op::N, Op::N, conv.c_out, k, hw, T::ONE, &conv.w.value, &col, T::ZERO, y);
            });
        out
    }

    /// Per-channel batch mean and biased variance, reduced in image order.
    fn batch_stats(x: &[T], n_imgs: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
        let partials: Vec<(Vec<f64>, Vec<f64>)> = x
            .par_chunks(c * hw)
            .map(|img| {
                let mut sum = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for ch in 0..c {
                    let (mut s, mut q) = (0.0f64, 0.0f64);
                    for &v in &img[ch * hw..(ch + 1) * hw] {
                        let v = v.to_f64();
                        s += v;
                        q += v * v;
                    }
                    sum[ch] = s;
                    sq[ch] = q;
                }
                (sum, sq)
            })
            .collect();
        let m = (n_imgs * hw) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for (sum, sq) in &partials {
            for ch in 0..c {
                mean[ch] += sum[ch];
                var[ch] += sq[ch];
            }
        }
        for ch in 0..c {
            mean[ch] /= m;
            var[ch] = (var[ch] / m - mean[ch] * mean[ch]).max(0.0);
        }
        (mean, var)
    }

    /// Normalizes with the given statistics and applies the affine + ReLU,
    /// writing activations in place.
    fn bn_relu_apply(
        bn: &BatchNorm<T>,
        x: &mut [T],
        mean: &[f64],
        invstd: &[f64],
        c: usize,
        hw: usize,
    ) {
        let gamma: Vec<f64> = bn.gamma.value.iter().map(|g| g.to_f64()).collect();
        let beta: Vec<f64> = bn.beta.value.iter().map(|b| b.to_f64()).collect();
        x.par_chunks_mut(c * hw).for_each(|img| {
            for ch in 0..c {
                let scale = T::from_f64(gamma[ch] * invstd[ch]);
                let shift = T::from_f64(beta[ch] - gamma[ch] * invstd[ch] * mean[ch]);
                for v in &mut img[ch * hw..(ch + 1) * hw] {
                    let z = *v * scale + shift;
                    *v = if z > T::ZERO { z } else { T::ZERO };
                }
            }
        });
    }

    /// One block in train mode: conv, batch stats, normalize + ReLU.
    /// Returns the activations; `raw` keeps the pre-normalization conv output.
    fn block_train(
        conv: &Conv3x3<T>,
        bn: &mut BatchNorm<T>,
        x: &[T],
        n_imgs: usize,
        h: usize,
        w: usize,
    ) -> (Vec<T>, Vec<T>) {
        let hw = h * w;
        let raw = Self::conv_batch(conv, x, n_imgs, h, w);
        let (mean, var) = Self::batch_stats(&raw, n_imgs, conv.c_out, hw);
        let m = (n_imgs * hw) as f64;
        let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
        for ch in 0..conv.c_out {
            bn.running_mean[ch] = (1.0 - bn.momentum) * bn.running_mean[ch] + bn.momentum * mean[ch];
            let unbiased = if m > 1.0 { var[ch] * m / (m - 1.0) } else { var[ch] };
            bn.running_var[ch] = (1.0 - bn.momentum) * bn.running_var[ch] + bn.momentum * unbiased;
        }
        bn.batch_mean = mean.clone();
        bn.batch_invstd = invstd.clone();
        let mut act = raw.clone();
        Self::bn_relu_apply(bn, &mut act, &mean, &invstd, conv.c_out, hw);
        (raw, act)
    }

    fn block_eval(
        conv: &Conv3x3<T>,
        bn: &BatchNorm<T>,
        x: &[T],
        n_imgs: usize,
        h: usize,
        w: usize,
    ) -> Vec<T> {
        let hw = h * w;
        let mut act = Self::conv_batch(conv, x, n_imgs, h, w);
        let invstd: Vec<f64> = bn
            .running_var
            .iter()
            .map(|v| 1.0 / (v + bn.eps).sqrt())
            .collect();
        Self::bn_relu_apply(bn, &mut act, &bn.running_mean, &invstd, conv.c_out, hw);
        act
    }

    /// Adaptive max pool to `POOL_GRID` x `POOL_GRID`, recording argmax
    /// positions (first maximum wins on ties).
    fn pool(
        act: &[T],
        n_imgs: usize,
        c: usize,
        h: usize,
        w: usize,
    ) -> (Vec<T>, Vec<u32>) {
        let g = POOL_GRID;
        let hw = h * w;
        let feat = c * g * g;
        let mut out = vec![T::ZERO; n_imgs * feat];
        let mut argmax = vec![0u32; n_imgs * feat];
        out.par_chunks_mut(feat)
            .zip(argmax.par_chunks_mut(feat))
            .zip(act.par_chunks(c * hw))
            .for_each(|((o, am), img)| {
                for ch in 0..c {
                    let plane = &img[ch * hw..(ch + 1) * hw];
                    for gy in 0..g {
                        let y0 = gy * h / g;
                        let y1 = (gy + 1) * h / g;
                        for gx in 0..g {
                            let x0 = gx * w / g;
                            let x1 = (gx + 1) * w / g;
                            let mut best = plane[y0 * w + x0];
                            let mut best_idx = (y0 * w + x0) as u32;
                            for y in y0..y1 {
                                for x in x0..x1 {
                                    let v = plane[y * w + x];
                                    if v > best {
                                        best = v;
                                        best_idx = (y * w + x) as u32;
                                    }
                                }
                            }
                            let slot = ch * g * g + gy * g + gx;
                            o[slot] = best;
                            am[slot] = (ch * hw) as u32 + best_idx;
                        }
                    }
                }
            });
        (out, argmax)
    }

    /// Forward over a batch of images laid out `n_imgs x 3 x h x w`.
    /// Returns `n_imgs x feature_dim`. In train mode the pass caches what the
    /// backward needs; `rng` drives dropout and must be `Some` iff training.
    pub fn forward(
        &mut self,
        x: &[T],
        n_imgs: usize,
        h: usize,
        w: usize,
        rng: Option<&mut ChaCha20Rng>,
    ) -> Vec<T> {
        assert!(
            h >= MIN_IMAGE_SIDE && w >= MIN_IMAGE_SIDE,
            "input {h}x{w} below the {MIN_IMAGE_SIDE}px minimum"
        );
        assert_eq!(x.len(), n_imgs * 3 * h * w);
        let feat = self.feature_dim();
        match rng {
            Some(rng) => {
                let (y1, a1) = Self::block_train(&self.conv1, &mut self.bn1, x, n_imgs, h, w);
                let (y2, a2) = Self::block_train(&self.conv2, &mut self.bn2, &a1, n_imgs, h, w);
                let (y3, a3) = Self::block_train(&self.conv3, &mut self.bn3, &a2, n_imgs, h, w);
                let (mut pooled, argmax) = Self::pool(&a3, n_imgs, self.conv3.c_out, h, w);
                let mask = dropout_mask::<T>(n_imgs * feat, self.dropout_p, rng);
                for (v, m) in pooled.iter_mut().zip(&mask) {
                    *v *= *m;
                }
                self.cache = Some(StackCache {
                    n_imgs,
                    h,
                    w,
                    x0: x.to_vec(),
                    y1,
                    y2,
                    y3,
                    pool_argmax: argmax,
                    drop_mask: mask,
                });
                pooled
            }
            None => {
                let a1 = Self::block_eval(&self.conv1, &self.bn1, x, n_imgs, h, w);
                let a2 = Self::block_eval(&self.conv2, &self.bn2, &a1, n_imgs, h, w);
                let a3 = Self::block_eval(&self.conv3, &self.bn3, &a2, n_imgs, h, w);
                let (pooled, _) = Self::pool(&a3, n_imgs, self.conv3.c_out, h, w);
                pooled
            }
        }
    }

    /// Backward for one block given `da` (gradient at the ReLU output).
    /// Accumulates conv and bn parameter gradients; returns the gradient at
    /// the block input (`None` for the first block, whose input is data).
    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        conv: &mut Conv3x3<T>,
        bn: &mut BatchNorm<T>,
        block_in: &[T],
        raw: &[T],
        da: &[T],
        n_imgs: usize,
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        let c = conv.c_out;
        let mean = &bn.batch_mean;
        let invstd = &bn.batch_invstd;
        let gamma: Vec<f64> = bn.gamma.value.iter().map(|g| g.to_f64()).collect();
        let beta: Vec<f64> = bn.beta.value.iter().map(|b| b.to_f64()).collect();

        // Pass A: per-image dz (= da masked by the ReLU) and the per-channel
        // partial sums the batch-norm backward needs.
        let partials: Vec<(Vec<f64>, Vec<f64>)> = raw
            .par_chunks(c * hw)
            .zip(da.par_chunks(c * hw))
            .map(|(raw_img, da_img)| {
                let mut s1 = vec![0.0f64; c];
                let mut s2 = vec![0.0f64; c];
                for ch in 0..c {
                    let (m, inv, g, b) = (mean[ch], invstd[ch], gamma[ch], beta[ch]);
                    let mut p1 = 0.0f64;
                    let mut p2 = 0.0f64;
                    for (&rv, &dv) in raw_img[ch * hw..(ch + 1) * hw]
                        .iter()
                        .zip(&da_img[ch * hw..(ch + 1) * hw])
                    {
                        let xhat = (rv.to_f64() - m) * inv;
                        let z = g * xhat + b;
                        if z > 0.0 {
                            let dz = dv.to_f64();
                            p1 += dz;
                            p2 += dz * xhat;
                        }
                    }
                    s1[ch] = p1;
                    s2[ch] = p2;
                }
                (s1, s2)
            })
            .collect();
        let m_total = (n_imgs * hw) as f64;
        let mut sum_dz = vec![0.0f64; c];
        let mut sum_dz_xhat = vec![0.0f64; c];
        for (s1, s2) in &partials {
            for ch in 0..c {
                sum_dz[ch] += s1[ch];
                sum_dz_xhat[ch] += s2[ch];
            }
        }
        for ch in 0..c {
            bn.beta.grad[ch] += T::from_f64(sum_dz[ch]);
            bn.gamma.grad[ch] += T::from_f64(sum_dz_xhat[ch]);
        }

        // Pass B: per-image dy (gradient at the conv output), then the conv
        // backward. Per-image weight gradients are reduced in image order.
        let k = conv.c_in * TAPS;
        let in_len = conv.c_in * hw;
        struct ImageGrad<T> {
            dw: Vec<T>,
            dx: Option<Vec<T>>,
        }
        let results: Vec<ImageGrad<T>> = (0..n_imgs)
            .into_par_iter()
            .map(|i| {
                let raw_img = &raw[i * c * hw..(i + 1) * c * hw];
                let da_img = &da[i * c * hw..(i + 1) * c * hw];
                let in_img = &block_in[i * in_len..(i + 1) * in_len];
                // dz is masked by the ReLU, but the batch-statistic terms
                // couple every position, so dy is nonzero even where dz = 0.
                let mut dy = vec![T::ZERO; c * hw];
                for ch in 0..c {
                    let (mn, inv, g, b) = (mean[ch], invstd[ch], gamma[ch], beta[ch]);
                    let (s1, s2) = (sum_dz[ch], sum_dz_xhat[ch]);
                    let scale = g * inv / m_total;
                    for (j, (&rv, &dv)) in raw_img[ch * hw..(ch + 1) * hw]
                        .iter()
                        .zip(&da_img[ch * hw..(ch + 1) * hw])
                        .enumerate()
                    {
                        let xhat = (rv.to_f64() - mn) * inv;
                        let z = g * xhat + b;
                        let dz = if z > 0.0 { dv.to_f64() } else { 0.0 };
                        dy[ch * hw + j] = T::from_f64(scale * (m_total * dz - s1 - xhat * s2));
                    }
                }
                let mut col = vec![T::ZERO; k * hw];
                im2col(in_img, conv.c_in, h, w, &mut col);
                let mut dw = vec![T::ZERO; c * k];
                gemm(Op::N, Op::T, c, hw, k, T::ONE, &dy, &col, T::ZERO, &mut dw);
                let dx = if need_dx {
                    let mut dcol = vec![T::ZERO; k * hw];
                    gemm(Op::T, Op::N, k, c, hw, T::ONE, &conv.w.value, &dy, T::ZERO, &mut dcol);
                    let mut dx_img = vec![T::ZERO; in_len];
                    col2im_add(&dcol, conv.c_in, h, w, &mut dx_img);
                    Some(dx_img)
                } else {
                    None
                };
                ImageGrad { dw, dx }
            })
            .collect();

        let mut dx_batch = need_dx.then(|| vec![T::ZERO; n_imgs * in_len]);
        for (i, r) in results.into_iter().enumerate() {
            for (g, d) in conv.w.grad.iter_mut().zip(&r.dw) {
                *g += *d;
            }
            if let (Some(dx_batch), Some(dx)) = (&mut dx_batch, r.dx) {
                dx_batch[i * in_len..(i + 1) * in_len].copy_from_slice(&dx);
            }
        }
        dx_batch
    }

    /// Recomputes a block's activation from its cached raw conv output.
    fn recompute_act(bn: &BatchNorm<T>, raw: &[T], c: usize, hw: usize) -> Vec<T> {
        let mut act = raw.to_vec();
        Self::bn_relu_apply(bn, &mut act, &bn.batch_mean, &bn.batch_invstd, c, hw);
        act
    }

    /// Backward from the flattened feature gradient. Accumulates all
    /// parameter gradients; image inputs are data, so no input gradient.
    pub fn backward(&mut self, dfeat: &[T]) {
        let cache = self.cache.take().expect("backward without train forward");
        let StackCache {
            n_imgs,
            h,
            w,
            x0,
            y1,
            y2,
            y3,
            pool_argmax,
            drop_mask,
        } = cache;
        let hw = h * w;
        let c3 = self.conv3.c_out;
        let feat = self.feature_dim();
        debug_assert_eq!(dfeat.len(), n_imgs * feat);

        // Dropout backward, then unpool into the conv3 activation space.
        let mut da3 = vec![T::ZERO; n_imgs * c3 * hw];
        da3.par_chunks_mut(c3 * hw)
            .zip(dfeat.par_chunks(feat))
            .zip(drop_mask.par_chunks(feat))
            .zip(pool_argmax.par_chunks(feat))
            .for_each(|(((da_img, df), mask), am)| {
                for s in 0..feat {
                    let g = df[s] * mask[s];
                    if g.to_f64() != 0.0 {
                        da_img[am[s] as usize] += g;
                    }
                }
            });

        let a2 = Self::recompute_act(&self.bn2, &y2, self.conv2.c_out, hw);
        let da2 = Self::block_backward(
            &mut self.conv3,
            &mut self.bn3,
            &a2,
            &y3,
            &da3,
            n_imgs,
            h,
            w,
            true,
        )
        .expect("dx requested");
        drop(da3);
        let a1 = Self::recompute_act(&self.bn1, &y1, self.conv1.c_out, hw);
        let da1 = Self::block_backward(
            &mut self.conv2,
            &mut self.bn2,
            &a1,
            &y2,
            &da2,
            n_imgs,
            h,
            w,
            true,
        )
        .expect("dx requested");
        drop(da2);
        Self::block_backward(
            &mut self.conv1,
            &mut self.bn1,
            &x0,
            &y1,
            &da1,
            n_imgs,
            h,
            w,
            false,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn im2col_center_tap_is_identity() {
        let x: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64).collect();
        let mut col = vec![0.0; 2 * 9 * 12];
        im2col(&x, 2, 3, 4, &mut col);
        // Tap (ky=1, kx=1) of each channel reproduces the plane.
        for ch in 0..2 {
            let row = (ch * 9 + 4) * 12;
            assert_eq!(&col[row..row + 12], &x[ch * 12..(ch + 1) * 12]);
        }
        // Top-left tap of channel 0 row 0 is zero padding.
        let row = 0;
        assert_eq!(col[row], 0.0);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for random x, c.
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (c, h, w) = (2usize, 5usize, 4usize);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let colv: Vec<f64> = (0..c * 9 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cx = vec![0.0; c * 9 * h * w];
        im2col(&x, c, h, w, &mut cx);
        let lhs: f64 = cx.iter().zip(&colv).map(|(a, b)| a * b).sum();
        let mut adj = vec![0.0; c * h * w];
        col2im_add(&colv, c, h, w, &mut adj);
        let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn stack_output_shape_and_eval_determinism() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut stack = CnnStack::<f32>::new("t", (4, 6, 8), 0.3, &mut rng);
        let x: Vec<f32> = (0..2 * 3 * 16 * 16)
            .map(|i| ((i * 37) % 101) as f32 / 101.0)
            .collect();
        let a = stack.forward(&x, 2, 16, 16, None);
        assert_eq!(a.len(), 2 * stack.feature_dim());
        assert_eq!(stack.feature_dim(), 8 * 16);
        let b = stack.forward(&x, 2, 16, 16, None);
        assert_eq!(a, b, "eval forward must be bitwise deterministic");
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_images_in_batch_get_identical_features() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut stack = CnnStack::<f32>::new("t", (4, 6, 8), 0.0, &mut rng);
        let img: Vec<f32> = (0..3 * 16 * 16)
            .map(|i| ((i * 13) % 97) as f32 / 97.0)
            .collect();
        let mut batch = img.clone();
        batch.extend_from_slice(&img);
        let feats = stack.forward(&batch, 2, 16, 16, None);
        let d = stack.feature_dim();
        assert_eq!(&feats[..d], &feats[d..]);
    }

    #[test]
    fn all_zero_input_stays_finite_in_eval() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut stack = CnnStack::<f64>::new("t", (4, 6, 8), 0.0, &mut rng);
        let x = vec![0.0f64; 3 * 16 * 16];
        let y = stack.forward(&x, 1, 16, 16, None);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    #[should_panic(expected = "below the")]
    fn rejects_tiny_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut stack = CnnStack::<f32>::new("t", (4, 6, 8), 0.0, &mut rng);
        let x = vec![0.0f32; 3 * 4 * 4];
        let _ = stack.forward(&x, 1, 4, 4, None);
    }

    /// Finite-difference check of the full stack backward in f64:
    /// loss = sum(features^2) / 2 so dfeat = features.
    #[test]
    fn stack_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut stack = CnnStack::<f64>::new("t", (3, 4, 5), 0.0, &mut rng);
        let n_imgs = 3;
        let (h, w) = (8, 8);
        let x: Vec<f64> = (0..n_imgs * 3 * h * w)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut drng = ChaCha20Rng::seed_from_u64(0);
        let feats = stack.forward(&x, n_imgs, h, w, Some(&mut drng));
        stack.backward(&feats.clone());

        let loss = |stack: &mut CnnStack<f64>| -> f64 {
            let mut drng = ChaCha20Rng::seed_from_u64(0);
            let f = stack.forward(&x, n_imgs, h, w, Some(&mut drng));
            f.iter().map(|v| v * v).sum::<f64>() / 2.0
        };

        let h_step = 1e-5;
        let mut probe_rng = ChaCha20Rng::seed_from_u64(11);
        // Every parameter tensor gets at least one probed element.
        for pi in 0..stack.params().len() {
            let len = stack.params()[pi].len();
            let idx = probe_rng.gen_range(0..len);
            let analytic = stack.params()[pi].grad[idx].to_f64();
            stack.params_mut()[pi].value[idx] += h_step;
            let up = loss(&mut stack);
            stack.params_mut()[pi].value[idx] -= 2.0 * h_step;
            let down = loss(&mut stack);
            stack.params_mut()[pi].value[idx] += h_step;
            let numeric = (up - down) / (2.0 * h_step);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            let name = &stack.params()[pi].name;
            assert!(rel < 1e-4, "{name}[{idx}]: analytic {analytic} vs numeric {numeric} (rel {rel})");
        }
    }
}
