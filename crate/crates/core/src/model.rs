//! The foul-prediction network: per-modality encoders (CNN for images, GRU
//! for sequences), concatenation, and an MLP head over two classes. Branch
//! toggles cover every ablation variant.

use crate::features::{FeatureConfig, Sample};
use crate::nn::conv::{CnnStack, MIN_IMAGE_SIDE};
use crate::nn::gru::Gru;
use crate::nn::layers::{apply_mask, dropout_mask, relu_backward_from_output, relu_inplace, Linear};
use crate::nn::{Param, ParamVisitor, Real};
use crate::types::KEYPOINT_COUNT;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Players per sample the network is wired for.
pub const PLAYERS: usize = 5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("{branch} branch shape mismatch: {detail}")]
    ShapeMismatch { branch: &'static str, detail: String },
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint is not in the expected format: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
}

/// Branch toggles and width knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub use_video: bool,
    pub use_bbox: bool,
    pub use_pose: bool,
    pub use_bboximg: bool,
    /// When false only the video branch may be enabled; per-frame CNN
    /// features are averaged over time instead of fed to a GRU.
    pub use_rnn: bool,
    pub hidden: usize,
    pub rnn_layers: usize,
    pub cnn_channels: (usize, usize, usize),
    pub mlp_hidden: Vec<usize>,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            use_video: true,
            use_bbox: true,
            use_pose: true,
            use_bboximg: true,
            use_rnn: true,
            hidden: 256,
            rnn_layers: 2,
            cnn_channels: (16, 32, 64),
            mlp_hidden: vec![512, 128],
            dropout_p: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.use_video || self.use_bbox || self.use_pose || self.use_bboximg) {
            return Err(ModelError::BadConfig("at least one branch must be enabled".into()));
        }
        if !self.use_rnn && (self.use_bbox || self.use_pose || self.use_bboximg || !self.use_video)
        {
            return Err(ModelError::BadConfig(
                "without the recurrent module only the video branch is supported".into(),
            ));
        }
        if self.hidden == 0 || self.rnn_layers == 0 {
            return Err(ModelError::BadConfig("hidden and rnn_layers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::BadConfig("dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// The Table-1 style ablation variants, full model first.
    pub fn ablation_variants() -> Vec<(String, ModelConfig)> {
        let full = ModelConfig::default();
        let mut rows = Vec::new();
        rows.push(("full".to_string(), full.clone()));
        rows.push((
            "video+bbox+pose".to_string(),
            ModelConfig {
                use_bboximg: false,
                ..full.clone()
            },
        ));
        rows.push((
            "video+bbox".to_string(),
            ModelConfig {
                use_bboximg: false,
                use_pose: false,
                ..full.clone()
            },
        ));
        rows.push((
            "video".to_string(),
            ModelConfig {
                use_bboximg: false,
                use_pose: false,
                use_bbox: false,
                ..full.clone()
            },
        ));
        rows.push((
            "video-cnn-only".to_string(),
            ModelConfig {
                use_bboximg: false,
                use_pose: false,
                use_bbox: false,
                use_rnn: false,
                ..full
            },
        ));
        rows
    }
}

/// MLP head: hidden layers with ReLU + dropout, then the 2-class output.
#[derive(Debug, Clone)]
struct Mlp<T> {
    layers: Vec<Linear<T>>,
    dropout_p: f64,
    cache_acts: Vec<Vec<T>>,
    cache_masks: Vec<Vec<T>>,
    cache_rows: usize,
}

impl<T: Real> Mlp<T> {
    fn new(in_dim: usize, hidden: &[usize], dropout_p: f64, rng: &mut ChaCha20Rng) -> Self {
        let mut layers = Vec::new();
        let mut d = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(&format!("mlp.fc{i}"), d, h, rng));
            d = h;
        }
        layers.push(Linear::new(&format!("mlp.out"), d, 2, rng));
        Mlp {
            layers,
            dropout_p,
            cache_acts: Vec::new(),
            cache_masks: Vec::new(),
            cache_rows: 0,
        }
    }

    fn forward(&mut self, x: &[T], rows: usize, rng: Option<&mut ChaCha20Rng>) -> Vec<T> {
        let train = rng.is_some();
        self.cache_acts.clear();
        self.cache_masks.clear();
        self.cache_rows = rows;
        let mut rng = rng;
        let n_hidden = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for i in 0..n_hidden {
            let mut y = self.layers[i].forward(&cur, rows, train);
            relu_inplace(&mut y);
            if train {
                let rng = rng.as_deref_mut().expect("train rng");
                let mask = dropout_mask::<T>(y.len(), self.dropout_p, rng);
                self.cache_acts.push(y.clone());
                apply_mask(&mut y, &mask);
                self.cache_masks.push(mask);
            }
            cur = y;
        }
        self.layers[n_hidden].forward(&cur, rows, train)
    }

    fn backward(&mut self, dlogits: &[T]) -> Vec<T> {
        let n_hidden = self.layers.len() - 1;
        let mut d = self.layers[n_hidden].backward(dlogits);
        for i in (0..n_hidden).rev() {
            apply_mask(&mut d, &self.cache_masks[i]);
            relu_backward_from_output(&mut d, &self.cache_acts[i]);
            d = self.layers[i].backward(&d);
        }
        d
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for l in &self.layers {
            f(&l.w);
            f(&l.b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for l in &mut self.layers {
            f(&mut l.w);
            f(&mut l.b);
        }
    }
}

/// One assembled mini-batch in the layouts the branches consume.
#[derive(Debug, Clone)]
pub struct BatchInput<T> {
    pub batch: usize,
    pub n_frames: usize,
    pub global_size: usize,
    pub crop_size: usize,
    /// `(batch * n_frames) x 3 x S x S`
    pub video: Vec<T>,
    /// `batch x n_frames x 10`
    pub feet: Vec<T>,
    /// `batch x n_frames x 170`
    pub poses: Vec<T>,
    /// `(batch * n_frames * 5) x 3 x C x C`
    pub crops: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> BatchInput<T> {
    /// Copies sample tensors into batch layout, validating shapes.
    pub fn from_samples(samples: &[&Sample], feat: &FeatureConfig) -> Result<Self, ModelError> {
        let batch = samples.len();
        if batch == 0 {
            return Err(ModelError::ShapeMismatch {
                branch: "batch",
                detail: "empty batch".into(),
            });
        }
        let n = feat.n_frames;
        let (s, c) = (feat.global_size, feat.crop_size);
        let mut video = Vec::with_capacity(batch * n * 3 * s * s);
        let mut feet = Vec::with_capacity(batch * n * PLAYERS * 2);
        let mut poses = Vec::with_capacity(batch * n * PLAYERS * KEYPOINT_COUNT * 2);
        let mut crops = Vec::with_capacity(batch * n * PLAYERS * 3 * c * c);
        let mut labels = Vec::with_capacity(batch);
        for sample in samples {
            let m = &sample.meta;
            if m.n_frames != n || m.global_size != s || m.crop_size != c || m.players != PLAYERS {
                return Err(ModelError::ShapeMismatch {
                    branch: "sample",
                    detail: format!(
                        "sample {}@{} built as (n={}, S={}, C={}, players={}), model expects (n={}, S={}, C={}, players={})",
                        m.match_id, m.time_s, m.n_frames, m.global_size, m.crop_size, m.players,
                        n, s, c, PLAYERS
                    ),
                });
            }
            video.extend(sample.video.iter().map(|&v| T::from_f64(v as f64)));
            feet.extend(sample.feet.iter().map(|&v| T::from_f64(v as f64)));
            poses.extend(sample.poses.iter().map(|&v| T::from_f64(v as f64)));
            crops.extend(sample.crops.iter().map(|&v| T::from_f64(v as f64)));
            labels.push(sample.label.class_index());
        }
        Ok(BatchInput {
            batch,
            n_frames: n,
            global_size: s,
            crop_size: c,
            video,
            feet,
            poses,
            crops,
            labels,
        })
    }
}

/// The four-branch fusion network.
#[derive(Debug, Clone)]
pub struct FoulNet<T> {
    pub cfg: ModelConfig,
    pub feat: FeatureConfig,
    pub seed: u64,
    vision_cnn: Option<CnnStack<T>>,
    vision_gru: Option<Gru<T>>,
    bbox_gru: Option<Gru<T>>,
    pose_gru: Option<Gru<T>>,
    crop_cnn: Option<CnnStack<T>>,
    crop_gru: Option<Gru<T>>,
    mlp: Mlp<T>,
    // Shapes cached by the last train forward, for backward.
    fwd_batch: usize,
}

/// Forward mode: training needs an RNG for dropout.
pub enum Mode<'a> {
    Train(&'a mut ChaCha20Rng),
    Eval,
}

impl<T: Real> FoulNet<T> {
    /// Builds the network with deterministic seeded initialization.
    pub fn new(cfg: ModelConfig, feat: FeatureConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        if feat.global_size < MIN_IMAGE_SIDE || feat.crop_size < MIN_IMAGE_SIDE {
            return Err(ModelError::BadConfig(format!(
                "image sizes must be at least {MIN_IMAGE_SIDE}px"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut vision_cnn = None;
        let mut vision_gru = None;
        let mut bbox_gru = None;
        let mut pose_gru = None;
        let mut crop_cnn = None;
        let mut crop_gru = None;
        let mut concat = 0usize;
        if cfg.use_video {
            let stack = CnnStack::new("vision.cnn", cfg.cnn_channels, cfg.dropout_p, rng);
            let fdim = stack.feature_dim();
            if cfg.use_rnn {
                vision_gru = Some(Gru::new("vision.gru", fdim, cfg.hidden, cfg.rnn_layers, rng));
                concat += cfg.hidden;
            } else {
                concat += fdim;
            }
            vision_cnn = Some(stack);
        }
        if cfg.use_bbox {
            bbox_gru = Some(Gru::new("bbox.gru", PLAYERS * 2, cfg.hidden, cfg.rnn_layers, rng));
            concat += cfg.hidden;
        }
        if cfg.use_pose {
            pose_gru = Some(Gru::new(
                "pose.gru",
                PLAYERS * KEYPOINT_COUNT * 2,
                cfg.hidden,
                cfg.rnn_layers,
                rng,
            ));
            concat += cfg.hidden;
        }
        if cfg.use_bboximg {
            let stack = CnnStack::new("crop.cnn", cfg.cnn_channels, cfg.dropout_p, rng);
            let fdim = stack.feature_dim();
            crop_gru = Some(Gru::new(
                "crop.gru",
                PLAYERS * fdim,
                cfg.hidden,
                cfg.rnn_layers,
                rng,
            ));
            crop_cnn = Some(stack);
            concat += cfg.hidden;
        }
        let mlp = Mlp::new(concat, &cfg.mlp_hidden, cfg.dropout_p, rng);
        Ok(FoulNet {
            cfg,
            feat,
            seed,
            vision_cnn,
            vision_gru,
            bbox_gru,
            pose_gru,
            crop_cnn,
            crop_gru,
            mlp,
            fwd_batch: 0,
        })
    }

    /// Forward pass to 2-class logits, `batch x 2`.
    pub fn forward(&mut self, input: &BatchInput<T>, mode: Mode) -> Result<Vec<T>, ModelError> {
        let b = input.batch;
        let t = input.n_frames;
        let s = input.global_size;
        let c = input.crop_size;
        if t != self.feat.n_frames || s != self.feat.global_size || c != self.feat.crop_size {
            return Err(ModelError::ShapeMismatch {
                branch: "input",
                detail: format!(
                    "batch built as (n={t}, S={s}, C={c}), model expects (n={}, S={}, C={})",
                    self.feat.n_frames, self.feat.global_size, self.feat.crop_size
                ),
            });
        }
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let train = rng.is_some();
        self.fwd_batch = b;
        let mut concat: Vec<Vec<T>> = Vec::new();

        if let Some(cnn) = &mut self.vision_cnn {
            let expect = b * t * 3 * s * s;
            if input.video.len() != expect {
                return Err(ModelError::ShapeMismatch {
                    branch: "video",
                    detail: format!("tensor has {} values, expected {expect}", input.video.len()),
                });
            }
            let feats = cnn.forward(&input.video, b * t, s, s, rng.as_deref_mut());
            let fdim = cnn.feature_dim();
            match &mut self.vision_gru {
                Some(gru) => concat.push(gru.forward(&feats, b, t, train)),
                None => {
                    // CNN-only baseline: average features over frames.
                    let inv = T::from_f64(1.0 / t as f64);
                    let mut avg = vec![T::ZERO; b * fdim];
                    for bi in 0..b {
                        for ti in 0..t {
                            let row = &feats[(bi * t + ti) * fdim..(bi * t + ti + 1) * fdim];
                            for (a, &v) in avg[bi * fdim..(bi + 1) * fdim].iter_mut().zip(row) {
                                *a += v * inv;
                            }
                        }
                    }
                    concat.push(avg);
                }
            }
        }
        if let Some(gru) = &mut self.bbox_gru {
            let expect = b * t * PLAYERS * 2;
            if input.feet.len() != expect {
                return Err(ModelError::ShapeMismatch {
                    branch: "bbox",
                    detail: format!("tensor has {} values, expected {expect}", input.feet.len()),
                });
            }
            concat.push(gru.forward(&input.feet, b, t, train));
        }
        if let Some(gru) = &mut self.pose_gru {
            let expect = b * t * PLAYERS * KEYPOINT_COUNT * 2;
            if input.poses.len() != expect {
                return Err(ModelError::ShapeMismatch {
                    branch: "pose",
                    detail: format!("tensor has {} values, expected {expect}", input.poses.len()),
                });
            }
            concat.push(gru.forward(&input.poses, b, t, train));
        }
        if let (Some(cnn), Some(gru)) = (&mut self.crop_cnn, &mut self.crop_gru) {
            let expect = b * t * PLAYERS * 3 * c * c;
            if input.crops.len() != expect {
                return Err(ModelError::ShapeMismatch {
                    branch: "bboximg",
                    detail: format!("tensor has {} values, expected {expect}", input.crops.len()),
                });
            }
            let feats = cnn.forward(&input.crops, b * t * PLAYERS, c, c, rng.as_deref_mut());
            // Rows are ordered (b, t, p), so the 5 per-frame crop features
            // are already contiguous: (b, t, 5 * fdim).
            concat.push(gru.forward(&feats, b, t, train));
        }

        let widths: Vec<usize> = concat.iter().map(|v| v.len() / b).collect();
        let total: usize = widths.iter().sum();
        let mut fused = vec![T::ZERO; b * total];
        let mut off = 0;
        for (part, &w) in concat.iter().zip(&widths) {
            for bi in 0..b {
                fused[bi * total + off..bi * total + off + w]
                    .copy_from_slice(&part[bi * w..(bi + 1) * w]);
            }
            off += w;
        }
        Ok(self.mlp.forward(&fused, b, rng))
    }

    /// Backward from `dL/dlogits`; accumulates gradients in every enabled
    /// branch. Must follow a train-mode forward on the same batch.
    pub fn backward(&mut self, dlogits: &[T]) {
        let b = self.fwd_batch;
        let t = self.feat.n_frames;
        let dfused = self.mlp.backward(dlogits);
        let total = dfused.len() / b;
        // Split in the same branch order as forward.
        let mut widths: Vec<(&str, usize)> = Vec::new();
        if self.vision_cnn.is_some() {
            let w = match &self.vision_gru {
                Some(_) => self.cfg.hidden,
                None => self.vision_cnn.as_ref().unwrap().feature_dim(),
            };
            widths.push(("video", w));
        }
        if self.bbox_gru.is_some() {
            widths.push(("bbox", self.cfg.hidden));
        }
        if self.pose_gru.is_some() {
            widths.push(("pose", self.cfg.hidden));
        }
        if self.crop_gru.is_some() {
            widths.push(("bboximg", self.cfg.hidden));
        }
        let mut off = 0;
        for (name, w) in widths {
            let mut dpart = vec![T::ZERO; b * w];
            for bi in 0..b {
                dpart[bi * w..(bi + 1) * w]
                    .copy_from_slice(&dfused[bi * total + off..bi * total + off + w]);
            }
            off += w;
            match name {
                "video" => {
                    let cnn = self.vision_cnn.as_mut().unwrap();
                    match &mut self.vision_gru {
                        Some(gru) => {
                            let dfeats = gru.backward(&dpart);
                            cnn.backward(&dfeats);
                        }
                        None => {
                            let fdim = cnn.feature_dim();
                            let inv = T::from_f64(1.0 / t as f64);
                            let mut dfeats = vec![T::ZERO; b * t * fdim];
                            for bi in 0..b {
                                for ti in 0..t {
                                    let dst = (bi * t + ti) * fdim;
                                    for (d, &g) in dfeats[dst..dst + fdim]
                                        .iter_mut()
                                        .zip(&dpart[bi * fdim..(bi + 1) * fdim])
                                    {
                                        *d = g * inv;
                                    }
                                }
                            }
                            cnn.backward(&dfeats);
                        }
                    }
                }
                "bbox" => {
                    self.bbox_gru.as_mut().unwrap().backward(&dpart);
                }
                "pose" => {
                    self.pose_gru.as_mut().unwrap().backward(&dpart);
                }
                "bboximg" => {
                    let dfeats = self.crop_gru.as_mut().unwrap().backward(&dpart);
                    self.crop_cnn.as_mut().unwrap().backward(&dfeats);
                }
                _ => unreachable!(),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// Names of parameters belonging to each enabled branch (for gradient
    /// checks and the gradient-flow invariant).
    pub fn branch_param_names(&self) -> Vec<(&'static str, Vec<String>)> {
        let mut out: Vec<(&'static str, Vec<String>)> = Vec::new();
        let push = |branch: &'static str, prefix: &str, out: &mut Vec<(&'static str, Vec<String>)>| {
            let mut names = Vec::new();
            self.visit_params(&mut |p| {
                if p.name.starts_with(prefix) {
                    names.push(p.name.clone());
                }
            });
            if let Some(row) = out.iter_mut().find(|(b, _)| *b == branch) {
                row.1.extend(names);
            } else {
                out.push((branch, names));
            }
        };
        if self.vision_cnn.is_some() {
            push("video", "vision.", &mut out);
        }
        if self.bbox_gru.is_some() {
            push("bbox", "bbox.", &mut out);
        }
        if self.pose_gru.is_some() {
            push("pose", "pose.", &mut out);
        }
        if self.crop_cnn.is_some() {
            push("bboximg", "crop.", &mut out);
        }
        push("mlp", "mlp.", &mut out);
        out
    }

    fn norm_stats(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        let mut add = |name: &str, stack: &CnnStack<T>| {
            for (i, bn) in [&stack.bn1, &stack.bn2, &stack.bn3].iter().enumerate() {
                out.push((format!("{name}.bn{}.running_mean", i + 1), bn.running_mean.clone()));
                out.push((format!("{name}.bn{}.running_var", i + 1), bn.running_var.clone()));
            }
        };
        if let Some(s) = &self.vision_cnn {
            add("vision.cnn", s);
        }
        if let Some(s) = &self.crop_cnn {
            add("crop.cnn", s);
        }
        out
    }

    fn set_norm_stats(&mut self, stats: &[(String, Vec<f64>)]) -> Result<(), ModelError> {
        let apply = |name: &str, stack: &mut CnnStack<T>| -> Result<(), ModelError> {
            for (i, bn) in [&mut stack.bn1, &mut stack.bn2, &mut stack.bn3]
                .iter_mut()
                .enumerate()
            {
                for (suffix, target) in [
                    ("running_mean", &mut bn.running_mean),
                    ("running_var", &mut bn.running_var),
                ] {
                    let key = format!("{name}.bn{}.{suffix}", i + 1);
                    let found = stats
                        .iter()
                        .find(|(n, _)| *n == key)
                        .ok_or_else(|| ModelError::BadCheckpoint(format!("missing {key}")))?;
                    if found.1.len() != target.len() {
                        return Err(ModelError::BadCheckpoint(format!("{key} has wrong length")));
                    }
                    target.clone_from_slice(&found.1);
                }
            }
            Ok(())
        };
        if let Some(mut s) = self.vision_cnn.take() {
            apply("vision.cnn", &mut s)?;
            self.vision_cnn = Some(s);
        }
        if let Some(mut s) = self.crop_cnn.take() {
            apply("crop.cnn", &mut s)?;
            self.crop_cnn = Some(s);
        }
        Ok(())
    }
}

impl<T: Real> ParamVisitor<T> for FoulNet<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(c) = &self.vision_cnn {
            for p in c.params() {
                f(p);
            }
        }
        if let Some(g) = &self.vision_gru {
            for p in g.params() {
                f(p);
            }
        }
        if let Some(g) = &self.bbox_gru {
            for p in g.params() {
                f(p);
            }
        }
        if let Some(g) = &self.pose_gru {
            for p in g.params() {
                f(p);
            }
        }
        if let Some(c) = &self.crop_cnn {
            for p in c.params() {
                f(p);
            }
        }
        if let Some(g) = &self.crop_gru {
            for p in g.params() {
                f(p);
            }
        }
        self.mlp.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(c) = &mut self.vision_cnn {
            for p in c.params_mut() {
                f(p);
            }
        }
        if let Some(g) = &mut self.vision_gru {
            for p in g.params_mut() {
                f(p);
            }
        }
        if let Some(g) = &mut self.bbox_gru {
            for p in g.params_mut() {
                f(p);
            }
        }
        if let Some(g) = &mut self.pose_gru {
            for p in g.params_mut() {
                f(p);
            }
        }
        if let Some(c) = &mut self.crop_cnn {
            for p in c.params_mut() {
                f(p);
            }
        }
        if let Some(g) = &mut self.crop_gru {
            for p in g.params_mut() {
                f(p);
            }
        }
        self.mlp.visit_mut(f);
    }
}

/// Softmax probability of the positive (foul) class per batch row.
pub fn foul_probabilities<T: Real>(logits: &[T]) -> Vec<f64> {
    logits
        .chunks(2)
        .map(|row| {
            let m = if row[0] > row[1] { row[0] } else { row[1] };
            let e0 = (row[0] - m).to_f64().exp();
            let e1 = (row[1] - m).to_f64().exp();
            e1 / (e0 + e1)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    model: ModelConfig,
    features: FeatureConfig,
    seed: u64,
    tensors: Vec<(String, usize)>,
    stats: Vec<(String, usize)>,
}

const CHECKPOINT_FORMAT: &str = "futurefoul-checkpoint-v1";

/// Writes a self-describing checkpoint: JSON header (configs, seed, tensor
/// directory) followed by raw little-endian f32/f64 data.
pub fn save_checkpoint(net: &FoulNet<f32>, path: &Path) -> Result<(), ModelError> {
    let mut tensors = Vec::new();
    net.visit_params(&mut |p| tensors.push((p.name.clone(), p.len())));
    let stats = net.norm_stats();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        model: net.cfg.clone(),
        features: net.feat,
        seed: net.seed,
        tensors,
        stats: stats.iter().map(|(n, v)| (n.clone(), v.len())).collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(&(header_json.len() as u64).to_le_bytes())?;
        f.write_all(&header_json)?;
        let mut write_err = None;
        net.visit_params(&mut |p| {
            if write_err.is_some() {
                return;
            }
            for v in &p.value {
                if let Err(e) = f.write_all(&v.to_le_bytes()) {
                    write_err = Some(e);
                    return;
                }
            }
        });
        if let Some(e) = write_err {
            return Err(e.into());
        }
        for (_, values) in &stats {
            for v in values {
                f.write_all(&v.to_le_bytes())?;
            }
        }
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint saved by [`save_checkpoint`], rebuilding the network
/// from the stored configs and seed.
pub fn load_checkpoint(path: &Path) -> Result<FoulNet<f32>, ModelError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)
        .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(ModelError::BadCheckpoint(format!(
            "unknown format tag {:?}",
            header.format
        )));
    }
    let mut net = FoulNet::<f32>::new(header.model.clone(), header.features, header.seed)?;
    // The directory must match the freshly built network exactly.
    let mut expected = Vec::new();
    net.visit_params(&mut |p| expected.push((p.name.clone(), p.len())));
    if expected != header.tensors {
        return Err(ModelError::ConfigMismatch(
            "tensor directory does not match the stored config".into(),
        ));
    }
    let mut read_err: Option<std::io::Error> = None;
    net.visit_params_mut(&mut |p| {
        if read_err.is_some() {
            return;
        }
        for v in p.value.iter_mut() {
            let mut b = [0u8; 4];
            if let Err(e) = f.read_exact(&mut b) {
                read_err = Some(e);
                return;
            }
            *v = f32::from_le_bytes(b);
        }
    });
    if let Some(e) = read_err {
        return Err(e.into());
    }
    let mut stats = Vec::new();
    for (name, len) in &header.stats {
        let mut values = vec![0f64; *len];
        for v in values.iter_mut() {
            let mut b = [0u8; 8];
            f.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        stats.push((name.clone(), values));
    }
    net.set_norm_stats(&stats)?;
    Ok(net)
}

/// Validates that a checkpointed model can consume samples built with the
/// given feature shapes.
pub fn check_feature_compat(net: &FoulNet<f32>, meta_n: usize, meta_s: usize, meta_c: usize) -> Result<(), ModelError> {
    if net.feat.n_frames != meta_n || net.feat.global_size != meta_s || net.feat.crop_size != meta_c {
        return Err(ModelError::ConfigMismatch(format!(
            "checkpoint expects (n={}, S={}, C={}), samples are (n={meta_n}, S={meta_s}, C={meta_c})",
            net.feat.n_frames, net.feat.global_size, net.feat.crop_size
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::adam::Adam;
    use crate::nn::gradcheck;
    use rand::Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            hidden: 32,
            rnn_layers: 2,
            cnn_channels: (4, 6, 8),
            mlp_hidden: vec![32, 16],
            dropout_p: 0.2,
            ..ModelConfig::default()
        }
    }

    fn small_feat() -> FeatureConfig {
        FeatureConfig {
            n_frames: 3,
            global_size: 16,
            crop_size: 8,
        }
    }

    fn random_batch<T: Real>(b: usize, feat: &FeatureConfig, seed: u64) -> BatchInput<T> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let t = feat.n_frames;
        let (s, c) = (feat.global_size, feat.crop_size);
        let mut fill = |len: usize, lo: f64, hi: f64| -> Vec<T> {
            (0..len).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect()
        };
        BatchInput {
            batch: b,
            n_frames: t,
            global_size: s,
            crop_size: c,
            video: fill(b * t * 3 * s * s, 0.0, 1.0),
            feet: fill(b * t * PLAYERS * 2, 0.0, 1.0),
            poses: fill(b * t * PLAYERS * KEYPOINT_COUNT * 2, 0.0, 1.0),
            crops: fill(b * t * PLAYERS * 3 * c * c, 0.0, 1.0),
            labels: (0..b).map(|i| i % 2).collect(),
        }
    }

    #[test]
    fn full_config_logit_shape() {
        let mut net = FoulNet::<f32>::new(small_cfg(), small_feat(), 1).unwrap();
        let batch = random_batch::<f32>(2, &small_feat(), 2);
        let logits = net.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(logits.len(), 2 * 2);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let mut net = FoulNet::<f32>::new(small_cfg(), small_feat(), 3).unwrap();
        let batch = random_batch::<f32>(3, &small_feat(), 4);
        let a = net.forward(&batch, Mode::Eval).unwrap();
        let b = net.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cnn_only_baseline_ignores_other_tensors() {
        let cfg = ModelConfig {
            use_bbox: false,
            use_pose: false,
            use_bboximg: false,
            use_rnn: false,
            ..small_cfg()
        };
        let mut net = FoulNet::<f32>::new(cfg, small_feat(), 5).unwrap();
        let mut batch = random_batch::<f32>(2, &small_feat(), 6);
        let a = net.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(a.len(), 4);
        // Perturb every non-video tensor; logits must be bitwise unchanged.
        for v in batch.feet.iter_mut() {
            *v += 10.0;
        }
        for v in batch.poses.iter_mut() {
            *v -= 3.0;
        }
        for v in batch.crops.iter_mut() {
            *v += 1.0;
        }
        let b = net.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disabled_branch_perturbation_is_invisible() {
        let cfg = ModelConfig {
            use_bboximg: false,
            ..small_cfg()
        };
        let mut net = FoulNet::<f32>::new(cfg, small_feat(), 7).unwrap();
        let mut batch = random_batch::<f32>(2, &small_feat(), 8);
        let a = net.forward(&batch, Mode::Eval).unwrap();
        for v in batch.crops.iter_mut() {
            *v = 1.0 - *v;
        }
        let b = net.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation_rejects_bad_combinations() {
        let no_branches = ModelConfig {
            use_video: false,
            use_bbox: false,
            use_pose: false,
            use_bboximg: false,
            ..ModelConfig::default()
        };
        assert!(no_branches.validate().is_err());
        let cnn_with_pose = ModelConfig {
            use_rnn: false,
            use_bbox: false,
            use_bboximg: false,
            ..ModelConfig::default()
        };
        assert!(cnn_with_pose.validate().is_err());
    }

    #[test]
    fn ablation_variants_match_the_baseline_list() {
        let rows = ModelConfig::ablation_variants();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].0, "full");
        assert!(rows[0].1.use_bboximg && rows[0].1.use_rnn);
        assert_eq!(rows[4].0, "video-cnn-only");
        assert!(!rows[4].1.use_rnn && rows[4].1.use_video && !rows[4].1.use_pose);
        for (_, cfg) in &rows {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn one_training_step_moves_every_enabled_branch() {
        let mut net = FoulNet::<f32>::new(small_cfg(), small_feat(), 9).unwrap();
        let batch = random_batch::<f32>(4, &small_feat(), 10);
        let before: Vec<(String, Vec<f32>)> = {
            let mut v = Vec::new();
            net.visit_params(&mut |p| v.push((p.name.clone(), p.value.clone())));
            v
        };
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        net.zero_grads();
        let logits = net.forward(&batch, Mode::Train(&mut rng)).unwrap();
        let (_, dlogits, _) = crate::nn::layers::softmax_xent(&logits, &batch.labels, 2);
        net.backward(&dlogits);
        let mut opt = Adam::new(1e-3);
        opt.step(&mut net);
        let mut after = std::collections::HashMap::new();
        net.visit_params(&mut |p| {
            after.insert(p.name.clone(), p.value.clone());
        });
        for (branch, names) in net.branch_param_names() {
            let mut l2 = 0.0f64;
            for name in &names {
                let old = &before.iter().find(|(n, _)| n == name).unwrap().1;
                let new = &after[name];
                l2 += old
                    .iter()
                    .zip(new.iter())
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>();
            }
            assert!(l2 > 0.0, "branch {branch} did not move");
        }
    }

    #[test]
    fn gradients_match_finite_differences_per_branch() {
        // Dropout off so the loss is a deterministic function of the params.
        let cfg = ModelConfig {
            dropout_p: 0.0,
            ..small_cfg()
        };
        let feat = small_feat();
        let mut net = FoulNet::<f64>::new(cfg, feat, 12).unwrap();
        let batch = random_batch::<f64>(2, &feat, 13);
        let loss = |net: &mut FoulNet<f64>| -> f64 {
            let mut rng = ChaCha20Rng::seed_from_u64(0);
            let logits = net.forward(&batch, Mode::Train(&mut rng)).unwrap();
            let (l, _, _) = crate::nn::layers::softmax_xent(&logits, &batch.labels, 2);
            l
        };
        net.zero_grads();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let logits = net.forward(&batch, Mode::Train(&mut rng)).unwrap();
        let (_, dlogits, _) = crate::nn::layers::softmax_xent(&logits, &batch.labels, 2);
        net.backward(&dlogits);

        let mut probe = ChaCha20Rng::seed_from_u64(14);
        let mut targets = Vec::new();
        for (_, names) in net.branch_param_names() {
            // Two spot checks per branch at unit-test scale.
            for _ in 0..2 {
                let name = names[probe.gen_range(0..names.len())].clone();
                let mut len = 0;
                net.visit_params(&mut |p| {
                    if p.name == name {
                        len = p.len();
                    }
                });
                targets.push((name, probe.gen_range(0..len)));
            }
        }
        let results = gradcheck::check_many(&mut net, &targets, 1e-4, loss);
        for r in &results {
            assert!(
                r.rel_err < 1e-2,
                "{}[{}]: analytic {} vs numeric {} (rel {})",
                r.param,
                r.index,
                r.analytic,
                r.numeric,
                r.rel_err
            );
        }
    }

    #[test]
    fn param_count_is_pinned_for_default_config() {
        let net = FoulNet::<f32>::new(ModelConfig::default(), FeatureConfig::default(), 0).unwrap();
        assert_eq!(net.param_count(), 7_866_530);
        // Purity: a second instance with another seed reports the same count.
        let net2 = FoulNet::<f32>::new(ModelConfig::default(), FeatureConfig::default(), 99).unwrap();
        assert_eq!(net2.param_count(), net.param_count());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_logits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut net = FoulNet::<f32>::new(small_cfg(), small_feat(), 15).unwrap();
        // Touch the running stats so they are not at init values.
        let batch = random_batch::<f32>(2, &small_feat(), 16);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let _ = net.forward(&batch, Mode::Train(&mut rng)).unwrap();
        let logits = net.forward(&batch, Mode::Eval).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let mut loaded = load_checkpoint(&path).unwrap();
        let logits2 = loaded.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(logits, logits2);
        assert_eq!(loaded.cfg, net.cfg);
        assert_eq!(loaded.seed, 15);
    }

    #[test]
    fn feature_mismatch_is_an_error() {
        let net = FoulNet::<f32>::new(small_cfg(), small_feat(), 18).unwrap();
        assert!(check_feature_compat(&net, 3, 16, 8).is_ok());
        let err = check_feature_compat(&net, 8, 16, 8).unwrap_err();
        assert!(err.to_string().contains("checkpoint expects"), "{err}");
    }

    #[test]
    fn foul_probabilities_are_softmax_of_logits() {
        let p = foul_probabilities(&[0.0f32, 0.0, -2.0, 2.0]);
        assert!((p[0] - 0.5).abs() < 1e-6);
        assert!(p[1] > 0.98);
    }
}
