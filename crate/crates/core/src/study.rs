//! Batch experiment harness: ablation / frame-count / image-size studies
//! over a shared split and seed, plus qualitative success/failure dumps with
//! bbox and skeleton overlays.

use crate::dataset::TrackSet;
use crate::features::{build_sample, FeatureConfig, FeatureError, Sample};
use crate::img::RgbBuf;
use crate::model::{check_feature_compat, load_checkpoint, save_checkpoint, FoulNet, ModelConfig, ModelError};
use crate::store::{write_json, Fnv1a, StoreError};
use crate::synth::RenderedFrames;
use crate::train::{evaluate, predict, split_dataset, train, Metrics, TrainConfig, TrainError};
use crate::types::{Label, MatchAnnotation, KEYPOINT_COUNT, SKELETON_EDGES};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("study needs at least one variant")]
    NoVariants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyAxis {
    Ablation,
    Frames,
    Size,
}

impl StudyAxis {
    pub fn name(&self) -> &'static str {
        match self {
            StudyAxis::Ablation => "ablation",
            StudyAxis::Frames => "frames",
            StudyAxis::Size => "size",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyVariant {
    pub name: String,
    pub model: ModelConfig,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub axis: StudyAxis,
    pub variants: Vec<StudyVariant>,
    pub train: TrainConfig,
    /// Shared parameter-init seed so variants differ only in architecture.
    pub model_seed: u64,
}

pub const FRAME_COUNT_AXIS: [usize; 6] = [4, 8, 15, 25, 35, 45];
pub const GLOBAL_SIZE_AXIS: [usize; 3] = [64, 128, 256];

impl StudySpec {
    /// Default variant lists for each axis: the five ablation rows, the six
    /// frame counts, or the three global image sizes.
    pub fn for_axis(
        axis: StudyAxis,
        base_model: &ModelConfig,
        base_features: &FeatureConfig,
        train: TrainConfig,
        model_seed: u64,
    ) -> StudySpec {
        let variants = match axis {
            StudyAxis::Ablation => ModelConfig::ablation_variants()
                .into_iter()
                .map(|(name, mut model)| {
                    model.hidden = base_model.hidden;
                    model.rnn_layers = base_model.rnn_layers;
                    model.cnn_channels = base_model.cnn_channels;
                    model.mlp_hidden = base_model.mlp_hidden.clone();
                    model.dropout_p = base_model.dropout_p;
                    StudyVariant {
                        name,
                        model,
                        features: *base_features,
                    }
                })
                .collect(),
            StudyAxis::Frames => FRAME_COUNT_AXIS
                .iter()
                .map(|&n| StudyVariant {
                    name: format!("{n}-frames"),
                    model: base_model.clone(),
                    features: FeatureConfig {
                        n_frames: n,
                        ..*base_features
                    },
                })
                .collect(),
            StudyAxis::Size => GLOBAL_SIZE_AXIS
                .iter()
                .map(|&s| StudyVariant {
                    name: format!("{s}x{s}"),
                    model: base_model.clone(),
                    features: FeatureConfig {
                        global_size: s,
                        ..*base_features
                    },
                })
                .collect(),
        };
        StudySpec {
            axis,
            variants,
            train,
            model_seed,
        }
    }
}

/// Provides samples rebuilt for any feature shape over a fixed event list.
pub trait SampleSource {
    fn labels(&self) -> Vec<Label>;
    /// Stable `(match_id, time_s)` identities, index-aligned with `labels`.
    fn identities(&self) -> Vec<(String, u32)>;
    fn samples(&self, features: &FeatureConfig) -> Result<Vec<Sample>, StudyError>;
}

/// In-memory source: track sets plus their annotations, frames rendered on
/// demand straight from the annotations.
pub struct TracksetSource {
    pub tracksets: Vec<TrackSet>,
    pub matches: HashMap<String, MatchAnnotation>,
}

impl SampleSource for TracksetSource {
    fn labels(&self) -> Vec<Label> {
        self.tracksets.iter().map(|t| t.label).collect()
    }

    fn identities(&self) -> Vec<(String, u32)> {
        self.tracksets
            .iter()
            .map(|t| (t.match_id.clone(), t.time_s))
            .collect()
    }

    fn samples(&self, features: &FeatureConfig) -> Result<Vec<Sample>, StudyError> {
        self.tracksets
            .iter()
            .map(|ts| {
                let m = self
                    .matches
                    .get(&ts.match_id)
                    .unwrap_or_else(|| panic!("annotation for {} present", ts.match_id));
                Ok(build_sample(ts, &RenderedFrames(m), features)?)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub variant: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub best_epoch: usize,
    pub checkpoint: Option<String>,
    /// Set when this variant's training aborted; metrics are zero then.
    pub failed: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub axis: String,
    pub rows: Vec<StudyRow>,
    pub split_hash: String,
    pub train_seed: u64,
    pub model_seed: u64,
    pub sizes: (usize, usize, usize),
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,acc,prec,rec,best_epoch,status\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.1},{:.1},{:.1},{},{}\n",
                r.variant,
                r.accuracy,
                r.precision,
                r.recall,
                r.best_epoch,
                r.failed.as_deref().unwrap_or("ok")
            ));
        }
        out
    }

    /// Text table mirroring the paper's layout: one row per variant with
    /// accuracy, precision, and recall in percent.
    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.variant.len())
            .chain(["Model".len()].into_iter())
            .max()
            .unwrap_or(5);
        let mut out = format!(
            "{:<name_w$}  Acc (%)  Prec (%)  Rec (%)\n",
            "Model",
            name_w = name_w
        );
        for r in &self.rows {
            if let Some(reason) = &r.failed {
                out.push_str(&format!("{:<name_w$}  failed: {reason}\n", r.variant, name_w = name_w));
            } else {
                out.push_str(&format!(
                    "{:<name_w$}  {:>7.1}  {:>8.1}  {:>7.1}\n",
                    r.variant,
                    r.accuracy,
                    r.precision,
                    r.recall,
                    name_w = name_w
                ));
            }
        }
        out.push_str(&format!(
            "(split {} | {} train / {} val / {} test | train seed {} | model seed {})\n",
            self.split_hash, self.sizes.0, self.sizes.1, self.sizes.2, self.train_seed, self.model_seed
        ));
        out
    }
}

/// Hash of the split membership: identities in train/val/test order.
pub fn split_membership_hash(
    identities: &[(String, u32)],
    train: &[usize],
    val: &[usize],
    test: &[usize],
) -> String {
    let mut h = Fnv1a::default();
    for (tag, idx) in [("train", train), ("val", val), ("test", test)] {
        h.update(tag.as_bytes());
        for &i in idx {
            let (m, t) = &identities[i];
            h.update(m.as_bytes());
            h.update(&t.to_le_bytes());
        }
    }
    format!("{:016x}", h.finish())
}

/// Trains every variant on one shared split and seed, evaluates each on the
/// test portion, and writes per-variant checkpoints when `checkpoint_dir`
/// is given. A variant whose training aborts is recorded and skipped.
pub fn run_study(
    spec: &StudySpec,
    source: &dyn SampleSource,
    sizes: (usize, usize, usize),
    checkpoint_dir: Option<&Path>,
) -> Result<StudyReport, StudyError> {
    if spec.variants.is_empty() {
        return Err(StudyError::NoVariants);
    }
    let labels = source.labels();
    let split = split_dataset(&labels, sizes, spec.train.seed)?;
    let identities = source.identities();
    let split_hash = split_membership_hash(&identities, &split.train, &split.val, &split.test);

    let mut rows = Vec::new();
    for variant in &spec.variants {
        let samples = source.samples(&variant.features)?;
        let pick = |idx: &[usize]| -> Vec<&Sample> { idx.iter().map(|&i| &samples[i]).collect() };
        let train_set = pick(&split.train);
        let val_set = pick(&split.val);
        let test_set = pick(&split.test);
        let net = FoulNet::<f32>::new(variant.model.clone(), variant.features, spec.model_seed)?;
        match train(net, &train_set, &val_set, &spec.train) {
            Ok(outcome) => {
                let mut best = outcome.best;
                let metrics = evaluate(&mut best, &test_set, spec.train.batch_size)?;
                let checkpoint = match checkpoint_dir {
                    Some(dir) => {
                        std::fs::create_dir_all(dir).ok();
                        let path = dir.join(format!("{}.ckpt", variant.name));
                        save_checkpoint(&best, &path)?;
                        Some(path.display().to_string())
                    }
                    None => None,
                };
                rows.push(StudyRow {
                    variant: variant.name.clone(),
                    accuracy: metrics.accuracy,
                    precision: metrics.precision,
                    recall: metrics.recall,
                    best_epoch: outcome.best_epoch,
                    checkpoint,
                    failed: None,
                });
            }
            Err(e @ TrainError::Diverged { .. }) => {
                rows.push(StudyRow {
                    variant: variant.name.clone(),
                    accuracy: 0.0,
                    precision: 0.0,
                    recall: 0.0,
                    best_epoch: 0,
                    checkpoint: None,
                    failed: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(StudyReport {
        axis: spec.axis.name().to_string(),
        rows,
        split_hash,
        train_seed: spec.train.seed,
        model_seed: spec.model_seed,
        sizes,
    })
}

/// Re-evaluates a retained checkpoint against a test set; used to audit that
/// report rows match their checkpoints.
pub fn reevaluate_checkpoint(
    path: &Path,
    test_set: &[&Sample],
    batch_size: usize,
) -> Result<Metrics, StudyError> {
    let mut net = load_checkpoint(path)?;
    if let Some(s) = test_set.first() {
        check_feature_compat(&net, s.meta.n_frames, s.meta.global_size, s.meta.crop_size)?;
    }
    Ok(evaluate(&mut net, test_set, batch_size)?)
}

// ---------------------------------------------------------------------------
// Qualitative dumps
// ---------------------------------------------------------------------------

/// Fixed overlay color per player channel.
pub const OVERLAY_COLORS: [[u8; 3]; 5] = [
    [255, 60, 60],
    [255, 220, 60],
    [60, 220, 255],
    [255, 60, 255],
    [255, 150, 40],
];

/// Side of the upscaled canvas the overlays are drawn on.
const OVERLAY_CANVAS: usize = 256;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlayPlayer {
    pub bbox_px: [f32; 4],
    pub foot_px: [f32; 2],
    pub keypoints_px: Vec<(f32, f32, bool)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlayFrame {
    pub offset: u32,
    pub players: Vec<OverlayPlayer>,
}

/// Sidecar written next to each case's overlay images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseSidecar {
    pub match_id: String,
    pub time_s: u32,
    pub category: String,
    pub probability: f64,
    pub predicted: Label,
    pub label: Label,
    pub canvas: usize,
    pub frames: Vec<OverlayFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualitativeSummary {
    pub counts: HashMap<String, usize>,
    pub written: HashMap<String, usize>,
    pub empty_categories: Vec<String>,
}

pub const QUALITATIVE_CATEGORIES: [&str; 4] =
    ["true_positive", "true_negative", "missed", "false_alarm"];

fn categorize(predicted: Label, actual: Label) -> &'static str {
    match (predicted, actual) {
        (Label::Foul, Label::Foul) => "true_positive",
        (Label::NonFoul, Label::NonFoul) => "true_negative",
        (Label::NonFoul, Label::Foul) => "missed",
        (Label::Foul, Label::NonFoul) => "false_alarm",
    }
}

/// Renders one sample's subsampled frames with bbox and skeleton overlays
/// onto an upscaled canvas. Returns the images plus the exact geometry drawn.
fn render_case(sample: &Sample) -> (Vec<RgbBuf>, Vec<OverlayFrame>) {
    let m = &sample.meta;
    let s = m.global_size;
    let d = OVERLAY_CANVAS;
    let s2 = 3 * s * s;
    let mut images = Vec::with_capacity(m.n_frames);
    let mut frames = Vec::with_capacity(m.n_frames);
    for t in 0..m.n_frames {
        let plane = crate::img::Planes {
            w: s,
            h: s,
            data: sample.video[t * s2..(t + 1) * s2].to_vec(),
        };
        let mut canvas = plane.resize(d, d).expect("upscale").to_rgb();
        let mut players = Vec::with_capacity(m.players);
        for p in 0..m.players {
            let color = OVERLAY_COLORS[p % OVERLAY_COLORS.len()];
            let nb = m.bboxes[t][p];
            let bbox_px = [
                nb[0] * d as f32,
                nb[1] * d as f32,
                nb[2] * d as f32,
                nb[3] * d as f32,
            ];
            canvas.stroke_rect(
                bbox_px[0] as f64,
                bbox_px[1] as f64,
                bbox_px[2] as f64,
                bbox_px[3] as f64,
                color,
            );
            let foot_base = (t * m.players + p) * 2;
            let foot_px = [
                sample.feet[foot_base] * d as f32,
                sample.feet[foot_base + 1] * d as f32,
            ];
            canvas.fill_disc(foot_px[0] as f64, foot_px[1] as f64, 2.5, color);
            let mut keypoints_px = Vec::with_capacity(KEYPOINT_COUNT);
            let pose_base = (t * m.players + p) * KEYPOINT_COUNT * 2;
            for k in 0..KEYPOINT_COUNT {
                let x = sample.poses[pose_base + 2 * k];
                let y = sample.poses[pose_base + 2 * k + 1];
                let visible = x != 0.0 || y != 0.0;
                keypoints_px.push((x * d as f32, y * d as f32, visible));
            }
            for (a, b) in SKELETON_EDGES {
                let (xa, ya, va) = keypoints_px[a];
                let (xb, yb, vb) = keypoints_px[b];
                if va && vb {
                    canvas.draw_line(xa as f64, ya as f64, xb as f64, yb as f64, color);
                }
            }
            players.push(OverlayPlayer {
                bbox_px,
                foot_px,
                keypoints_px,
            });
        }
        images.push(canvas);
        frames.push(OverlayFrame {
            offset: m.frame_offsets[t],
            players,
        });
    }
    (images, frames)
}

/// Writes up to `max_cases` overlay dumps per category (true positive / true
/// negative / missed / false alarm) plus a summary noting empty categories.
pub fn dump_qualitative(
    net: &mut FoulNet<f32>,
    test_set: &[&Sample],
    out_dir: &Path,
    max_cases: usize,
) -> Result<QualitativeSummary, StudyError> {
    let predictions = predict(net, test_set, 32)?;
    let mut counts: HashMap<String, usize> = QUALITATIVE_CATEGORIES
        .iter()
        .map(|c| (c.to_string(), 0))
        .collect();
    let mut written: HashMap<String, usize> = counts.clone();
    std::fs::create_dir_all(out_dir).map_err(|e| StoreError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    for (sample, (prob, predicted)) in test_set.iter().zip(&predictions) {
        let category = categorize(*predicted, sample.label);
        *counts.get_mut(category).unwrap() += 1;
        let slot = written.get_mut(category).unwrap();
        if *slot >= max_cases {
            continue;
        }
        let case_dir = out_dir.join(category).join(format!("case_{slot:02}"));
        std::fs::create_dir_all(&case_dir).map_err(|e| StoreError::Io {
            path: case_dir.display().to_string(),
            source: e,
        })?;
        let (images, frames) = render_case(sample);
        for (t, img) in images.iter().enumerate() {
            img.save_png(&case_dir.join(format!("frame_{t}.png")))
                .map_err(StoreError::from)?;
        }
        let sidecar = CaseSidecar {
            match_id: sample.meta.match_id.clone(),
            time_s: sample.meta.time_s,
            category: category.to_string(),
            probability: *prob,
            predicted: *predicted,
            label: sample.label,
            canvas: OVERLAY_CANVAS,
            frames,
        };
        write_json(&case_dir.join("case.json"), &sidecar)?;
        *slot += 1;
    }
    let empty_categories: Vec<String> = QUALITATIVE_CATEGORIES
        .iter()
        .filter(|c| counts[**c] == 0)
        .map(|c| c.to_string())
        .collect();
    let summary = QualitativeSummary {
        counts,
        written,
        empty_categories,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_trackset, DatasetConfig};
    use crate::ingest::{eligible_events, LabelRules};
    use crate::model::PLAYERS;
    use crate::nn::{Param, ParamVisitor};
    use crate::synth::{generate_match, SynthConfig};

    fn tiny_source(n_events: usize, seed: u64) -> TracksetSource {
        let mut tracksets = Vec::new();
        let mut matches = HashMap::new();
        let per_match = 4usize;
        let n_matches = n_events.div_ceil(per_match);
        for i in 0..n_matches {
            let remaining = n_events - i * per_match;
            let cfg = SynthConfig {
                n_events: per_match.min(remaining),
                seed: seed + i as u64,
                frame_width: 320,
                frame_height: 180,
                ..SynthConfig::default()
            };
            let id = format!("m{i:03}");
            let sm = generate_match(&cfg, &id).unwrap();
            let (kept, _) = eligible_events(&sm.annotation, &LabelRules::default());
            for (event, label) in kept {
                tracksets.push(
                    build_trackset(&sm.annotation, &event, label, &DatasetConfig::default())
                        .unwrap(),
                );
            }
            matches.insert(id, sm.annotation);
        }
        TracksetSource { tracksets, matches }
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            hidden: 24,
            rnn_layers: 1,
            cnn_channels: (3, 4, 6),
            mlp_hidden: vec![16],
            dropout_p: 0.1,
            ..ModelConfig::default()
        }
    }

    fn tiny_feat() -> FeatureConfig {
        FeatureConfig {
            n_frames: 4,
            global_size: 16,
            crop_size: 8,
        }
    }

    fn tiny_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn default_axis_specs_have_the_documented_variant_counts() {
        let m = ModelConfig::default();
        let f = FeatureConfig::default();
        let t = TrainConfig::default();
        let ablation = StudySpec::for_axis(StudyAxis::Ablation, &m, &f, t.clone(), 0);
        assert_eq!(ablation.variants.len(), 5);
        assert_eq!(ablation.variants[0].name, "full");
        let frames = StudySpec::for_axis(StudyAxis::Frames, &m, &f, t.clone(), 0);
        assert_eq!(frames.variants.len(), 6);
        let ns: Vec<usize> = frames.variants.iter().map(|v| v.features.n_frames).collect();
        assert_eq!(ns, vec![4, 8, 15, 25, 35, 45]);
        let size = StudySpec::for_axis(StudyAxis::Size, &m, &f, t, 0);
        assert_eq!(size.variants.len(), 3);
        let ss: Vec<usize> = size.variants.iter().map(|v| v.features.global_size).collect();
        assert_eq!(ss, vec![64, 128, 256]);
    }

    #[test]
    fn single_variant_study_equals_direct_train_and_evaluate() {
        let source = tiny_source(12, 40);
        let spec = StudySpec {
            axis: StudyAxis::Ablation,
            variants: vec![StudyVariant {
                name: "solo".into(),
                model: tiny_model(),
                features: tiny_feat(),
            }],
            train: tiny_train(2),
            model_seed: 3,
        };
        let report = run_study(&spec, &source, (8, 2, 2), None).unwrap();
        assert_eq!(report.rows.len(), 1);

        // Direct path with the same split, seed, and configs.
        let labels = source.labels();
        let split = split_dataset(&labels, (8, 2, 2), spec.train.seed).unwrap();
        let samples = source.samples(&tiny_feat()).unwrap();
        let pick = |idx: &[usize]| -> Vec<&Sample> { idx.iter().map(|&i| &samples[i]).collect() };
        let net = FoulNet::<f32>::new(tiny_model(), tiny_feat(), 3).unwrap();
        let outcome = train(net, &pick(&split.train), &pick(&split.val), &spec.train).unwrap();
        let metrics = evaluate(&mut outcome.best.clone(), &pick(&split.test), 8).unwrap();
        assert_eq!(report.rows[0].accuracy, metrics.accuracy);
        assert_eq!(report.rows[0].precision, metrics.precision);
        assert_eq!(report.rows[0].recall, metrics.recall);
        assert_eq!(report.rows[0].best_epoch, outcome.best_epoch);
    }

    #[test]
    fn multi_variant_study_shares_one_split_and_retains_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let source = tiny_source(12, 41);
        let spec = StudySpec {
            axis: StudyAxis::Frames,
            variants: vec![
                StudyVariant {
                    name: "2-frames".into(),
                    model: tiny_model(),
                    features: FeatureConfig {
                        n_frames: 2,
                        ..tiny_feat()
                    },
                },
                StudyVariant {
                    name: "4-frames".into(),
                    model: tiny_model(),
                    features: tiny_feat(),
                },
            ],
            train: tiny_train(1),
            model_seed: 9,
        };
        let report = run_study(&spec, &source, (8, 2, 2), Some(dir.path())).unwrap();
        assert_eq!(report.rows.len(), 2);
        // One split: recomputing the hash gives the reported value.
        let labels = source.labels();
        let split = split_dataset(&labels, (8, 2, 2), spec.train.seed).unwrap();
        let hash = split_membership_hash(&source.identities(), &split.train, &split.val, &split.test);
        assert_eq!(report.split_hash, hash);
        // Each retained checkpoint re-evaluates to its row's metrics.
        let samples = source.samples(&tiny_feat()).unwrap();
        let test: Vec<&Sample> = split.test.iter().map(|&i| &samples[i]).collect();
        let row = &report.rows[1];
        let m = reevaluate_checkpoint(Path::new(row.checkpoint.as_ref().unwrap()), &test, 8).unwrap();
        assert_eq!(m.accuracy, row.accuracy);
        // CSV and table render one line per variant.
        assert_eq!(report.to_csv().lines().count(), 3);
        assert!(report.to_table().contains("4-frames"));
    }

    /// Rig the head so the network always predicts one class.
    fn rig_constant(net: &mut FoulNet<f32>, class: usize) {
        net.visit_params_mut(&mut |p: &mut Param<f32>| {
            if p.name == "mlp.out.w" {
                p.value.fill(0.0);
            }
            if p.name == "mlp.out.b" {
                p.value = if class == 1 {
                    vec![-10.0, 10.0]
                } else {
                    vec![10.0, -10.0]
                };
            }
        });
    }

    #[test]
    fn constant_non_foul_predictor_misses_every_positive() {
        let dir = tempfile::tempdir().unwrap();
        let source = tiny_source(8, 42);
        let samples = source.samples(&tiny_feat()).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let positives = refs.iter().filter(|s| s.label == Label::Foul).count();
        let mut net = FoulNet::<f32>::new(tiny_model(), tiny_feat(), 1).unwrap();
        rig_constant(&mut net, 0);
        let summary = dump_qualitative(&mut net, &refs, dir.path(), 3).unwrap();
        assert_eq!(summary.counts["missed"], positives);
        assert_eq!(summary.counts["true_positive"], 0);
        assert_eq!(summary.counts["false_alarm"], 0);
        assert!(summary.empty_categories.contains(&"true_positive".to_string()));
        assert!(summary.empty_categories.contains(&"false_alarm".to_string()));
        // Written cases are capped.
        assert!(summary.written["missed"] <= 3);
        assert!(dir.path().join("missed/case_00/case.json").exists());
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn sidecar_geometry_matches_the_sample_record() {
        let dir = tempfile::tempdir().unwrap();
        let source = tiny_source(4, 43);
        let samples = source.samples(&tiny_feat()).unwrap();
        let refs: Vec<&Sample> = samples.iter().collect();
        let mut net = FoulNet::<f32>::new(tiny_model(), tiny_feat(), 2).unwrap();
        rig_constant(&mut net, 1); // everything lands in two categories
        dump_qualitative(&mut net, &refs, dir.path(), 5).unwrap();
        // Re-read every sidecar and compare against the sample metadata.
        let mut checked = 0;
        for category in QUALITATIVE_CATEGORIES {
            let cat_dir = dir.path().join(category);
            if !cat_dir.exists() {
                continue;
            }
            let mut case_dirs: Vec<_> = std::fs::read_dir(&cat_dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            case_dirs.sort();
            for case_dir in case_dirs {
                let sidecar: CaseSidecar =
                    crate::store::read_json(&case_dir.join("case.json")).unwrap();
                let sample = refs
                    .iter()
                    .find(|s| {
                        s.meta.match_id == sidecar.match_id && s.meta.time_s == sidecar.time_s
                    })
                    .expect("sidecar names a test sample");
                let d = sidecar.canvas as f32;
                for (t, frame) in sidecar.frames.iter().enumerate() {
                    assert_eq!(frame.offset, sample.meta.frame_offsets[t]);
                    for p in 0..PLAYERS {
                        let nb = sample.meta.bboxes[t][p];
                        let got = frame.players[p].bbox_px;
                        for k in 0..4 {
                            assert!((got[k] - nb[k] * d).abs() < 1e-4);
                        }
                        let foot = [
                            sample.feet[(t * PLAYERS + p) * 2] * d,
                            sample.feet[(t * PLAYERS + p) * 2 + 1] * d,
                        ];
                        assert!((frame.players[p].foot_px[0] - foot[0]).abs() < 1e-4);
                        assert!((frame.players[p].foot_px[1] - foot[1]).abs() < 1e-4);
                        // Overlay frame images exist alongside.
                        assert!(case_dir.join(format!("frame_{t}.png")).exists());
                    }
                }
                checked += 1;
            }
        }
        assert!(checked >= 4, "expected sidecars for all samples, saw {checked}");
    }
}
