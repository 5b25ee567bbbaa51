//! Command-line pipeline: synth -> build -> train -> eval, plus ablation
//! studies, single-sample prediction, and report rendering.
//!
//! Settings resolve as flags > config file (`key=value` lines) > defaults.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod settings;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use futurefoul::dataset::{build_trackset, DatasetConfig, TrackSet};
use futurefoul::features::{build_sample, FeatureConfig, Sample};
use futurefoul::ingest::{eligible_events, parse_match, LabelRules, Rejection};
use futurefoul::model::{
    check_feature_compat, load_checkpoint, save_checkpoint, FoulNet, ModelConfig,
};
use futurefoul::store::{
    self, dataset_index_path, frame_image_path, manifest_path, match_annotation_path, read_json,
    write_json, DatasetIndex, DiskFrames, ManifestEntry, RunManifest, SamplesManifest,
};
use futurefoul::study::{
    dump_qualitative, run_study, SampleSource, StudyAxis, StudyError, StudyReport, StudySpec,
};
use futurefoul::synth::{generate_match, render_frame, SynthConfig};
use futurefoul::train::{evaluate, predict, split_dataset, train, Split, TrainConfig};
use futurefoul::types::{Label, MatchAnnotation};
use settings::{CliError, Settings};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "futurefoul", version, about = "Soccer foul prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (annotations + rendered frames).
    Synth(SynthArgs),
    /// Build model-ready samples from a dataset directory.
    Build(BuildArgs),
    /// Train a model on built samples and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split; optionally dump qualitative cases.
    Eval(EvalArgs),
    /// Run a multi-variant study over one axis (ablation / frames / size).
    Ablate(AblateArgs),
    /// Predict foul probability for one sample directory.
    Predict(PredictArgs),
    /// Render the tables of a finished study.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Base seed for all randomness in this command.
    #[arg(long)]
    seed: Option<u64>,
    /// Optional config file with key=value lines (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Total number of events across all matches.
    #[arg(long)]
    events: Option<usize>,
    #[arg(long)]
    events_per_match: Option<usize>,
    #[arg(long)]
    foul_fraction: Option<f64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    fps: Option<u32>,
    #[arg(long)]
    players: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    /// Skip rendering frame images (annotations only).
    #[arg(long)]
    no_images: bool,
    /// Inject a tracking gap: this player_ref vanishes mid-window.
    #[arg(long)]
    gap_ref: Option<u32>,
    #[arg(long)]
    gap_len: Option<u32>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory produced by `synth`.
    #[arg(long)]
    dataset: PathBuf,
    /// Output samples directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    global_size: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    radius_frac: Option<f64>,
    #[arg(long)]
    max_held_frac: Option<f64>,
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long)]
    no_video: bool,
    #[arg(long)]
    no_bbox: bool,
    #[arg(long)]
    no_pose: bool,
    #[arg(long)]
    no_bboximg: bool,
    #[arg(long)]
    no_rnn: bool,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    rnn_layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

impl ModelFlags {
    fn resolve(&self, file: &Settings) -> Result<ModelConfig> {
        let mut cfg = ModelConfig {
            use_video: !(self.no_video || file.get_bool("no_video")?),
            use_bbox: !(self.no_bbox || file.get_bool("no_bbox")?),
            use_pose: !(self.no_pose || file.get_bool("no_pose")?),
            use_bboximg: !(self.no_bboximg || file.get_bool("no_bboximg")?),
            use_rnn: !(self.no_rnn || file.get_bool("no_rnn")?),
            ..ModelConfig::default()
        };
        cfg.hidden = file.resolve("hidden", self.hidden, cfg.hidden)?;
        cfg.rnn_layers = file.resolve("rnn_layers", self.rnn_layers, cfg.rnn_layers)?;
        cfg.dropout_p = file.resolve("dropout", self.dropout, cfg.dropout_p)?;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Samples directory produced by `build`.
    #[arg(long)]
    samples: PathBuf,
    /// Output run directory for the checkpoint and history.
    #[arg(long)]
    out: PathBuf,
    /// train,val,test — percentages when the sum is <= 100, counts otherwise.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Parameter-init seed (defaults to the run seed).
    #[arg(long)]
    model_seed: Option<u64>,
    /// Stop once validation accuracy reaches this fraction.
    #[arg(long)]
    stop_at_val_acc: Option<f64>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which split to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write qualitative success/failure dumps.
    #[arg(long)]
    qualitative: bool,
    #[arg(long)]
    max_cases: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory (samples are rebuilt per variant's feature shape).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// ablation | frames | size
    #[arg(long)]
    axis: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    global_size: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// One sample directory.
    #[arg(long)]
    sample: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Study directory produced by `ablate`.
    #[arg(long)]
    study: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<CliError>().is_some() {
                2
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Build(a) => cmd_build(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn finish_run(
    out_dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    input_hash: String,
    started: f64,
) -> Result<()> {
    store::write_run_manifest(
        out_dir,
        &RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs,
            outputs,
            input_hash,
            started_unix_s: started,
            finished_unix_s: store::unix_now(),
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let started = store::unix_now();
    let file = Settings::load(a.common.config.as_deref())?;
    let seed = file.resolve("seed", a.common.seed, 0u64)?;
    let events = file.resolve("events", a.events, 100usize)?;
    let events_per_match = file.resolve("events_per_match", a.events_per_match, 5usize)?;
    if events == 0 || events_per_match == 0 {
        bail!(CliError::Usage("--events and --events-per-match must be positive".into()));
    }
    let gap_ref = file.resolve_opt("gap_ref", a.gap_ref)?;
    let gap_len = file.resolve_opt("gap_len", a.gap_len)?;
    let gap_injection = match (gap_ref, gap_len) {
        (Some(r), Some(l)) => Some((r, l)),
        (None, None) => None,
        _ => bail!(CliError::Usage("--gap-ref and --gap-len must be given together".into())),
    };
    let base = SynthConfig {
        n_events: events_per_match,
        foul_fraction: file.resolve("foul_fraction", a.foul_fraction, 0.5)?,
        frame_width: file.resolve("width", a.width, 640u32)?,
        frame_height: file.resolve("height", a.height, 360u32)?,
        fps: file.resolve("fps", a.fps, 25u32)?,
        players_per_frame: file.resolve("players", a.players, 8usize)?,
        signal_strength: file.resolve("signal", a.signal, 0.8)?,
        gap_injection,
        seed,
    };
    let with_images = !(a.no_images || file.get_bool("no_images")?);

    std::fs::create_dir_all(&a.out)?;
    let n_matches = events.div_ceil(events_per_match);
    let mut match_ids = Vec::new();
    let mut remaining = events;
    for i in 0..n_matches {
        let cfg = SynthConfig {
            n_events: events_per_match.min(remaining),
            seed: seed.wrapping_add(i as u64),
            ..base.clone()
        };
        remaining -= cfg.n_events;
        let match_id = format!("match_{i:04}");
        let sm = generate_match(&cfg, &match_id)
            .map_err(|e| anyhow!(CliError::Usage(e.to_string())))?;
        let ann_path = match_annotation_path(&a.out, &match_id);
        std::fs::create_dir_all(ann_path.parent().unwrap())?;
        write_json(&ann_path, &sm.annotation)?;
        if with_images {
            let frames_dir = ann_path.parent().unwrap().join("frames");
            std::fs::create_dir_all(&frames_dir)?;
            for frame in &sm.annotation.frames {
                let img = render_frame(&sm.annotation, frame.index);
                img.save_png(&frame_image_path(&a.out, &match_id, frame.index))?;
            }
        }
        match_ids.push(match_id);
    }
    write_json(
        &dataset_index_path(&a.out),
        &DatasetIndex {
            matches: match_ids.clone(),
            seed,
            events_total: events,
            with_images,
        },
    )?;
    let content_hash = store::hash_tree(&a.out, &[store::RUN_MANIFEST_NAME])?;
    println!(
        "wrote {} matches ({} events) to {} [content {}]",
        match_ids.len(),
        events,
        a.out.display(),
        content_hash
    );
    finish_run(
        &a.out,
        "synth",
        serde_json::json!({
            "events": events, "events_per_match": events_per_match,
            "foul_fraction": base.foul_fraction, "width": base.frame_width,
            "height": base.frame_height, "fps": base.fps,
            "players": base.players_per_frame, "signal": base.signal_strength,
            "with_images": with_images,
        }),
        seed,
        vec![],
        vec![a.out.display().to_string()],
        content_hash,
        started,
    )
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

fn load_dataset(dataset_dir: &Path) -> Result<(DatasetIndex, Vec<MatchAnnotation>)> {
    let index: DatasetIndex = read_json(&dataset_index_path(dataset_dir))
        .with_context(|| format!("reading dataset index in {}", dataset_dir.display()))?;
    let mut matches = Vec::with_capacity(index.matches.len());
    for id in &index.matches {
        matches.push(parse_match(&match_annotation_path(dataset_dir, id))?);
    }
    Ok((index, matches))
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let started = store::unix_now();
    let file = Settings::load(a.common.config.as_deref())?;
    let feat = FeatureConfig {
        n_frames: file.resolve("frames", a.frames, 4usize)?,
        global_size: file.resolve("global_size", a.global_size, 64usize)?,
        crop_size: file.resolve("crop_size", a.crop_size, 224usize)?,
    };
    let dcfg = DatasetConfig {
        player_count: 5,
        radius_frac: file.resolve("radius_frac", a.radius_frac, 0.1)?,
        max_held_frac: file.resolve("max_held_frac", a.max_held_frac, 0.5)?,
    };
    let (_, matches) = load_dataset(&a.dataset)?;
    std::fs::create_dir_all(&a.out)?;

    let rules = LabelRules::default();
    let mut entries = Vec::new();
    let mut rejections: Vec<Rejection> = Vec::new();
    let mut sample_idx = 0usize;
    for m in &matches {
        let (kept, ingest_rejections) = eligible_events(m, &rules);
        rejections.extend(ingest_rejections);
        for (event, label) in kept {
            match build_trackset(m, &event, label, &dcfg) {
                Ok(ts) => {
                    let frames = DiskFrames {
                        dataset_dir: &a.dataset,
                        match_id: &m.match_id,
                    };
                    let sample = build_sample(&ts, &frames, &feat)?;
                    let dir_name = format!("s{sample_idx:05}_{}_t{}", m.match_id, event.time_s);
                    store::save_sample(&a.out.join(&dir_name), &sample)?;
                    entries.push(ManifestEntry {
                        dir: dir_name,
                        match_id: m.match_id.clone(),
                        time_s: event.time_s,
                        label,
                        split: None,
                    });
                    sample_idx += 1;
                }
                Err(e) => rejections.push(Rejection {
                    match_id: m.match_id.clone(),
                    time_s: event.time_s,
                    reason: e.reject_reason(),
                }),
            }
        }
    }
    write_json(
        &manifest_path(&a.out),
        &SamplesManifest {
            n_frames: feat.n_frames,
            global_size: feat.global_size,
            crop_size: feat.crop_size,
            samples: entries.clone(),
            split_seed: None,
        },
    )?;
    store::write_rejection_log(&a.out, &rejections)?;
    let content_hash = store::hash_tree(&a.out, &[store::RUN_MANIFEST_NAME])?;
    println!(
        "built {} samples, rejected {} events (rejections.log) [content {}]",
        entries.len(),
        rejections.len(),
        content_hash
    );
    finish_run(
        &a.out,
        "build",
        serde_json::to_value(feat)?,
        0,
        vec![a.dataset.display().to_string()],
        vec![a.out.display().to_string()],
        content_hash,
        started,
    )
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

fn parse_split_spec(text: &str, total: usize) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        bail!(CliError::Usage(format!(
            "--split wants three comma-separated numbers, got {text:?}"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("bad --split {text:?}: {e}")))
        .map_err(anyhow::Error::from)?;
    let sum: f64 = nums.iter().sum();
    let counts = if sum <= 100.0 {
        // Percentages of the dataset.
        let train = (total as f64 * nums[0] / 100.0).floor() as usize;
        let val = (total as f64 * nums[1] / 100.0).floor() as usize;
        let test = (total as f64 * nums[2] / 100.0).floor() as usize;
        (train, val, test)
    } else {
        (nums[0] as usize, nums[1] as usize, nums[2] as usize)
    };
    if counts.0 == 0 || counts.1 == 0 || counts.2 == 0 {
        bail!(CliError::Usage(format!(
            "--split {text:?} yields an empty subset on {total} samples"
        )));
    }
    Ok(counts)
}

fn load_manifest(samples_dir: &Path) -> Result<SamplesManifest> {
    read_json(&manifest_path(samples_dir))
        .with_context(|| format!("reading samples manifest in {}", samples_dir.display()))
}

fn assign_split_labels(manifest: &mut SamplesManifest, split: &Split) {
    for (name, idx) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for &i in idx {
            manifest.samples[i].split = Some(name.to_string());
        }
    }
    manifest.split_seed = Some(split.seed);
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = store::unix_now();
    let file = Settings::load(a.common.config.as_deref())?;
    let seed = file.resolve("seed", a.common.seed, 0u64)?;
    let model_seed = file.resolve("model_seed", a.model_seed, seed)?;
    let model_cfg = a.model.resolve(&file)?;
    let mut manifest = load_manifest(&a.samples)?;
    let samples = store::load_all_samples(&a.samples, &manifest)?;
    if samples.is_empty() {
        bail!("samples directory {} is empty", a.samples.display());
    }
    let feat = FeatureConfig {
        n_frames: manifest.n_frames,
        global_size: manifest.global_size,
        crop_size: manifest.crop_size,
    };
    let split_text = file.resolve("split", a.split.clone(), "80,10,10".to_string())?;
    let sizes = parse_split_spec(&split_text, samples.len())?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let split = split_dataset(&labels, sizes, seed)?;

    let tcfg = TrainConfig {
        lr: file.resolve("lr", a.lr, 0.001)?,
        batch_size: file.resolve("batch_size", a.batch_size, 32usize)?,
        epochs: file.resolve("epochs", a.epochs, 30usize)?,
        seed,
        stop_at_val_acc: file.resolve_opt("stop_at_val_acc", a.stop_at_val_acc)?,
    };
    let pick = |idx: &[usize]| -> Vec<&Sample> { idx.iter().map(|&i| &samples[i]).collect() };
    let net = FoulNet::<f32>::new(model_cfg.clone(), feat, model_seed)?;
    println!(
        "training on {} samples ({} val), {} parameters, seed {seed}",
        split.train.len(),
        split.val.len(),
        net.param_count()
    );
    let outcome = train(net, &pick(&split.train), &pick(&split.val), &tcfg)?;

    std::fs::create_dir_all(&a.out)?;
    let ckpt_path = a.out.join("checkpoint.ckpt");
    save_checkpoint(&outcome.best, &ckpt_path)?;
    store::atomic_write(&a.out.join("history.csv"), outcome.history.to_csv().as_bytes())?;
    assign_split_labels(&mut manifest, &split);
    write_json(&manifest_path(&a.samples), &manifest)?;
    write_json(&a.out.join("split.json"), &split)?;
    let last = outcome.history.epochs.last().unwrap();
    println!(
        "best epoch {} (val acc {:.1}%), final train acc {:.1}%, checkpoint {}",
        outcome.best_epoch,
        outcome.history.epochs[outcome.best_epoch - 1].val_acc * 100.0,
        last.train_acc * 100.0,
        ckpt_path.display()
    );
    finish_run(
        &a.out,
        "train",
        serde_json::json!({
            "model": model_cfg, "train": tcfg, "features": feat, "split": sizes,
            "model_seed": model_seed,
        }),
        seed,
        vec![a.samples.display().to_string()],
        vec![a.out.display().to_string()],
        store::hash_tree(&a.samples, &[store::RUN_MANIFEST_NAME])?,
        started,
    )
}

fn split_members<'a>(
    manifest: &SamplesManifest,
    samples: &'a [Sample],
    which: &str,
) -> Result<Vec<&'a Sample>> {
    if manifest.split_seed.is_none() {
        bail!(
            "samples manifest has no split assignment; run `futurefoul train` first"
        );
    }
    let picked: Vec<&Sample> = manifest
        .samples
        .iter()
        .zip(samples)
        .filter(|(e, _)| e.split.as_deref() == Some(which))
        .map(|(_, s)| s)
        .collect();
    if picked.is_empty() {
        bail!("split {which:?} is empty in the samples manifest");
    }
    Ok(picked)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let started = store::unix_now();
    let file = Settings::load(a.common.config.as_deref())?;
    let max_cases = file.resolve("max_cases", a.max_cases, 5usize)?;
    if !["train", "val", "test"].contains(&a.split.as_str()) {
        bail!(CliError::Usage(format!("--split must be train/val/test, got {:?}", a.split)));
    }
    let manifest = load_manifest(&a.samples)?;
    let samples = store::load_all_samples(&a.samples, &manifest)?;
    let set = split_members(&manifest, &samples, &a.split)?;
    let mut net = load_checkpoint(&a.checkpoint)?;
    check_feature_compat(&net, manifest.n_frames, manifest.global_size, manifest.crop_size)?;
    let metrics = evaluate(&mut net, &set, 32)?;
    std::fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("metrics.json"), &metrics)?;
    store::atomic_write(&a.out.join("metrics.txt"), format!("{}\n", metrics.table()).as_bytes())?;
    println!("{} ({} {} samples)", metrics.table(), set.len(), a.split);
    if a.qualitative || file.get_bool("qualitative")? {
        let summary = dump_qualitative(&mut net, &set, &a.out.join("qualitative"), max_cases)?;
        for cat in futurefoul::study::QUALITATIVE_CATEGORIES {
            let note = if summary.counts[cat] == 0 { " (none)" } else { "" };
            println!("  {cat}: {}{note}", summary.counts[cat]);
        }
    }
    finish_run(
        &a.out,
        "eval",
        serde_json::json!({"split": a.split, "qualitative": a.qualitative}),
        0,
        vec![
            a.samples.display().to_string(),
            a.checkpoint.display().to_string(),
        ],
        vec![a.out.display().to_string()],
        store::hash_tree(&a.samples, &[store::RUN_MANIFEST_NAME])?,
        started,
    )
}

// ---------------------------------------------------------------------------
// ablate / report
// ---------------------------------------------------------------------------

/// Rebuilds samples from a dataset directory for any feature shape.
struct DiskSource {
    dataset_dir: PathBuf,
    tracksets: Vec<TrackSet>,
}

impl SampleSource for DiskSource {
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
                let frames = DiskFrames {
                    dataset_dir: &self.dataset_dir,
                    match_id: &ts.match_id,
                };
                Ok(build_sample(ts, &frames, features)?)
            })
            .collect()
    }
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let started = store::unix_now();
    let file = Settings::load(a.common.config.as_deref())?;
    let seed = file.resolve("seed", a.common.seed, 0u64)?;
    let model_seed = file.resolve("model_seed", a.model_seed, seed)?;
    let axis_text = file.resolve("axis", a.axis.clone(), "ablation".to_string())?;
    let axis = match axis_text.as_str() {
        "ablation" => StudyAxis::Ablation,
        "frames" => StudyAxis::Frames,
        "size" => StudyAxis::Size,
        other => bail!(CliError::Usage(format!(
            "--axis must be ablation/frames/size, got {other:?}"
        ))),
    };
    let base_model = a.model.resolve(&file)?;
    let base_feat = FeatureConfig {
        n_frames: file.resolve("frames", a.frames, 4usize)?,
        global_size: file.resolve("global_size", a.global_size, 64usize)?,
        crop_size: file.resolve("crop_size", a.crop_size, 224usize)?,
    };
    let tcfg = TrainConfig {
        lr: file.resolve("lr", a.lr, 0.001)?,
        batch_size: file.resolve("batch_size", a.batch_size, 32usize)?,
        epochs: file.resolve("epochs", a.epochs, 30usize)?,
        seed,
        stop_at_val_acc: None,
    };

    let (_, matches) = load_dataset(&a.dataset)?;
    let rules = LabelRules::default();
    let dcfg = DatasetConfig::default();
    let mut tracksets = Vec::new();
    for m in &matches {
        let (kept, _) = eligible_events(m, &rules);
        for (event, label) in kept {
            if let Ok(ts) = build_trackset(m, &event, label, &dcfg) {
                tracksets.push(ts);
            }
        }
    }
    let source = DiskSource {
        dataset_dir: a.dataset.clone(),
        tracksets,
    };
    let total = source.tracksets.len();
    let split_text = file.resolve("split", a.split.clone(), "80,10,10".to_string())?;
    let sizes = parse_split_spec(&split_text, total)?;

    let spec = StudySpec::for_axis(axis, &base_model, &base_feat, tcfg, model_seed);
    std::fs::create_dir_all(&a.out)?;
    let report = run_study(&spec, &source, sizes, Some(&a.out.join("checkpoints")))?;
    write_json(&a.out.join("report.json"), &report)?;
    store::atomic_write(&a.out.join("report.csv"), report.to_csv().as_bytes())?;
    store::atomic_write(&a.out.join("report.txt"), report.to_table().as_bytes())?;
    print!("{}", report.to_table());
    finish_run(
        &a.out,
        "ablate",
        serde_json::json!({
            "axis": axis_text, "model": base_model, "features": base_feat,
            "split": sizes, "model_seed": model_seed,
        }),
        seed,
        vec![a.dataset.display().to_string()],
        vec![a.out.display().to_string()],
        store::hash_tree(&a.dataset, &[store::RUN_MANIFEST_NAME])?,
        started,
    )
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let _ = Settings::load(a.common.config.as_deref())?;
    let sample = store::load_sample(&a.sample)?;
    let mut net = load_checkpoint(&a.checkpoint)?;
    check_feature_compat(
        &net,
        sample.meta.n_frames,
        sample.meta.global_size,
        sample.meta.crop_size,
    )?;
    let out = predict(&mut net, &[&sample], 1)?;
    let (prob, label) = out[0];
    println!("{prob:.4} {label}");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let _ = Settings::load(a.common.config.as_deref())?;
    let report: StudyReport = read_json(&a.study.join("report.json"))
        .with_context(|| format!("reading study report in {}", a.study.display()))?;
    print!("{}", report.to_table());
    store::atomic_write(&a.study.join("report.txt"), report.to_table().as_bytes())?;
    Ok(())
}
