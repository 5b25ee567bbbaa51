//! On-disk layouts: sample directories, dataset/sample manifests, rejection
//! logs, run manifests, and content hashing for reproducibility checks.
//!
//! A dataset directory (from `synth`) holds
//! `matches/<id>/annotation.json` plus `matches/<id>/frames/f<index>.png`.
//! A samples directory (from `build`) holds `manifest.json`,
//! `rejections.log`, and one subdirectory per sample with `meta.json`,
//! `global_<t>.png`, `crop_<t>_<p>.png`, `feet.txt`, and `poses.txt`.
//! Only the numeric text arrays are bit-exact (fixed 6 decimals); images are
//! quantized to 8-bit PNG.

use crate::features::{FeatureError, FrameSource, Sample, SampleMeta};
use crate::img::{Planes, RgbBuf};
use crate::ingest::Rejection;
use crate::types::Label;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failed for {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Img(#[from] crate::img::ImgError),
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes via a temp file + rename so readers never see partial content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp_write");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// 64-bit FNV-1a over a byte stream.
#[derive(Debug, Clone)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }
}

impl Fnv1a {
    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Content hash of a directory tree: relative paths and file bytes, walked
/// in sorted order. Files whose name appears in `exclude` are skipped.
pub fn hash_tree(root: &Path, exclude: &[&str]) -> Result<String, StoreError> {
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> std::io::Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(&p, files)?;
            } else {
                files.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files).map_err(|e| io_err(root, e))?;
    let mut h = Fnv1a::default();
    for f in files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if exclude.contains(&name) {
            continue;
        }
        let rel = f.strip_prefix(root).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update(&std::fs::read(&f).map_err(|e| io_err(&f, e))?);
    }
    Ok(format!("{:016x}", h.finish()))
}

// ---------------------------------------------------------------------------
// Dataset directory (synth output)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub matches: Vec<String>,
    pub seed: u64,
    pub events_total: usize,
    pub with_images: bool,
}

pub fn dataset_index_path(dir: &Path) -> PathBuf {
    dir.join("dataset.json")
}

pub fn match_annotation_path(dir: &Path, match_id: &str) -> PathBuf {
    dir.join("matches").join(match_id).join("annotation.json")
}

pub fn frame_image_path(dir: &Path, match_id: &str, frame_index: u32) -> PathBuf {
    dir.join("matches")
        .join(match_id)
        .join("frames")
        .join(format!("f{frame_index:06}.png"))
}

/// Frame images for one match read from a dataset directory.
pub struct DiskFrames<'a> {
    pub dataset_dir: &'a Path,
    pub match_id: &'a str,
}

impl FrameSource for DiskFrames<'_> {
    fn frame_image(&self, frame_index: u32) -> Result<Planes, FeatureError> {
        let path = frame_image_path(self.dataset_dir, self.match_id, frame_index);
        let buf = RgbBuf::load_png(&path).map_err(|e| FeatureError::MissingFrame {
            frame_index,
            detail: e.to_string(),
        })?;
        Ok(buf.to_planes())
    }
}

// ---------------------------------------------------------------------------
// Sample directories (build output)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub match_id: String,
    pub time_s: u32,
    pub label: Label,
    /// Assigned by `train`: "train" / "val" / "test".
    pub split: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplesManifest {
    pub n_frames: usize,
    pub global_size: usize,
    pub crop_size: usize,
    pub samples: Vec<ManifestEntry>,
    pub split_seed: Option<u64>,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn rejection_log_path(dir: &Path) -> PathBuf {
    dir.join("rejections.log")
}

pub fn write_rejection_log(dir: &Path, rejections: &[Rejection]) -> Result<(), StoreError> {
    let mut text = String::new();
    for r in rejections {
        text.push_str(&r.line());
        text.push('\n');
    }
    atomic_write(&rejection_log_path(dir), text.as_bytes())
}

pub fn read_rejection_count(dir: &Path) -> Result<usize, StoreError> {
    let path = rejection_log_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).count())
}

fn planes_from_flat(data: &[f32], side: usize) -> Planes {
    Planes {
        w: side,
        h: side,
        data: data.to_vec(),
    }
}

fn format_rows(values: &[f32], per_row: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(per_row) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

fn parse_rows(text: &str, path: &Path) -> Result<Vec<f32>, StoreError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            out.push(tok.parse::<f32>().map_err(|e| StoreError::Malformed {
                path: path.display().to_string(),
                message: format!("line {}: {e}", ln + 1),
            })?);
        }
    }
    Ok(out)
}

/// Writes one sample directory: metadata, PNG images, and the numeric text
/// arrays (6 decimal places, bit-exact on reload).
pub fn save_sample(dir: &Path, sample: &Sample) -> Result<(), StoreError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(&dir.join("meta.json"), &sample.meta)?;
    let m = &sample.meta;
    let s2 = 3 * m.global_size * m.global_size;
    for t in 0..m.n_frames {
        let img = planes_from_flat(&sample.video[t * s2..(t + 1) * s2], m.global_size);
        img.to_rgb().save_png(&dir.join(format!("global_{t}.png")))?;
    }
    let c2 = 3 * m.crop_size * m.crop_size;
    for t in 0..m.n_frames {
        for p in 0..m.players {
            let at = (t * m.players + p) * c2;
            let img = planes_from_flat(&sample.crops[at..at + c2], m.crop_size);
            img.to_rgb()
                .save_png(&dir.join(format!("crop_{t}_{p}.png")))?;
        }
    }
    atomic_write(
        &dir.join("feet.txt"),
        format_rows(&sample.feet, m.players * 2).as_bytes(),
    )?;
    atomic_write(
        &dir.join("poses.txt"),
        format_rows(&sample.poses, crate::types::KEYPOINT_COUNT * 2).as_bytes(),
    )?;
    Ok(())
}

/// Reads a sample directory back. Image tensors carry the 8-bit
/// quantization of the PNG round trip.
pub fn load_sample(dir: &Path) -> Result<Sample, StoreError> {
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let mut video = Vec::with_capacity(meta.n_frames * 3 * meta.global_size * meta.global_size);
    for t in 0..meta.n_frames {
        let img = RgbBuf::load_png(&dir.join(format!("global_{t}.png")))?.to_planes();
        if img.w != meta.global_size || img.h != meta.global_size {
            return Err(StoreError::Malformed {
                path: dir.display().to_string(),
                message: format!("global_{t}.png is {}x{}", img.w, img.h),
            });
        }
        video.extend_from_slice(&img.data);
    }
    let mut crops =
        Vec::with_capacity(meta.n_frames * meta.players * 3 * meta.crop_size * meta.crop_size);
    for t in 0..meta.n_frames {
        for p in 0..meta.players {
            let img = RgbBuf::load_png(&dir.join(format!("crop_{t}_{p}.png")))?.to_planes();
            if img.w != meta.crop_size || img.h != meta.crop_size {
                return Err(StoreError::Malformed {
                    path: dir.display().to_string(),
                    message: format!("crop_{t}_{p}.png is {}x{}", img.w, img.h),
                });
            }
            crops.extend_from_slice(&img.data);
        }
    }
    let feet_path = dir.join("feet.txt");
    let feet = parse_rows(
        &std::fs::read_to_string(&feet_path).map_err(|e| io_err(&feet_path, e))?,
        &feet_path,
    )?;
    let poses_path = dir.join("poses.txt");
    let poses = parse_rows(
        &std::fs::read_to_string(&poses_path).map_err(|e| io_err(&poses_path, e))?,
        &poses_path,
    )?;
    let expect_feet = meta.n_frames * meta.players * 2;
    let expect_poses = meta.n_frames * meta.players * crate::types::KEYPOINT_COUNT * 2;
    if feet.len() != expect_feet || poses.len() != expect_poses {
        return Err(StoreError::Malformed {
            path: dir.display().to_string(),
            message: format!(
                "numeric arrays have {} feet / {} poses values, expected {expect_feet} / {expect_poses}",
                feet.len(),
                poses.len()
            ),
        });
    }
    Ok(Sample {
        video,
        feet,
        poses,
        crops,
        label: meta.label,
        meta,
    })
}

/// Loads every sample listed in a manifest, in manifest order.
pub fn load_all_samples(samples_dir: &Path, manifest: &SamplesManifest) -> Result<Vec<Sample>, StoreError> {
    manifest
        .samples
        .iter()
        .map(|e| load_sample(&samples_dir.join(&e.dir)))
        .collect()
}

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

/// Written once per command at the end of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub input_hash: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

pub const RUN_MANIFEST_NAME: &str = "run_manifest.json";

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn write_run_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), StoreError> {
    write_json(&dir.join(RUN_MANIFEST_NAME), manifest)
}

/// Appends one line to a log file, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> Result<(), StoreError> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    writeln!(f, "{line}").map_err(|e| io_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PLAYERS;
    use crate::types::KEYPOINT_COUNT;

    fn sample_for_test() -> Sample {
        let (n, s, c) = (2usize, 8usize, 8usize);
        let video: Vec<f32> = (0..n * 3 * s * s).map(|i| (i % 256) as f32 / 255.0).collect();
        let crops: Vec<f32> = (0..n * PLAYERS * 3 * c * c)
            .map(|i| ((i * 7) % 256) as f32 / 255.0)
            .collect();
        let feet: Vec<f32> = (0..n * PLAYERS * 2).map(|i| i as f32 * 0.01).collect();
        let poses: Vec<f32> = (0..n * PLAYERS * KEYPOINT_COUNT * 2)
            .map(|i| (i as f32 * 0.001).fract())
            .collect();
        Sample {
            video,
            feet: feet.clone(),
            poses,
            crops,
            label: Label::Foul,
            meta: SampleMeta {
                match_id: "m1".into(),
                time_s: 8,
                label: Label::Foul,
                n_frames: n,
                global_size: s,
                crop_size: c,
                players: PLAYERS,
                frame_width: 320,
                frame_height: 180,
                frame_offsets: vec![0, 74],
                bboxes: vec![vec![[0.1, 0.2, 0.05, 0.1]; PLAYERS]; n],
                degenerate_crops: vec![vec![false; PLAYERS]; n],
            },
        }
    }

    #[test]
    fn sample_round_trip_preserves_numeric_text_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let sample = sample_for_test();
        save_sample(dir.path(), &sample).unwrap();
        let back = load_sample(dir.path()).unwrap();
        assert_eq!(back.meta, sample.meta);
        assert_eq!(back.label, sample.label);
        // Numeric text arrays: exact at 6 decimals.
        let quant6 = |v: &[f32]| -> Vec<f32> {
            v.iter().map(|x| format!("{x:.6}").parse::<f32>().unwrap()).collect()
        };
        assert_eq!(back.feet, quant6(&sample.feet));
        assert_eq!(back.poses, quant6(&sample.poses));
        // Images: exact under 8-bit quantization (inputs were n/255).
        assert_eq!(back.video, sample.video);
        assert_eq!(back.crops, sample.crops);
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let sample = sample_for_test();
        save_sample(d1.path(), &sample).unwrap();
        save_sample(d2.path(), &sample).unwrap();
        assert_eq!(
            hash_tree(d1.path(), &[]).unwrap(),
            hash_tree(d2.path(), &[]).unwrap()
        );
    }

    #[test]
    fn hash_tree_reacts_to_content_and_respects_excludes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "hello").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "world").unwrap();
        let h1 = hash_tree(dir.path(), &[]).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "world!").unwrap();
        let h2 = hash_tree(dir.path(), &[]).unwrap();
        assert_ne!(h1, h2);
        // Excluding the changed file restores the original digest's stability.
        let h3 = hash_tree(dir.path(), &["b.txt"]).unwrap();
        std::fs::write(dir.path().join("sub/b.txt"), "other").unwrap();
        let h4 = hash_tree(dir.path(), &["b.txt"]).unwrap();
        assert_eq!(h3, h4);
    }

    #[test]
    fn manifest_round_trip_with_split_assignment() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = SamplesManifest {
            n_frames: 4,
            global_size: 16,
            crop_size: 8,
            samples: vec![ManifestEntry {
                dir: "s00000".into(),
                match_id: "m1".into(),
                time_s: 3,
                label: Label::NonFoul,
                split: None,
            }],
            split_seed: None,
        };
        write_json(&manifest_path(dir.path()), &manifest).unwrap();
        let loaded: SamplesManifest = read_json(&manifest_path(dir.path())).unwrap();
        assert!(loaded.samples[0].split.is_none());
        manifest.samples[0].split = Some("train".into());
        manifest.split_seed = Some(7);
        write_json(&manifest_path(dir.path()), &manifest).unwrap();
        let loaded: SamplesManifest = read_json(&manifest_path(dir.path())).unwrap();
        assert_eq!(loaded.samples[0].split.as_deref(), Some("train"));
        assert_eq!(loaded.split_seed, Some(7));
    }

    #[test]
    fn rejection_log_is_one_line_per_event() {
        use crate::ingest::RejectReason;
        let dir = tempfile::tempdir().unwrap();
        let rejections = vec![
            Rejection {
                match_id: "m1".into(),
                time_s: 2,
                reason: RejectReason::InsufficientContext,
            },
            Rejection {
                match_id: "m2".into(),
                time_s: 9,
                reason: RejectReason::NoBall,
            },
        ];
        write_rejection_log(dir.path(), &rejections).unwrap();
        let text = std::fs::read_to_string(rejection_log_path(dir.path())).unwrap();
        assert_eq!(text, "m1\t2\tINSUFFICIENT_CONTEXT\nm2\t9\tNO_BALL\n");
        assert_eq!(read_rejection_count(dir.path()).unwrap(), 2);
    }
}
