//! Converts a track set plus raw frame images into a fixed-shape sample:
//! subsampled global frames, normalized foot positions, padded pose tensors,
//! and per-player bbox crops.

use crate::dataset::TrackSet;
use crate::img::{ImgError, Planes};
use crate::types::{BBox, Label, KEYPOINT_COUNT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("subsample count {n} out of range for {total} frames (need 2 <= n <= total)")]
    BadSubsample { n: usize, total: usize },
    #[error("missing image for frame {frame_index}: {detail}")]
    MissingFrame { frame_index: u32, detail: String },
    #[error("frame {frame_index} image is {got_w}x{got_h}, annotation says {want_w}x{want_h}")]
    FrameSizeMismatch {
        frame_index: u32,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error(transparent)]
    Img(#[from] ImgError),
}

/// Shapes of the model-ready tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Frames subsampled from the input window.
    pub n_frames: usize,
    /// Side of the resized global frame.
    pub global_size: usize,
    /// Side of the per-player bbox crop.
    pub crop_size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_frames: 4,
            global_size: 64,
            crop_size: 224,
        }
    }
}

/// Sample identity plus everything needed to interpret and audit the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub match_id: String,
    pub time_s: u32,
    pub label: Label,
    pub n_frames: usize,
    pub global_size: usize,
    pub crop_size: usize,
    pub players: usize,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Subsampled offsets within the input window.
    pub frame_offsets: Vec<u32>,
    /// Normalized (x, y, w, h) per subsampled frame per player, for overlays.
    pub bboxes: Vec<Vec<[f32; 4]>>,
    /// Crops that came out empty after intersecting with the frame.
    pub degenerate_crops: Vec<Vec<bool>>,
}

/// The model-ready record. Tensors are flat row-major `f32` with values in
/// [0, 1] for images; coordinates are normalized by the frame dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `n_frames * 3 * S * S`
    pub video: Vec<f32>,
    /// `n_frames * players * 2`
    pub feet: Vec<f32>,
    /// `n_frames * players * 17 * 2`, zeros where invisible
    pub poses: Vec<f32>,
    /// `n_frames * players * 3 * C * C`
    pub crops: Vec<f32>,
    pub label: Label,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn n_frames(&self) -> usize {
        self.meta.n_frames
    }

    pub fn players(&self) -> usize {
        self.meta.players
    }

    pub fn video_dims(&self) -> (usize, usize, usize, usize) {
        let s = self.meta.global_size;
        (self.meta.n_frames, 3, s, s)
    }

    pub fn crops_dims(&self) -> (usize, usize, usize, usize, usize) {
        let c = self.meta.crop_size;
        (self.meta.n_frames, self.meta.players, 3, c, c)
    }
}

/// Provides the raw frame image for an absolute frame index.
pub trait FrameSource {
    fn frame_image(&self, frame_index: u32) -> Result<Planes, FeatureError>;
}

/// Evenly spaced subsample offsets into a window of `total` frames.
///
/// The (75, 4) case is pinned to frames {1, 25, 50, 75} in 1-based counting;
/// all other cases use rounded linear spacing including both endpoints.
pub fn subsample_indices(total: usize, n: usize) -> Result<Vec<usize>, FeatureError> {
    if n < 2 || n > total {
        return Err(FeatureError::BadSubsample { n, total });
    }
    if total == 75 && n == 4 {
        return Ok(vec![0, 24, 49, 74]);
    }
    let step = (total - 1) as f64 / (n - 1) as f64;
    Ok((0..n).map(|i| (i as f64 * step).round() as usize).collect())
}

/// Crops `bbox` out of the frame and resizes it to `size` x `size`.
///
/// The box is intersected with the frame bounds first; an empty intersection
/// (fully out of frame or zero area) yields an all-zeros image flagged
/// degenerate rather than an error.
pub fn crop_player(frame: &Planes, bbox: &BBox, size: usize) -> (Planes, bool) {
    let x0 = bbox.x.floor().max(0.0) as usize;
    let y0 = bbox.y.floor().max(0.0) as usize;
    let x1 = ((bbox.x + bbox.w).ceil().max(0.0) as usize).min(frame.w);
    let y1 = ((bbox.y + bbox.h).ceil().max(0.0) as usize).min(frame.h);
    if x0 >= x1 || y0 >= y1 {
        return (Planes::zeros(size, size), true);
    }
    let region = frame.region(x0, y0, x1, y1);
    let resized = region
        .resize(size, size)
        .expect("non-empty region resizes cleanly");
    (resized, false)
}

/// Builds the four-tensor sample for one track set.
///
/// Player channel order is the anchor-selection order, fixed across frames,
/// so channel `p` always refers to the same tracked player.
pub fn build_sample(
    tracks: &TrackSet,
    frames: &dyn FrameSource,
    cfg: &FeatureConfig,
) -> Result<Sample, FeatureError> {
    let total = tracks.window.input_len as usize;
    let offsets = subsample_indices(total, cfg.n_frames)?;
    let players = tracks.players.len();
    let (s, c) = (cfg.global_size, cfg.crop_size);
    let fw = tracks.frame_width as f64;
    let fh = tracks.frame_height as f64;

    let mut video = Vec::with_capacity(cfg.n_frames * 3 * s * s);
    let mut feet = Vec::with_capacity(cfg.n_frames * players * 2);
    let mut poses = Vec::with_capacity(cfg.n_frames * players * KEYPOINT_COUNT * 2);
    let mut crops = Vec::with_capacity(cfg.n_frames * players * 3 * c * c);
    let mut meta_bboxes = Vec::with_capacity(cfg.n_frames);
    let mut meta_degenerate = Vec::with_capacity(cfg.n_frames);

    for &offset in &offsets {
        let frame_index = tracks.window.start_frame + offset as u32;
        let img = frames.frame_image(frame_index)?;
        if img.w != tracks.frame_width as usize || img.h != tracks.frame_height as usize {
            return Err(FeatureError::FrameSizeMismatch {
                frame_index,
                got_w: img.w,
                got_h: img.h,
                want_w: tracks.frame_width as usize,
                want_h: tracks.frame_height as usize,
            });
        }
        video.extend_from_slice(&img.resize(s, s)?.data);

        let mut frame_boxes = Vec::with_capacity(players);
        let mut frame_degenerate = Vec::with_capacity(players);
        for track in &tracks.players {
            let entry = &track.entries[offset];
            let bbox = &entry.bbox;
            let (u, v) = bbox
                .foot_position(fw, fh)
                .expect("frame dims validated at ingest");
            feet.push(u as f32);
            feet.push(v as f32);
            for kp in entry.pose.points() {
                if kp.visible {
                    poses.push((kp.x / fw) as f32);
                    poses.push((kp.y / fh) as f32);
                } else {
                    poses.push(0.0);
                    poses.push(0.0);
                }
            }
            let (crop, degenerate) = crop_player(&img, bbox, c);
            crops.extend_from_slice(&crop.data);
            frame_degenerate.push(degenerate);
            frame_boxes.push([
                (bbox.x / fw) as f32,
                (bbox.y / fh) as f32,
                (bbox.w / fw) as f32,
                (bbox.h / fh) as f32,
            ]);
        }
        meta_bboxes.push(frame_boxes);
        meta_degenerate.push(frame_degenerate);
    }

    Ok(Sample {
        video,
        feet,
        poses,
        crops,
        label: tracks.label,
        meta: SampleMeta {
            match_id: tracks.match_id.clone(),
            time_s: tracks.time_s,
            label: tracks.label,
            n_frames: cfg.n_frames,
            global_size: s,
            crop_size: c,
            players,
            frame_width: tracks.frame_width,
            frame_height: tracks.frame_height,
            frame_offsets: offsets.iter().map(|&o| o as u32).collect(),
            bboxes: meta_bboxes,
            degenerate_crops: meta_degenerate,
        },
    })
}
