//! Turns an eligible event into a track set: extract the analysis window,
//! select the players nearest the ball at the anchor frame, and backtrack
//! their boxes and poses to the window start.

use crate::ingest::RejectReason;
use crate::types::{
    euclidean, BBox, EventAnnotation, FrameAnnotation, Label, MatchAnnotation, PoseKeypoints,
};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("no ball annotation on the anchor frame")]
    NoBall,
    #[error("analysis window would start before frame 0 (event at t={time_s}s)")]
    InsufficientContext { time_s: u32 },
    #[error("anchor frame has {got} players, need {need}")]
    TooFewPlayers { got: usize, need: usize },
    #[error("track for player {player_ref} held on {held} of {total} frames")]
    LostTrack {
        player_ref: u32,
        held: usize,
        total: usize,
    },
}

impl DatasetError {
    pub fn reject_reason(&self) -> RejectReason {
        match self {
            DatasetError::NoBall => RejectReason::NoBall,
            DatasetError::InsufficientContext { .. } => RejectReason::InsufficientContext,
            DatasetError::TooFewPlayers { .. } => RejectReason::TooFewPlayers,
            DatasetError::LostTrack { .. } => RejectReason::LostTrack,
        }
    }
}

/// Knobs for selection and backtracking.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    /// Number of players selected at the anchor frame.
    pub player_count: usize,
    /// Matching radius as a fraction of the frame width.
    pub radius_frac: f64,
    /// A track held on more than this fraction of the window is a lost track.
    pub max_held_frac: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            player_count: 5,
            radius_frac: 0.1,
            max_held_frac: 0.5,
        }
    }
}

/// The analysis interval: 3 seconds of input frames, then a 1-second horizon.
/// The anchor frame (the annotated event second) is the first horizon frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipWindow {
    pub start_frame: u32,
    pub input_len: u32,
    pub horizon_len: u32,
}

impl ClipWindow {
    pub fn input_frames(&self) -> std::ops::Range<u32> {
        self.start_frame..self.start_frame + self.input_len
    }

    pub fn horizon_frames(&self) -> std::ops::Range<u32> {
        let a = self.anchor();
        a..a + self.horizon_len
    }

    /// Frame index of the annotated event second.
    pub fn anchor(&self) -> u32 {
        self.start_frame + self.input_len
    }
}

/// One frame of one tracked player.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub frame_index: u32,
    pub bbox: BBox,
    pub pose: PoseKeypoints,
    /// True when no candidate matched and the previous bbox was carried over.
    pub held: bool,
}

/// One selected player followed backward through the input window,
/// stored in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerTrack {
    pub player_ref: u32,
    pub entries: Vec<TrackEntry>,
}

impl PlayerTrack {
    pub fn held_count(&self) -> usize {
        self.entries.iter().filter(|e| e.held).count()
    }
}

/// The selected players' tracks over the input window, plus the label.
/// Track order is the anchor-selection order (ascending distance to ball).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub match_id: String,
    pub time_s: u32,
    pub frame_width: u32,
    pub frame_height: u32,
    pub window: ClipWindow,
    pub players: Vec<PlayerTrack>,
    pub label: Label,
}

/// Computes the analysis window for an event: input covers the 3 seconds
/// before the annotated second, the horizon covers the second after.
pub fn extract_window(event: &EventAnnotation, fps: u32) -> Result<ClipWindow, DatasetError> {
    if event.time_s < 3 {
        return Err(DatasetError::InsufficientContext {
            time_s: event.time_s,
        });
    }
    Ok(ClipWindow {
        start_frame: (event.time_s - 3) * fps,
        input_len: 3 * fps,
        horizon_len: fps,
    })
}

/// Selects the `k` players closest to the ball on the anchor frame,
/// ascending by distance, ties broken by smaller `player_ref`.
pub fn select_anchor_players(
    frame: &FrameAnnotation,
    k: usize,
) -> Result<Vec<u32>, DatasetError> {
    let ball = frame.ball.as_ref().ok_or(DatasetError::NoBall)?;
    if frame.players.len() < k {
        return Err(DatasetError::TooFewPlayers {
            got: frame.players.len(),
            need: k,
        });
    }
    let ball_center = ball.center();
    let mut ranked: Vec<(f64, u32)> = frame
        .players
        .iter()
        .map(|p| (euclidean(p.bbox.center(), ball_center), p.player_ref))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, r)| r).collect())
}

/// Greedy nearest-center assignment: all (track, candidate) pairs are swept
/// in ascending distance order (ties by track index, then candidate index);
/// each side is claimed at most once, pairs farther than `radius` never match.
///
/// Returns, per track, the index of the claimed candidate.
pub fn greedy_assign(
    track_centers: &[(f64, f64)],
    candidate_centers: &[(f64, f64)],
    radius: f64,
) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (t, tc) in track_centers.iter().enumerate() {
        for (c, cc) in candidate_centers.iter().enumerate() {
            let d = euclidean(*tc, *cc);
            if d <= radius {
                pairs.push((d, t, c));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assignment = vec![None; track_centers.len()];
    let mut claimed = vec![false; candidate_centers.len()];
    for (_, t, c) in pairs {
        if assignment[t].is_none() && !claimed[c] {
            assignment[t] = Some(c);
            claimed[c] = true;
        }
    }
    assignment
}

/// A track's state at the anchor frame: the seed for backtracking.
#[derive(Debug, Clone)]
pub struct AnchorTrack {
    pub player_ref: u32,
    pub bbox: BBox,
    pub pose: PoseKeypoints,
}

/// Walks from `anchor - 1` down to the window start, matching each track to
/// the nearest unclaimed candidate bbox per frame. A track with no candidate
/// within the radius keeps its previous bbox and pose with `held = true`.
/// Entries come back in chronological order covering exactly the input window.
pub fn backtrack(
    seeds: &[AnchorTrack],
    m: &MatchAnnotation,
    window: &ClipWindow,
    cfg: &DatasetConfig,
) -> Vec<PlayerTrack> {
    let radius = cfg.radius_frac * m.width as f64;
    let mut current: Vec<(BBox, PoseKeypoints)> =
        seeds.iter().map(|s| (s.bbox, s.pose.clone())).collect();
    let mut reversed: Vec<Vec<TrackEntry>> = vec![Vec::new(); seeds.len()];

    for frame_index in window.input_frames().rev() {
        let empty: &[crate::types::PlayerDetection] = &[];
        let candidates = m.frame(frame_index).map(|f| f.players.as_slice()).unwrap_or(empty);
        let track_centers: Vec<(f64, f64)> = current.iter().map(|(b, _)| b.center()).collect();
        let candidate_centers: Vec<(f64, f64)> =
            candidates.iter().map(|p| p.bbox.center()).collect();
        let assignment = greedy_assign(&track_centers, &candidate_centers, radius);
        for (t, assigned) in assignment.iter().enumerate() {
            match assigned {
                Some(c) => {
                    let cand = &candidates[*c];
                    let pose = cand
                        .keypoints
                        .clone()
                        .unwrap_or_else(PoseKeypoints::all_invisible);
                    current[t] = (cand.bbox, pose.clone());
                    reversed[t].push(TrackEntry {
                        frame_index,
                        bbox: cand.bbox,
                        pose,
                        held: false,
                    });
                }
                None => {
                    let (bbox, pose) = current[t].clone();
                    reversed[t].push(TrackEntry {
                        frame_index,
                        bbox,
                        pose,
                        held: true,
                    });
                }
            }
        }
    }

    seeds
        .iter()
        .zip(reversed)
        .map(|(seed, mut entries)| {
            entries.reverse();
            PlayerTrack {
                player_ref: seed.player_ref,
                entries,
            }
        })
        .collect()
}

/// Full composition: window extraction, anchor selection, backtracking,
/// and the lost-track rejection check.
pub fn build_trackset(
    m: &MatchAnnotation,
    event: &EventAnnotation,
    label: Label,
    cfg: &DatasetConfig,
) -> Result<TrackSet, DatasetError> {
    let window = extract_window(event, m.fps)?;
    let anchor_frame = m.frame(window.anchor()).ok_or(DatasetError::NoBall)?;
    let selected = select_anchor_players(anchor_frame, cfg.player_count)?;
    let seeds: Vec<AnchorTrack> = selected
        .iter()
        .map(|&player_ref| {
            let p = anchor_frame
                .players
                .iter()
                .find(|p| p.player_ref == player_ref)
                .expect("selected player exists on anchor frame");
            AnchorTrack {
                player_ref,
                bbox: p.bbox,
                pose: p
                    .keypoints
                    .clone()
                    .unwrap_or_else(PoseKeypoints::all_invisible),
            }
        })
        .collect();
    let players = backtrack(&seeds, m, &window, cfg);
    let total = window.input_len as usize;
    for track in &players {
        let held = track.held_count();
        if held as f64 > cfg.max_held_frac * total as f64 {
            return Err(DatasetError::LostTrack {
                player_ref: track.player_ref,
                held,
                total,
            });
        }
    }
    Ok(TrackSet {
        match_id: m.match_id.clone(),
        time_s: event.time_s,
        frame_width: m.width,
        frame_height: m.height,
        window,
        players,
        label,
    })
}
