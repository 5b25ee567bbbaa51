//! Desk-scale synthetic match generator with a planted, rule-defined foul
//! signal.
//!
//! Each event gets its own trajectory segment anchored at the annotated
//! second: players follow smoothed random walks around ring positions near
//! the ball, far players stay far. For a foul, two designated actors converge
//! until their boxes overlap while their leg keypoints swing hard; for a
//! non-foul, the near group keeps a separation floor and low-amplitude
//! keypoint jitter. Frames render as a pure function of the annotation, so
//! images can be produced lazily without touching disk.

use crate::dataset::select_anchor_players;
use crate::features::{FeatureError, FrameSource};
use crate::img::{Planes, RgbBuf};
use crate::ingest::DEFAULT_NON_FOUL_TAGS;
use crate::types::{
    euclidean, BBox, EventAnnotation, FrameAnnotation, Keypoint, Label, MatchAnnotation,
    PlayerDetection, PoseKeypoints, KEYPOINT_COUNT, LEFT_ANKLE, LEFT_KNEE, RIGHT_ANKLE, RIGHT_KNEE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("signal_strength must be in (0, 1]; at 0 the planted labels would be noise")]
    NoSignal,
    #[error("invalid synth config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_events: usize,
    pub foul_fraction: f64,
    pub frame_width: u32,
    pub frame_height: u32,
    pub fps: u32,
    pub players_per_frame: usize,
    /// In (0, 1]; stronger means wider margins around the label thresholds.
    pub signal_strength: f64,
    /// Remove this player_ref for this many consecutive mid-window frames.
    pub gap_injection: Option<(u32, u32)>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_events: 10,
            foul_fraction: 0.5,
            frame_width: 640,
            frame_height: 360,
            fps: 25,
            players_per_frame: 8,
            signal_strength: 0.8,
            gap_injection: None,
            seed: 0,
        }
    }
}

/// Seconds between consecutive events in one match; first event at t = 3.
const EVENT_SPACING_S: u32 = 5;
/// Length of the signal window: the final frames of the input interval.
const SIGNAL_FRAMES: u32 = 15;

/// Center-distance below which a near pair counts as overlapping.
pub fn overlap_threshold(frame_width: u32) -> f64 {
    20.0 * frame_width as f64 / 640.0
}

/// Per-frame ankle displacement above which a leg swing counts as a kick.
pub fn swing_threshold(frame_width: u32) -> f64 {
    6.0 * frame_width as f64 / 640.0
}

fn scale(frame_width: u32) -> f64 {
    frame_width as f64 / 640.0
}

/// Base player box size in pixels before per-player jitter.
pub fn player_box_size(frame_width: u32) -> (f64, f64) {
    (22.0 * scale(frame_width), 44.0 * scale(frame_width))
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone)]
pub struct SynthMatch {
    pub annotation: MatchAnnotation,
    /// Event order matches `annotation.events`.
    pub planted: Vec<Label>,
}

struct Walk {
    positions: Vec<(f64, f64)>, // indexed by offset within the segment
}

/// Time-reversed smoothed random walk pinned at `anchor_pos` for
/// `back_len` steps, plus `fwd_len` forward steps.
fn anchored_walk(
    rng: &mut ChaCha20Rng,
    anchor_pos: (f64, f64),
    back_len: usize,
    fwd_len: usize,
    step_sigma: f64,
    bounds: (f64, f64, f64, f64),
) -> Walk {
    let (x0, y0, x1, y1) = bounds;
    let clamp = |p: (f64, f64)| (p.0.clamp(x0, x1), p.1.clamp(y0, y1));
    let mut back = Vec::with_capacity(back_len + 1);
    back.push(clamp(anchor_pos));
    let mut v = (
        rng.gen_range(-step_sigma..step_sigma),
        rng.gen_range(-step_sigma..step_sigma),
    );
    for _ in 0..back_len {
        v = (
            0.85 * v.0 + rng.gen_range(-step_sigma..step_sigma),
            0.85 * v.1 + rng.gen_range(-step_sigma..step_sigma),
        );
        let prev = *back.last().unwrap();
        back.push(clamp((prev.0 + v.0, prev.1 + v.1)));
    }
    back.reverse(); // now chronological: [anchor - back_len .. anchor]
    let mut positions = back;
    let mut v = (
        rng.gen_range(-step_sigma..step_sigma),
        rng.gen_range(-step_sigma..step_sigma),
    );
    for _ in 0..fwd_len {
        v = (
            0.85 * v.0 + rng.gen_range(-step_sigma..step_sigma),
            0.85 * v.1 + rng.gen_range(-step_sigma..step_sigma),
        );
        let prev = *positions.last().unwrap();
        positions.push(clamp((prev.0 + v.0, prev.1 + v.1)));
    }
    Walk { positions }
}

/// Generates one match containing `cfg.n_events` events at 5-second spacing.
pub fn generate_match(cfg: &SynthConfig, match_id: &str) -> Result<SynthMatch, SynthError> {
    if cfg.signal_strength <= 0.0 {
        return Err(SynthError::NoSignal);
    }
    if cfg.signal_strength > 1.0 || !(0.0..=1.0).contains(&cfg.foul_fraction) {
        return Err(SynthError::BadConfig(
            "signal_strength and foul_fraction must be in [0, 1]".into(),
        ));
    }
    if cfg.n_events == 0 || cfg.fps == 0 || cfg.frame_width < 64 || cfg.frame_height < 64 {
        return Err(SynthError::BadConfig(
            "need n_events > 0, fps > 0 and at least a 64x64 frame".into(),
        ));
    }
    if let Some((_, len)) = cfg.gap_injection {
        if len > 35 {
            return Err(SynthError::BadConfig(
                "gap length above 35 frames would reach into the signal window".into(),
            ));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let s = cfg.signal_strength;
    let w = cfg.frame_width as f64;
    let h = cfg.frame_height as f64;
    let sc = scale(cfg.frame_width);
    let (pw_base, ph_base) = player_box_size(cfg.frame_width);
    let overlap = overlap_threshold(cfg.frame_width);
    let swing = swing_threshold(cfg.frame_width);
    // Signal geometry, margins widening with signal strength.
    let contact_dist = overlap * (1.0 - 0.9 * s);
    let separation = overlap * (1.2 + 1.6 * s);
    let swing_amp = swing * (0.5 + 3.0 * s);
    let jitter_amp = swing * (0.8 - 0.6 * s);

    // Deterministic label multiset: round(n * fraction) fouls, shuffled.
    let n_fouls = (cfg.n_events as f64 * cfg.foul_fraction).round() as usize;
    let mut labels: Vec<Label> = (0..cfg.n_events)
        .map(|i| if i < n_fouls { Label::Foul } else { Label::NonFoul })
        .collect();
    use rand::seq::SliceRandom;
    labels.shuffle(&mut rng);

    let n_players = cfg.players_per_frame;
    let near_count = n_players.min(5);
    let fps = cfg.fps;
    let back_len = (3 * fps) as usize; // window + anchor
    let fwd_len = fps as usize;

    let mut frames: BTreeMap<u32, FrameAnnotation> = BTreeMap::new();
    let mut events = Vec::new();
    let mut planted = Vec::new();
    let mut non_foul_tag = 0usize;

    for (ei, &label) in labels.iter().enumerate() {
        let time_s = 3 + EVENT_SPACING_S * ei as u32;
        let anchor = time_s * fps;
        let seg_start = anchor - back_len as u32;

        // Anchor layout: ball near the middle, near ring around it, far
        // players pushed outwards.
        let ball_anchor = (
            w / 2.0 + rng.gen_range(-40.0..40.0) * sc,
            h / 2.0 + rng.gen_range(-30.0..30.0) * sc,
        );
        let margin = 1.2 * ph_base;
        let bounds = (margin, margin, w - margin, h - margin);
        let ring_radius = if label == Label::Foul {
            (35.0 * sc, 65.0 * sc)
        } else {
            (45.0 * sc, 85.0 * sc)
        };
        let mut anchor_pos: Vec<(f64, f64)> = Vec::with_capacity(n_players);
        for p in 0..n_players {
            if p < near_count {
                let angle = (p as f64 / near_count as f64) * std::f64::consts::TAU
                    + rng.gen_range(-0.25..0.25);
                let r = rng.gen_range(ring_radius.0..ring_radius.1);
                anchor_pos.push((
                    (ball_anchor.0 + r * angle.cos()).clamp(bounds.0, bounds.2),
                    (ball_anchor.1 + r * angle.sin()).clamp(bounds.1, bounds.3),
                ));
            } else {
                // Far players: pushed to beyond twice the far selection margin.
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = rng.gen_range(190.0 * sc..260.0 * sc);
                anchor_pos.push((
                    (ball_anchor.0 + r * angle.cos()).clamp(bounds.0, bounds.2),
                    (ball_anchor.1 + r * angle.sin()).clamp(bounds.1, bounds.3),
                ));
            }
        }

        let step_sigma = 1.3 * sc;
        let mut walks: Vec<Walk> = anchor_pos
            .iter()
            .map(|&p| anchored_walk(&mut rng, p, back_len, fwd_len, step_sigma, bounds))
            .collect();
        let ball_walk = anchored_walk(&mut rng, ball_anchor, back_len, fwd_len, 0.9 * sc, bounds);

        // Per-event fixed box sizes.
        let sizes: Vec<(f64, f64)> = (0..n_players)
            .map(|_| {
                (
                    pw_base * rng.gen_range(0.9..1.1),
                    ph_base * rng.gen_range(0.92..1.08),
                )
            })
            .collect();

        let signal_from = back_len - SIGNAL_FRAMES as usize; // offset of anchor-15

        if label == Label::Foul && near_count >= 2 {
            // Actors 0 and 1 converge linearly onto a contact point.
            let contact = (
                (ball_anchor.0 + rng.gen_range(-10.0..10.0) * sc).clamp(bounds.0, bounds.2),
                (ball_anchor.1 + rng.gen_range(-8.0..8.0) * sc).clamp(bounds.1, bounds.3),
            );
            let left = (contact.0 - contact_dist / 2.0, contact.1);
            let right = (contact.0 + contact_dist / 2.0, contact.1);
            for (actor, target) in [(0usize, left), (1usize, right)] {
                let from = walks[actor].positions[signal_from - 1];
                for (k, off) in (signal_from..=back_len).enumerate() {
                    let u = (k + 1) as f64 / SIGNAL_FRAMES as f64;
                    let u = u.min(1.0);
                    walks[actor].positions[off] = (
                        from.0 + (target.0 - from.0) * u,
                        from.1 + (target.1 - from.1) * u,
                    );
                }
            }
        }
        if label == Label::NonFoul {
            // Separation floor among the near group over the signal window.
            for off in signal_from..=back_len {
                for _ in 0..6 {
                    let mut moved = false;
                    for i in 0..near_count {
                        for j in (i + 1)..near_count {
                            let a = walks[i].positions[off];
                            let b = walks[j].positions[off];
                            let d = euclidean(a, b);
                            if d < separation {
                                let push = (separation - d) / 2.0 + 0.5;
                                let (ux, uy) = if d > 1e-9 {
                                    ((b.0 - a.0) / d, (b.1 - a.1) / d)
                                } else {
                                    (1.0, 0.0)
                                };
                                walks[i].positions[off] = (
                                    (a.0 - ux * push).clamp(bounds.0, bounds.2),
                                    (a.1 - uy * push).clamp(bounds.1, bounds.3),
                                );
                                walks[j].positions[off] = (
                                    (b.0 + ux * push).clamp(bounds.0, bounds.2),
                                    (b.1 + uy * push).clamp(bounds.1, bounds.3),
                                );
                                moved = true;
                            }
                        }
                    }
                    if !moved {
                        break;
                    }
                }
            }
        }

        // Gap placement: mid-window, always ending before the signal window.
        let gap_range = cfg.gap_injection.map(|(gref, glen)| {
            let gap_start = seg_start + 20;
            (gref, gap_start, gap_start + glen) // [start, end)
        });

        // Emit the segment's frames.
        for off in 0..=(back_len + fwd_len) {
            let frame_index = seg_start + off as u32;
            let in_signal = off >= signal_from && off < back_len;
            let mut players = Vec::with_capacity(n_players);
            for p in 0..n_players {
                if let Some((gref, gs, ge)) = gap_range {
                    if p as u32 == gref && frame_index >= gs && frame_index < ge {
                        continue;
                    }
                }
                let (px, py) = walks[p].positions[off];
                let (pw, ph) = sizes[p];
                let bbox = BBox::new(
                    round2(px - pw / 2.0),
                    round2(py - ph / 2.0),
                    round2(pw),
                    round2(ph),
                )
                .expect("generated box is valid");
                let is_actor = label == Label::Foul && p < 2 && near_count >= 2;
                // Leg swing: the square-phase cycle moves the ankle by the
                // full amplitude every frame and peaks at the window's end.
                let swing_offset = if is_actor && (in_signal || off == back_len) {
                    let phase = (off as i64 - (back_len as i64 - 1) + 1).rem_euclid(4);
                    match phase {
                        1 => swing_amp,
                        3 => -swing_amp,
                        _ => 0.0,
                    }
                } else {
                    0.0
                };
                let pose = make_pose(
                    &mut rng,
                    &bbox,
                    jitter_amp,
                    swing_offset,
                    is_actor && in_signal,
                );
                players.push(PlayerDetection {
                    player_ref: p as u32,
                    bbox,
                    keypoints: Some(pose),
                });
            }
            let (bx, by) = ball_walk.positions[off];
            let ball_r = 5.0 * sc;
            let ball = BBox::new(
                round2(bx - ball_r),
                round2(by - ball_r),
                round2(2.0 * ball_r),
                round2(2.0 * ball_r),
            )
            .expect("ball box valid");
            frames.insert(
                frame_index,
                FrameAnnotation {
                    index: frame_index,
                    ball: Some(ball),
                    players,
                },
            );
        }

        let tag = if label == Label::Foul {
            "Foul".to_string()
        } else {
            let t = DEFAULT_NON_FOUL_TAGS[non_foul_tag % DEFAULT_NON_FOUL_TAGS.len()].to_string();
            non_foul_tag += 1;
            t
        };
        events.push(EventAnnotation { label: tag, time_s });
        planted.push(label);
    }

    // Idle frames between segments hold the previous annotation.
    let last_index = *frames.keys().last().unwrap();
    let mut filled = Vec::with_capacity(last_index as usize + 1);
    let mut prev: Option<FrameAnnotation> = None;
    for idx in 0..=last_index {
        match frames.remove(&idx) {
            Some(f) => {
                prev = Some(f.clone());
                filled.push(f);
            }
            None => {
                let mut f = prev.clone().expect("first frame exists");
                f.index = idx;
                filled.push(f);
            }
        }
    }

    Ok(SynthMatch {
        annotation: MatchAnnotation {
            match_id: match_id.to_string(),
            fps,
            width: cfg.frame_width,
            height: cfg.frame_height,
            events,
            frames: filled,
        },
        planted,
    })
}

/// Skeleton joints proportional to the box, with jitter; `swing_offset`
/// displaces knees and ankles horizontally. Actor legs are always visible.
fn make_pose(
    rng: &mut ChaCha20Rng,
    bbox: &BBox,
    jitter_amp: f64,
    swing_offset: f64,
    force_legs_visible: bool,
) -> PoseKeypoints {
    const LAYOUT: [(f64, f64); KEYPOINT_COUNT] = [
        (0.50, 0.08), // nose
        (0.44, 0.06),
        (0.56, 0.06), // eyes
        (0.40, 0.08),
        (0.60, 0.08), // ears
        (0.30, 0.25),
        (0.70, 0.25), // shoulders
        (0.22, 0.42),
        (0.78, 0.42), // elbows
        (0.18, 0.55),
        (0.82, 0.55), // wrists
        (0.35, 0.55),
        (0.65, 0.55), // hips
        (0.35, 0.75),
        (0.65, 0.75), // knees
        (0.35, 0.95),
        (0.65, 0.95), // ankles
    ];
    let mut pts = Vec::with_capacity(KEYPOINT_COUNT);
    for (i, (fx, fy)) in LAYOUT.iter().enumerate() {
        let mut x = bbox.x + fx * bbox.w + rng.gen_range(-jitter_amp..jitter_amp.max(1e-9));
        let y = bbox.y + fy * bbox.h + rng.gen_range(-jitter_amp..jitter_amp.max(1e-9));
        let is_leg = matches!(i, LEFT_KNEE | RIGHT_KNEE | LEFT_ANKLE | RIGHT_ANKLE);
        if is_leg {
            let factor = if matches!(i, LEFT_KNEE | RIGHT_KNEE) { 0.6 } else { 1.0 };
            x += swing_offset * factor;
        }
        let visible = if is_leg && force_legs_visible {
            true
        } else {
            rng.gen_range(0.0..1.0f64) < 0.95
        };
        pts.push(Keypoint {
            x: round2(x),
            y: round2(y),
            visible,
        });
    }
    PoseKeypoints::new(pts).expect("17 joints")
}

/// Rule-based re-derivation of an event's label from the annotation alone:
/// foul iff, within the signal window, some near-ball pair sits closer than
/// the overlap threshold while either of the two swings an ankle faster than
/// the swing threshold in that same frame.
pub fn oracle_label(m: &MatchAnnotation, event: &EventAnnotation) -> Label {
    let anchor = event.time_s * m.fps;
    let overlap = overlap_threshold(m.width);
    let swing = swing_threshold(m.width);
    let anchor_frame = match m.frame(anchor) {
        Some(f) => f,
        None => return Label::NonFoul,
    };
    let near = match select_anchor_players(anchor_frame, 5.min(anchor_frame.players.len())) {
        Ok(refs) => refs,
        Err(_) => return Label::NonFoul,
    };

    let ankle_step = |player_ref: u32, frame_index: u32| -> f64 {
        let (Some(cur), Some(prev)) = (m.frame(frame_index), m.frame(frame_index - 1)) else {
            return 0.0;
        };
        let find = |f: &FrameAnnotation| {
            f.players
                .iter()
                .find(|p| p.player_ref == player_ref)
                .and_then(|p| p.keypoints.clone())
        };
        let (Some(kc), Some(kp)) = (find(cur), find(prev)) else {
            return 0.0;
        };
        let mut best = 0.0f64;
        for idx in [LEFT_ANKLE, RIGHT_ANKLE] {
            let a = kc.points()[idx];
            let b = kp.points()[idx];
            if a.visible && b.visible {
                best = best.max(euclidean((a.x, a.y), (b.x, b.y)));
            }
        }
        best
    };

    for frame_index in (anchor - SIGNAL_FRAMES)..anchor {
        let Some(frame) = m.frame(frame_index) else {
            continue;
        };
        let pos: Vec<(u32, (f64, f64))> = frame
            .players
            .iter()
            .filter(|p| near.contains(&p.player_ref))
            .map(|p| (p.player_ref, p.bbox.center()))
            .collect();
        for i in 0..pos.len() {
            for j in (i + 1)..pos.len() {
                if euclidean(pos[i].1, pos[j].1) < overlap {
                    let si = ankle_step(pos[i].0, frame_index);
                    let sj = ankle_step(pos[j].0, frame_index);
                    if si > swing || sj > swing {
                        return Label::Foul;
                    }
                }
            }
        }
    }
    Label::NonFoul
}

/// Player rectangle palette; color is fixed per player_ref.
pub const PLAYER_PALETTE: [[u8; 3]; 16] = [
    [220, 40, 40],
    [240, 200, 40],
    [60, 120, 240],
    [240, 120, 40],
    [160, 60, 220],
    [40, 200, 200],
    [240, 80, 160],
    [140, 220, 60],
    [90, 90, 240],
    [220, 220, 220],
    [160, 120, 60],
    [60, 200, 120],
    [200, 60, 100],
    [100, 160, 220],
    [230, 160, 200],
    [120, 120, 120],
];

const FIELD_GREEN: [u8; 3] = [30, 140, 45];

/// Renders one frame of a match: flat green field, one solid rectangle per
/// player, a white disc for the ball. Pure function of the annotation.
pub fn render_frame(m: &MatchAnnotation, frame_index: u32) -> RgbBuf {
    let mut img = RgbBuf::filled(m.width as usize, m.height as usize, FIELD_GREEN);
    if let Some(frame) = m.frame(frame_index) {
        for p in &frame.players {
            let color = PLAYER_PALETTE[(p.player_ref as usize) % PLAYER_PALETTE.len()];
            img.fill_rect(p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h, color);
        }
        if let Some(ball) = &frame.ball {
            let (cx, cy) = ball.center();
            img.fill_disc(cx, cy, ball.w / 2.0, [255, 255, 255]);
        }
    }
    img
}

/// Lazily renders frames straight from the annotation; used when building
/// samples in memory without PNG round trips.
pub struct RenderedFrames<'a>(pub &'a MatchAnnotation);

impl FrameSource for RenderedFrames<'_> {
    fn frame_image(&self, frame_index: u32) -> Result<Planes, FeatureError> {
        if self.0.frame(frame_index).is_none() {
            return Err(FeatureError::MissingFrame {
                frame_index,
                detail: format!("match {} has no such frame", self.0.match_id),
            });
        }
        Ok(render_frame(self.0, frame_index).to_planes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_trackset, DatasetConfig, DatasetError};
    use crate::features::{build_sample, subsample_indices, FeatureConfig};
    use crate::ingest::{eligible_events, parse_match_str, LabelRules};

    fn s08(n_events: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_events,
            seed,
            frame_width: 320,
            frame_height: 180,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_signal_strength_is_refused() {
        let cfg = SynthConfig {
            signal_strength: 0.0,
            ..SynthConfig::default()
        };
        assert_eq!(generate_match(&cfg, "m").unwrap_err(), SynthError::NoSignal);
    }

    #[test]
    fn planted_labels_agree_with_the_oracle() {
        let mut checked = 0;
        for seed in 0..12 {
            let sm = generate_match(&s08(10, seed), &format!("m{seed}")).unwrap();
            for (event, planted) in sm.annotation.events.iter().zip(&sm.planted) {
                assert_eq!(
                    oracle_label(&sm.annotation, event),
                    *planted,
                    "seed {seed} event t={}",
                    event.time_s
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 120);
    }

    #[test]
    fn same_seed_gives_bitwise_identical_annotations() {
        let a = generate_match(&s08(4, 9), "m").unwrap();
        let b = generate_match(&s08(4, 9), "m").unwrap();
        let ja = serde_json::to_string(&a.annotation).unwrap();
        let jb = serde_json::to_string(&b.annotation).unwrap();
        assert_eq!(ja, jb);
        let c = generate_match(&s08(4, 10), "m").unwrap();
        assert_ne!(ja, serde_json::to_string(&c.annotation).unwrap());
    }

    #[test]
    fn generated_matches_round_trip_through_ingest() {
        let sm = generate_match(&s08(6, 3), "m3").unwrap();
        let text = serde_json::to_string(&sm.annotation).unwrap();
        let parsed = parse_match_str(&text, "synth").unwrap();
        assert_eq!(parsed, sm.annotation);
        let (kept, rejected) = eligible_events(&parsed, &LabelRules::default());
        assert_eq!(kept.len(), 6, "rejections: {rejected:?}");
        for ((event, label), planted) in kept.iter().zip(&sm.planted) {
            assert_eq!(label, planted, "event t={}", event.time_s);
        }
    }

    #[test]
    fn clean_tracksets_have_zero_held_entries() {
        let sm = generate_match(&s08(4, 5), "m").unwrap();
        let rules = LabelRules::default();
        let (kept, _) = eligible_events(&sm.annotation, &rules);
        for (event, label) in kept {
            let ts = build_trackset(&sm.annotation, &event, label, &DatasetConfig::default())
                .expect("clean synthetic tracks");
            assert_eq!(ts.players.len(), 5);
            for track in &ts.players {
                assert_eq!(track.entries.len(), 75);
                assert_eq!(track.held_count(), 0, "player {}", track.player_ref);
                let indices: Vec<u32> = track.entries.iter().map(|e| e.frame_index).collect();
                let expected: Vec<u32> = ts.window.input_frames().collect();
                assert_eq!(indices, expected);
            }
        }
    }

    #[test]
    fn gap_injection_produces_exactly_that_many_held_entries() {
        let cfg = SynthConfig {
            gap_injection: Some((2, 10)),
            ..s08(3, 7)
        };
        let sm = generate_match(&cfg, "m").unwrap();
        // Player 2 is absent for exactly 10 consecutive frames per segment.
        for event in &sm.annotation.events {
            let anchor = event.time_s * sm.annotation.fps;
            let gap_start = anchor - 75 + 20;
            for f in gap_start..gap_start + 10 {
                let frame = sm.annotation.frame(f).unwrap();
                assert!(
                    !frame.players.iter().any(|p| p.player_ref == 2),
                    "frame {f} should be missing player 2"
                );
            }
            assert!(sm
                .annotation
                .frame(gap_start - 1)
                .unwrap()
                .players
                .iter()
                .any(|p| p.player_ref == 2));
            assert!(sm
                .annotation
                .frame(gap_start + 10)
                .unwrap()
                .players
                .iter()
                .any(|p| p.player_ref == 2));
        }
        let rules = LabelRules::default();
        let (kept, _) = eligible_events(&sm.annotation, &rules);
        for (event, label) in kept {
            let ts = build_trackset(&sm.annotation, &event, label, &DatasetConfig::default())
                .expect("gap is absorbed by holds");
            let track2 = ts.players.iter().find(|t| t.player_ref == 2);
            if let Some(track) = track2 {
                assert_eq!(track.held_count(), 10);
            }
        }
    }

    #[test]
    fn too_few_players_is_rejected_downstream() {
        let cfg = SynthConfig {
            players_per_frame: 4,
            ..s08(2, 1)
        };
        let sm = generate_match(&cfg, "m").unwrap();
        let (kept, _) = eligible_events(&sm.annotation, &LabelRules::default());
        for (event, label) in kept {
            match build_trackset(&sm.annotation, &event, label, &DatasetConfig::default()) {
                Err(DatasetError::TooFewPlayers { got: 4, need: 5 }) => {}
                other => panic!("expected TooFewPlayers, got {other:?}"),
            }
        }
    }

    #[test]
    fn rendered_frames_show_players_and_ball() {
        let sm = generate_match(&s08(1, 2), "m").unwrap();
        let anchor = sm.annotation.events[0].time_s * sm.annotation.fps;
        let frame = sm.annotation.frame(anchor).unwrap();
        let img = render_frame(&sm.annotation, anchor);
        // Ball center pixel is white.
        let (bx, by) = frame.ball.as_ref().unwrap().center();
        let i = (by as usize * img.w + bx as usize) * 3;
        assert_eq!(&img.data[i..i + 3], &[255, 255, 255]);
        // Each player's center pixel is either that player's palette color or
        // another player's (overlap); never field green.
        for p in &frame.players {
            let (cx, cy) = p.bbox.center();
            let i = (cy as usize * img.w + cx as usize) * 3;
            assert_ne!(&img.data[i..i + 3], &FIELD_GREEN);
        }
    }

    /// The planted signal must be recoverable from feet + pose features
    /// alone with a fixed depth-2 rule on the generator's two statistics.
    #[test]
    fn depth_two_rule_on_features_recovers_every_label() {
        let feat = FeatureConfig {
            n_frames: 4,
            global_size: 32,
            crop_size: 16,
        };
        let mut total = 0;
        for seed in 0..5 {
            let cfg = s08(8, 100 + seed);
            let sm = generate_match(&cfg, &format!("m{seed}")).unwrap();
            let (kept, _) = eligible_events(&sm.annotation, &LabelRules::default());
            let frames = RenderedFrames(&sm.annotation);
            let fw = sm.annotation.width as f64;
            let overlap = overlap_threshold(sm.annotation.width);
            let swing = swing_threshold(sm.annotation.width);
            let (pw, _) = player_box_size(sm.annotation.width);
            // Ankles sit 0.15 * box-width off center at rest; the swing adds
            // its amplitude on top of that.
            let dist_thr = 1.1 * overlap / fw;
            let dev_thr = (0.15 * pw * 1.1 + swing) / fw;
            for (event, label) in kept {
                let ts =
                    build_trackset(&sm.annotation, &event, label, &DatasetConfig::default())
                        .unwrap();
                let sample = build_sample(&ts, &frames, &feat).unwrap();
                let t_last = feat.n_frames - 1;
                assert_eq!(
                    *subsample_indices(75, feat.n_frames).unwrap().last().unwrap(),
                    74
                );
                // Statistic 1: min pairwise foot distance at the last frame.
                let foot = |p: usize| {
                    let base = (t_last * 5 + p) * 2;
                    (sample.feet[base] as f64, sample.feet[base + 1] as f64)
                };
                let mut min_dist = f64::MAX;
                for i in 0..5 {
                    for j in (i + 1)..5 {
                        let (xi, yi) = foot(i);
                        let (xj, yj) = foot(j);
                        min_dist = min_dist.min(((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt());
                    }
                }
                // Statistic 2: max |ankle_u - foot_u| over visible ankles.
                let mut max_dev = 0.0f64;
                for p in 0..5 {
                    let (fu, _) = foot(p);
                    for ankle in [LEFT_ANKLE, RIGHT_ANKLE] {
                        let base = ((t_last * 5 + p) * KEYPOINT_COUNT + ankle) * 2;
                        let (ax, ay) = (sample.poses[base] as f64, sample.poses[base + 1] as f64);
                        if ax != 0.0 || ay != 0.0 {
                            max_dev = max_dev.max((ax - fu).abs());
                        }
                    }
                }
                let rule = if min_dist < dist_thr && max_dev > dev_thr {
                    Label::Foul
                } else {
                    Label::NonFoul
                };
                assert_eq!(
                    rule, label,
                    "seed {seed} t={} min_dist {min_dist:.4} (thr {dist_thr:.4}) max_dev {max_dev:.4} (thr {dev_thr:.4})",
                    event.time_s
                );
                total += 1;
            }
        }
        assert_eq!(total, 40);
    }
}
