//! Annotation file parsing, event classification, and eligibility filtering.
//!
//! One JSON document per match (see the schema example in the repository
//! README). Parsing is stateless; multiple files may be parsed in parallel.

use crate::types::{EventAnnotation, Label, MatchAnnotation};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed annotation document {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid annotation in {match_id}: {message}")]
    Validation { match_id: String, message: String },
}

/// Classification of a raw event tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventClass {
    Foul,
    NonFoul,
    Excluded,
}

/// Why an event was dropped on its way to becoming a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// No ball annotation on the anchor frame.
    NoBall,
    /// The analysis window would start before frame 0.
    InsufficientContext,
    /// The tag is in neither the foul nor the non-foul set.
    ExcludedLabel,
    /// Fewer than k players on the anchor frame.
    TooFewPlayers,
    /// Some track was held (unmatched) for too large a fraction of the window.
    LostTrack,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::NoBall => "NO_BALL",
            RejectReason::InsufficientContext => "INSUFFICIENT_CONTEXT",
            RejectReason::ExcludedLabel => "EXCLUDED_LABEL",
            RejectReason::TooFewPlayers => "TOO_FEW_PLAYERS",
            RejectReason::LostTrack => "LOST_TRACK",
        }
    }
}

/// One rejected event: match, time, reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub match_id: String,
    pub time_s: u32,
    pub reason: RejectReason,
}

impl Rejection {
    /// The one-line rejection-log format.
    pub fn line(&self) -> String {
        format!("{}\t{}\t{}", self.match_id, self.time_s, self.reason.code())
    }
}

/// Which tags count as foul / non-foul. Anything else is excluded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRules {
    pub foul_tags: Vec<String>,
    pub non_foul_tags: Vec<String>,
}

pub const DEFAULT_NON_FOUL_TAGS: [&str; 6] = [
    "Ball out of play",
    "Clearance",
    "Shots on target",
    "Shots off target",
    "Offside",
    "Goal",
];

impl Default for LabelRules {
    fn default() -> Self {
        LabelRules {
            foul_tags: vec!["Foul".to_string()],
            non_foul_tags: DEFAULT_NON_FOUL_TAGS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl LabelRules {
    /// Case-insensitive, total classification of a raw tag.
    pub fn classify(&self, label_text: &str) -> EventClass {
        let needle = label_text.to_lowercase();
        if self.foul_tags.iter().any(|t| t.to_lowercase() == needle) {
            EventClass::Foul
        } else if self.non_foul_tags.iter().any(|t| t.to_lowercase() == needle) {
            EventClass::NonFoul
        } else {
            EventClass::Excluded
        }
    }
}

/// Parses and validates one match annotation file.
pub fn parse_match(path: &Path) -> Result<MatchAnnotation, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_match_str(&text, &path.display().to_string())
}

/// Parses a match annotation document from a string. `origin` names the
/// source in error messages.
pub fn parse_match_str(text: &str, origin: &str) -> Result<MatchAnnotation, IngestError> {
    let mut m: MatchAnnotation =
        serde_json::from_str(text).map_err(|source| IngestError::Parse {
            path: origin.to_string(),
            source,
        })?;
    validate_match(&mut m)?;
    Ok(m)
}

/// Enforces the stream invariants, sorting frames into index order.
fn validate_match(m: &mut MatchAnnotation) -> Result<(), IngestError> {
    let fail = |message: String| IngestError::Validation {
        match_id: m.match_id.clone(),
        message,
    };
    if m.fps == 0 {
        return Err(fail("fps must be positive".into()));
    }
    if m.width == 0 || m.height == 0 {
        return Err(fail(format!(
            "frame dimensions must be positive, got {}x{}",
            m.width, m.height
        )));
    }
    m.frames.sort_by_key(|f| f.index);
    for pair in m.frames.windows(2) {
        if pair[0].index == pair[1].index {
            return Err(fail(format!("duplicate frame index {}", pair[0].index)));
        }
    }
    for frame in &m.frames {
        if let Some(ball) = &frame.ball {
            ball.validate().map_err(|e| {
                fail(format!("frame {}: ball bbox invalid: {e}", frame.index))
            })?;
        }
        let mut refs: Vec<u32> = frame.players.iter().map(|p| p.player_ref).collect();
        refs.sort_unstable();
        for pair in refs.windows(2) {
            if pair[0] == pair[1] {
                return Err(fail(format!(
                    "frame {}: duplicate player_ref {}",
                    frame.index, pair[0]
                )));
            }
        }
        for player in &frame.players {
            player.bbox.validate().map_err(|e| {
                fail(format!(
                    "frame {}: player {} bbox invalid: {e}",
                    frame.index, player.player_ref
                ))
            })?;
        }
    }
    Ok(())
}

/// Filters a match's events down to the ones a sample can be built from.
///
/// Keeps events classified foul / non-foul whose anchor frame
/// (`time_s * fps`) carries a ball annotation and whose 3-second input window
/// fits inside the video. Everything dropped lands in the returned rejection
/// list with a reason code.
pub fn eligible_events(
    m: &MatchAnnotation,
    rules: &LabelRules,
) -> (Vec<(EventAnnotation, Label)>, Vec<Rejection>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let reject = |event: &EventAnnotation, reason: RejectReason, out: &mut Vec<Rejection>| {
        out.push(Rejection {
            match_id: m.match_id.clone(),
            time_s: event.time_s,
            reason,
        });
    };
    for event in &m.events {
        let label = match rules.classify(&event.label) {
            EventClass::Foul => Label::Foul,
            EventClass::NonFoul => Label::NonFoul,
            EventClass::Excluded => {
                reject(event, RejectReason::ExcludedLabel, &mut rejected);
                continue;
            }
        };
        if event.time_s < 3 {
            reject(event, RejectReason::InsufficientContext, &mut rejected);
            continue;
        }
        let anchor = event.time_s * m.fps;
        let ball_present = m.frame(anchor).map(|f| f.ball.is_some()).unwrap_or(false);
        if !ball_present {
            reject(event, RejectReason::NoBall, &mut rejected);
            continue;
        }
        kept.push((event.clone(), label));
    }
    (kept, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BBox, FrameAnnotation, PlayerDetection};

    const MINIMAL: &str = r#"{
        "match_id": "m001",
        "fps": 25,
        "width": 640,
        "height": 360,
        "events": [{"label": "Foul", "time_s": 4}],
        "frames": [
            {"index": 0, "ball": {"x": 10, "y": 10, "w": 5, "h": 5}, "players": [
                {"player_ref": 0, "bbox": {"x": 1, "y": 2, "w": 3, "h": 4}, "keypoints": null}
            ]},
            {"index": 1, "ball": null, "players": []}
        ]
    }"#;

    #[test]
    fn minimal_file_round_trips() {
        let m = parse_match_str(MINIMAL, "inline").unwrap();
        assert_eq!(m.match_id, "m001");
        assert_eq!(m.events.len(), 1);
        assert_eq!(m.frames.len(), 2);
        assert_eq!(m.frames[0].players[0].player_ref, 0);
    }

    #[test]
    fn duplicate_frame_index_is_rejected() {
        let doc = MINIMAL.replace(r#""index": 1"#, r#""index": 0"#);
        let err = parse_match_str(&doc, "inline").unwrap_err();
        assert!(err.to_string().contains("duplicate frame index 0"), "{err}");
    }

    #[test]
    fn wrong_keypoint_count_is_rejected() {
        let kp18: Vec<String> = (0..18).map(|i| format!("[{i}, {i}, true]")).collect();
        let doc = MINIMAL.replace("null}", &format!("[{}]}}", kp18.join(",")));
        let err = parse_match_str(&doc, "inline").unwrap_err();
        assert!(err.to_string().contains("17"), "{err}");
    }

    #[test]
    fn malformed_document_names_the_line() {
        let err = parse_match_str("{\n  \"match_id\": 3,\n}", "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn duplicate_player_ref_is_rejected() {
        let m = MatchAnnotation {
            match_id: "m".into(),
            fps: 25,
            width: 10,
            height: 10,
            events: vec![],
            frames: vec![FrameAnnotation {
                index: 0,
                ball: None,
                players: vec![
                    PlayerDetection {
                        player_ref: 7,
                        bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                        keypoints: None,
                    },
                    PlayerDetection {
                        player_ref: 7,
                        bbox: BBox::new(2.0, 2.0, 1.0, 1.0).unwrap(),
                        keypoints: None,
                    },
                ],
            }],
        };
        let text = serde_json::to_string(&m).unwrap();
        let err = parse_match_str(&text, "inline").unwrap_err();
        assert!(err.to_string().contains("duplicate player_ref 7"), "{err}");
    }

    #[test]
    fn unsorted_frames_are_sorted() {
        let doc = r#"{
            "match_id": "m", "fps": 25, "width": 10, "height": 10, "events": [],
            "frames": [
                {"index": 5, "ball": null, "players": []},
                {"index": 2, "ball": null, "players": []}
            ]
        }"#;
        let m = parse_match_str(doc, "inline").unwrap();
        assert_eq!(m.frames[0].index, 2);
        assert_eq!(m.frames[1].index, 5);
    }

    #[test]
    fn classify_follows_the_configured_sets() {
        let rules = LabelRules::default();
        assert_eq!(rules.classify("Foul"), EventClass::Foul);
        assert_eq!(rules.classify("foul"), EventClass::Foul);
        assert_eq!(rules.classify("FOUL"), EventClass::Foul);
        assert_eq!(rules.classify("Offside"), EventClass::NonFoul);
        assert_eq!(rules.classify("ball out of play"), EventClass::NonFoul);
        assert_eq!(rules.classify("Throw-in"), EventClass::Excluded);
        assert_eq!(rules.classify(""), EventClass::Excluded);
    }

    fn match_with_ball_at(anchor: u32, ball: bool) -> MatchAnnotation {
        MatchAnnotation {
            match_id: "m".into(),
            fps: 25,
            width: 640,
            height: 360,
            events: vec![],
            frames: vec![FrameAnnotation {
                index: anchor,
                ball: ball.then(|| BBox::new(5.0, 5.0, 4.0, 4.0).unwrap()),
                players: vec![],
            }],
        }
    }

    #[test]
    fn eligible_keeps_foul_with_ball_present() {
        let mut m = match_with_ball_at(100 * 25, true);
        m.events.push(EventAnnotation {
            label: "Foul".into(),
            time_s: 100,
        });
        let (kept, rejected) = eligible_events(&m, &LabelRules::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].1, Label::Foul);
        assert!(rejected.is_empty());
    }

    #[test]
    fn eligible_drops_event_without_ball() {
        let mut m = match_with_ball_at(100 * 25, false);
        m.events.push(EventAnnotation {
            label: "Foul".into(),
            time_s: 100,
        });
        let (kept, rejected) = eligible_events(&m, &LabelRules::default());
        assert!(kept.is_empty());
        assert_eq!(rejected[0].reason, RejectReason::NoBall);
    }

    #[test]
    fn eligible_drops_event_too_close_to_start() {
        let mut m = match_with_ball_at(25, true);
        m.events.push(EventAnnotation {
            label: "Foul".into(),
            time_s: 1,
        });
        let (kept, rejected) = eligible_events(&m, &LabelRules::default());
        assert!(kept.is_empty());
        assert_eq!(rejected[0].reason, RejectReason::InsufficientContext);
    }

    #[test]
    fn kept_plus_rejected_covers_all_classified_events() {
        let mut m = match_with_ball_at(4 * 25, true);
        m.events = vec![
            EventAnnotation {
                label: "Foul".into(),
                time_s: 4,
            },
            EventAnnotation {
                label: "Goal".into(),
                time_s: 4,
            },
            EventAnnotation {
                label: "Foul".into(),
                time_s: 1,
            },
            EventAnnotation {
                label: "Foul".into(),
                time_s: 9,
            },
            EventAnnotation {
                label: "Throw-in".into(),
                time_s: 4,
            },
        ];
        let rules = LabelRules::default();
        let (kept, rejected) = eligible_events(&m, &rules);
        let classified = m
            .events
            .iter()
            .filter(|e| rules.classify(&e.label) != EventClass::Excluded)
            .count();
        let non_excluded_rejections = rejected
            .iter()
            .filter(|r| r.reason != RejectReason::ExcludedLabel)
            .count();
        assert_eq!(kept.len() + non_excluded_rejections, classified);
        assert_eq!(rejected.len(), 3); // t=1 context, t=9 no ball, throw-in excluded
    }

    #[test]
    fn rejection_line_format() {
        let r = Rejection {
            match_id: "m007".into(),
            time_s: 42,
            reason: RejectReason::LostTrack,
        };
        assert_eq!(r.line(), "m007\t42\tLOST_TRACK");
    }
}
