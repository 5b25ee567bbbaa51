//! Shared domain types: boxes, poses, labels, and per-match annotations.
//!
//! All types here are immutable value objects once constructed and are safe
//! to share across worker threads.

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of skeleton keypoints per player (COCO-17 convention).
pub const KEYPOINT_COUNT: usize = 17;

/// COCO-17 keypoint order used throughout the pipeline.
pub const KEYPOINT_NAMES: [&str; KEYPOINT_COUNT] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Skeleton edges (pairs of keypoint indices) for overlay rendering.
pub const SKELETON_EDGES: [(usize, usize); 16] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

pub const LEFT_KNEE: usize = 13;
pub const RIGHT_KNEE: usize = 14;
pub const LEFT_ANKLE: usize = 15;
pub const RIGHT_ANKLE: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("bbox has negative or non-finite geometry: x={x}, y={y}, w={w}, h={h}")]
    BadBBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("pose must have exactly {KEYPOINT_COUNT} keypoints, got {0}")]
    KeypointCount(usize),
    #[error("frame dimensions must be positive, got {w}x{h}")]
    BadFrameDims { w: f64, h: f64 },
}

/// Axis-aligned bounding box in pixel coordinates, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, TypeError> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Checks the type invariants (finite coordinates, non-negative size).
    /// Needed after deserialization, which bypasses [`BBox::new`].
    pub fn validate(&self) -> Result<(), TypeError> {
        let finite =
            self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite();
        if !finite || self.w < 0.0 || self.h < 0.0 {
            return Err(TypeError::BadBBox {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
            });
        }
        Ok(())
    }

    /// Center point of the box.
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Foot position (bottom center) normalized by the frame dimensions.
    ///
    /// The result is not clamped: boxes touching the frame edge may yield
    /// coordinates slightly outside `[0, 1]` and callers must tolerate that.
    pub fn foot_position(&self, frame_w: f64, frame_h: f64) -> Result<(f64, f64), TypeError> {
        if frame_w <= 0.0 || frame_h <= 0.0 {
            return Err(TypeError::BadFrameDims {
                w: frame_w,
                h: frame_h,
            });
        }
        Ok(((self.x + self.w / 2.0) / frame_w, (self.y + self.h) / frame_h))
    }
}

/// Euclidean distance between two points in pixels.
pub fn euclidean(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// One skeleton joint. Invisible joints are stored as `(0, 0)`.
///
/// Serialized as a `[x, y, visible]` triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Serialize for Keypoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(3))?;
        seq.serialize_element(&self.x)?;
        seq.serialize_element(&self.y)?;
        seq.serialize_element(&self.visible)?;
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Keypoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct KpVisitor;
        impl<'de> Visitor<'de> for KpVisitor {
            type Value = Keypoint;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a [x, y, visible] triple")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Keypoint, A::Error> {
                let x: f64 = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(0, &self))?;
                let y: f64 = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(1, &self))?;
                let visible: bool = seq
                    .next_element()?
                    .ok_or_else(|| serde::de::Error::invalid_length(2, &self))?;
                if seq.next_element::<serde_json::Value>()?.is_some() {
                    return Err(serde::de::Error::invalid_length(4, &self));
                }
                Ok(Keypoint { x, y, visible })
            }
        }
        deserializer.deserialize_seq(KpVisitor)
    }
}

/// A full 17-point skeleton. Construction zero-fills invisible joints so the
/// `visible == false  =>  (x, y) == (0, 0)` invariant always holds.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PoseKeypoints {
    points: Vec<Keypoint>,
}

impl PoseKeypoints {
    pub fn new(mut points: Vec<Keypoint>) -> Result<Self, TypeError> {
        if points.len() != KEYPOINT_COUNT {
            return Err(TypeError::KeypointCount(points.len()));
        }
        for p in &mut points {
            if !p.visible {
                p.x = 0.0;
                p.y = 0.0;
            }
        }
        Ok(PoseKeypoints { points })
    }

    /// A pose with all joints undetected (all zeros).
    pub fn all_invisible() -> Self {
        PoseKeypoints {
            points: vec![
                Keypoint {
                    x: 0.0,
                    y: 0.0,
                    visible: false
                };
                KEYPOINT_COUNT
            ],
        }
    }

    pub fn points(&self) -> &[Keypoint] {
        &self.points
    }
}

impl<'de> Deserialize<'de> for PoseKeypoints {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let points = Vec::<Keypoint>::deserialize(deserializer)?;
        PoseKeypoints::new(points).map_err(serde::de::Error::custom)
    }
}

/// Binary sample label; `Foul` is the positive class for all metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "FOUL")]
    Foul,
    #[serde(rename = "NON_FOUL")]
    NonFoul,
}

impl Label {
    /// Class index used by the model head (FOUL = 1).
    pub fn class_index(&self) -> usize {
        match self {
            Label::Foul => 1,
            Label::NonFoul => 0,
        }
    }

    pub fn from_class_index(idx: usize) -> Label {
        if idx == 1 {
            Label::Foul
        } else {
            Label::NonFoul
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            Label::Foul => f.write_str("FOUL"),
            Label::NonFoul => f.write_str("NON_FOUL"),
        }
    }
}

/// One detected player in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerDetection {
    pub player_ref: u32,
    pub bbox: BBox,
    pub keypoints: Option<PoseKeypoints>,
}

/// All detections in one video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub index: u32,
    pub ball: Option<BBox>,
    pub players: Vec<PlayerDetection>,
}

/// A tagged event at whole-second granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub label: String,
    pub time_s: u32,
}

/// Per-match annotation stream: the pipeline's sole external input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchAnnotation {
    pub match_id: String,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    pub events: Vec<EventAnnotation>,
    pub frames: Vec<FrameAnnotation>,
}

impl MatchAnnotation {
    /// Frame annotation lookup by index. Frames are sorted, so binary search.
    pub fn frame(&self, index: u32) -> Option<&FrameAnnotation> {
        self.frames
            .binary_search_by_key(&index, |f| f.index)
            .ok()
            .map(|i| &self.frames[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn center_of_symmetric_square() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(b.center(), (5.0, 5.0));
    }

    #[test]
    fn center_arithmetic() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        assert_eq!(b.center(), (25.0, 40.0));
    }

    #[test]
    fn center_of_degenerate_box() {
        let b = BBox::new(7.0, 7.0, 0.0, 0.0).unwrap();
        assert_eq!(b.center(), (7.0, 7.0));
    }

    #[test]
    fn foot_position_basic() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0).unwrap();
        assert_eq!(b.foot_position(100.0, 100.0).unwrap(), (0.25, 0.60));
    }

    #[test]
    fn foot_position_full_frame_box() {
        let b = BBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        assert_eq!(b.foot_position(100.0, 100.0).unwrap(), (0.5, 1.0));
    }

    #[test]
    fn foot_position_is_not_clamped() {
        let b = BBox::new(90.0, 90.0, 20.0, 20.0).unwrap();
        let (u, v) = b.foot_position(100.0, 100.0).unwrap();
        assert_eq!((u, v), (1.0, 1.1));
    }

    #[test]
    fn foot_position_rejects_bad_frame_dims() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(b.foot_position(0.0, 100.0).is_err());
        assert!(b.foot_position(100.0, -1.0).is_err());
    }

    #[test]
    fn bbox_rejects_negative_and_non_finite() {
        assert!(BBox::new(0.0, 0.0, -1.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, f64::NAN).is_err());
        assert!(BBox::new(f64::INFINITY, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean((0.0, 0.0), (3.0, 4.0)), 5.0);
        assert_eq!(euclidean((2.5, 2.5), (2.5, 2.5)), 0.0);
        assert_eq!(euclidean((1.0, 1.0), (4.0, 5.0)), 5.0);
    }

    fn kp(x: f64, y: f64, visible: bool) -> Keypoint {
        Keypoint { x, y, visible }
    }

    #[test]
    fn pose_rejects_wrong_length() {
        assert_eq!(
            PoseKeypoints::new(vec![kp(1.0, 1.0, true); 16]).unwrap_err(),
            TypeError::KeypointCount(16)
        );
        assert_eq!(
            PoseKeypoints::new(vec![kp(1.0, 1.0, true); 18]).unwrap_err(),
            TypeError::KeypointCount(18)
        );
    }

    #[test]
    fn pose_zero_fills_invisible_points() {
        let mut pts = vec![kp(5.0, 6.0, true); KEYPOINT_COUNT];
        pts[3] = kp(9.0, 9.0, false);
        let pose = PoseKeypoints::new(pts).unwrap();
        assert_eq!(pose.points()[3], kp(0.0, 0.0, false));
        assert_eq!(pose.points()[0], kp(5.0, 6.0, true));
    }

    #[test]
    fn keypoint_round_trips_as_triple() {
        let p = kp(1.5, -2.0, true);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[1.5,-2.0,true]");
        let back: Keypoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn frame_lookup_by_index() {
        let m = MatchAnnotation {
            match_id: "m".into(),
            fps: 25,
            width: 100,
            height: 100,
            events: vec![],
            frames: vec![
                FrameAnnotation {
                    index: 0,
                    ball: None,
                    players: vec![],
                },
                FrameAnnotation {
                    index: 2,
                    ball: None,
                    players: vec![],
                },
            ],
        };
        assert!(m.frame(0).is_some());
        assert!(m.frame(1).is_none());
        assert_eq!(m.frame(2).unwrap().index, 2);
    }

    proptest! {
        /// Doubling box and frame dimensions together leaves (u, v) unchanged.
        #[test]
        fn foot_position_scale_consistent(
            x in 0.0f64..500.0, y in 0.0f64..500.0,
            w in 0.0f64..200.0, h in 0.0f64..200.0,
            fw in 1.0f64..2000.0, fh in 1.0f64..2000.0,
        ) {
            let b = BBox::new(x, y, w, h).unwrap();
            let b2 = BBox::new(2.0 * x, 2.0 * y, 2.0 * w, 2.0 * h).unwrap();
            let (u, v) = b.foot_position(fw, fh).unwrap();
            let (u2, v2) = b2.foot_position(2.0 * fw, 2.0 * fh).unwrap();
            prop_assert!((u - u2).abs() < 1e-12);
            prop_assert!((v - v2).abs() < 1e-12);
        }

        /// bbox_center and foot_position agree on the horizontal coordinate.
        #[test]
        fn center_and_foot_share_u(
            x in 0.0f64..500.0, y in 0.0f64..500.0,
            w in 0.0f64..200.0, h in 0.0f64..200.0,
            fw in 1.0f64..2000.0,
        ) {
            let b = BBox::new(x, y, w, h).unwrap();
            let (cx, _) = b.center();
            let (u, _) = b.foot_position(fw, 100.0).unwrap();
            prop_assert!((cx / fw - u).abs() < 1e-12);
        }
    }
}
