//! The 24-slot hand landmark layout and the keypoint frame type.
//!
//! | slots  | landmarks                                              |
//! |--------|--------------------------------------------------------|
//! | 0      | wrist                                                  |
//! | 1      | palm                                                   |
//! | 2–5    | thumb: metacarpal, proximal, distal, tip               |
//! | 6–10   | index: metacarpal, proximal, intermediate, distal, tip |
//! | 11–15  | middle (same order as index)                           |
//! | 16–20  | ring (same order as index)                             |
//! | 21–23  | pinky: proximal, distal, tip                           |
//!
//! Coordinates are meters in a right-handed Y-up frame with -Z pointing
//! forward.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{axis_angle_matrix, Quaternion, Vec3};

pub const KEYPOINT_COUNT: usize = 24;
pub const WRIST: usize = 0;
pub const PALM: usize = 1;

/// Largest accepted absolute coordinate, meters.
pub const MAX_COORDINATE: f64 = 10.0;

/// Encoded size of a keypoint payload: hand tag, timestamp, 24 × 3 doubles.
pub const ENCODED_LEN: usize = 1 + 8 + KEYPOINT_COUNT * 3 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Hand::Left => "left",
            Hand::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Hand> {
        match s {
            "left" => Some(Hand::Left),
            "right" => Some(Hand::Right),
            _ => None,
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 5] = [Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring, Finger::Pinky];

    /// Fingers whose landmarks drive the robot hand.
    pub const RETARGETED: [Finger; 4] = [Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring];

    pub fn name(&self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Pinky => "pinky",
        }
    }

    /// All slots belonging to this finger, base to tip.
    pub fn slots(&self) -> core::ops::RangeInclusive<usize> {
        match self {
            Finger::Thumb => 2..=5,
            Finger::Index => 6..=10,
            Finger::Middle => 11..=15,
            Finger::Ring => 16..=20,
            Finger::Pinky => 21..=23,
        }
    }

    pub fn proximal(&self) -> usize {
        match self {
            Finger::Thumb => 3,
            Finger::Pinky => 21,
            other => *other.slots().start() + 1,
        }
    }

    pub fn distal(&self) -> usize {
        *self.slots().end() - 1
    }

    pub fn tip(&self) -> usize {
        *self.slots().end()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeypointError {
    #[error("keypoint {index} is not finite")]
    NonFinite { index: usize },
    #[error("keypoint {index} exceeds {MAX_COORDINATE} m")]
    OutOfRange { index: usize },
    #[error("keypoint payload has {0} bytes, expected {ENCODED_LEN}")]
    BadLength(usize),
    #[error("unknown hand tag {0}")]
    BadHand(u8),
}

/// One timestamped 24-landmark hand sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub timestamp_ns: u64,
    pub hand: Hand,
    pub points: [Vec3; KEYPOINT_COUNT],
}

impl KeypointFrame {
    pub fn validate(&self) -> Result<(), KeypointError> {
        for (index, p) in self.points.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(KeypointError::NonFinite { index });
            }
            if p.iter().any(|v| v.abs() > MAX_COORDINATE) {
                return Err(KeypointError::OutOfRange { index });
            }
        }
        Ok(())
    }

    /// Flattened `[x0, y0, z0, x1, ...]` view used by the moving average.
    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn with_flat(&self, flat: &[f64]) -> KeypointFrame {
        let mut out = self.clone();
        for (i, p) in out.points.iter_mut().enumerate() {
            *p = Vec3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
        }
        out
    }

    /// Little-endian payload: hand (0 left, 1 right), timestamp, then the
    /// 72 coordinates as f64.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ENCODED_LEN);
        out.push(match self.hand {
            Hand::Left => 0,
            Hand::Right => 1,
        });
        out.extend_from_slice(&self.timestamp_ns.to_le_bytes());
        for p in &self.points {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<KeypointFrame, KeypointError> {
        if bytes.len() != ENCODED_LEN {
            return Err(KeypointError::BadLength(bytes.len()));
        }
        let hand = match bytes[0] {
            0 => Hand::Left,
            1 => Hand::Right,
            other => return Err(KeypointError::BadHand(other)),
        };
        let timestamp_ns = u64::from_le_bytes(bytes[1..9].try_into().unwrap());
        let mut points = [Vec3::zeros(); KEYPOINT_COUNT];
        let mut chunks = bytes[9..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for p in points.iter_mut() {
            for v in p.iter_mut() {
                *v = chunks.next().unwrap();
            }
        }
        let frame = KeypointFrame { timestamp_ns, hand, points };
        frame.validate()?;
        Ok(frame)
    }
}

/// Virtual hand pose synthesized into a full keypoint frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandPose {
    pub wrist: Vec3,
    pub orientation: Quaternion,
    /// Per-finger curl in `[0, 1]`, indexed like [`Finger::ALL`].
    pub curls: [f64; 5],
}

impl Default for HandPose {
    fn default() -> Self {
        Self { wrist: Vec3::zeros(), orientation: Quaternion::IDENTITY, curls: [0.0; 5] }
    }
}

/// Flexion per joint at full curl, radians: 60°, 80°, 40°.
pub const CURL_FLEXION: [f64; 3] = [1.047_197_551_196_597_7, 1.396_263_401_595_463_6, 0.698_131_700_797_732_1];

struct FingerTemplate {
    /// Metacarpal landmark, relative to the wrist (absent for the pinky).
    metacarpal: Option<Vec3>,
    knuckle: Vec3,
    /// Unit direction of the straight finger.
    direction: Vec3,
    /// Axis the finger flexes about.
    flex_axis: Vec3,
    /// Phalanx lengths after the knuckle.
    phalanges: [f64; 3],
}

fn finger_template(finger: Finger) -> FingerTemplate {
    let forward = Vec3::new(0.0, 0.0, -1.0);
    // Flexing about +x curls -z toward -y, the palm side of a palm-down hand.
    let flex_axis = Vec3::x();
    match finger {
        Finger::Thumb => {
            let direction = Vec3::new(-0.5, 0.0, -0.866_025_403_784_438_6);
            FingerTemplate {
                metacarpal: Some(Vec3::new(-0.025, -0.01, -0.02)),
                knuckle: Vec3::new(-0.04, -0.01, -0.045),
                direction,
                flex_axis: Vec3::new(0.866_025_403_784_438_6, 0.0, -0.5),
                phalanges: [0.032, 0.028, 0.022],
            }
        }
        Finger::Index => FingerTemplate {
            metacarpal: Some(Vec3::new(-0.012, 0.0, -0.04)),
            knuckle: Vec3::new(-0.022, 0.0, -0.09),
            direction: forward,
            flex_axis,
            phalanges: [0.042, 0.025, 0.02],
        },
        Finger::Middle => FingerTemplate {
            metacarpal: Some(Vec3::new(-0.002, 0.0, -0.04)),
            knuckle: Vec3::new(-0.002, 0.0, -0.092),
            direction: forward,
            flex_axis,
            phalanges: [0.046, 0.028, 0.021],
        },
        Finger::Ring => FingerTemplate {
            metacarpal: Some(Vec3::new(0.01, 0.0, -0.038)),
            knuckle: Vec3::new(0.018, 0.0, -0.087),
            direction: forward,
            flex_axis,
            phalanges: [0.043, 0.027, 0.02],
        },
        Finger::Pinky => FingerTemplate {
            metacarpal: None,
            knuckle: Vec3::new(0.036, 0.0, -0.078),
            direction: forward,
            flex_axis,
            // proximal+intermediate merged, then distal
            phalanges: [0.055, 0.018, 0.0],
        },
    }
}

/// Deterministic kinematic hand template: curl `c` flexes each finger's
/// three joints by `c · [60°, 80°, 40°]`, then the whole hand is rotated by
/// `orientation` and translated by `wrist`.
pub fn pose_to_keypoints(pose: &HandPose, hand: Hand, timestamp_ns: u64) -> KeypointFrame {
    let mut local = [Vec3::zeros(); KEYPOINT_COUNT];
    local[PALM] = Vec3::new(0.0, 0.0, -0.05);
    for finger in Finger::ALL {
        let t = finger_template(finger);
        let curl = pose.curls[finger as usize].clamp(0.0, 1.0);
        let mut slot = *finger.slots().start();
        if let Some(m) = t.metacarpal {
            local[slot] = m;
            slot += 1;
        }
        local[slot] = t.knuckle;
        slot += 1;
        let mut point = t.knuckle;
        let mut rotation = Matrix3::identity();
        let joints = if finger == Finger::Pinky { 2 } else { 3 };
        for (j, &base) in CURL_FLEXION.iter().enumerate().take(joints) {
            let flex = if finger == Finger::Pinky && j == 1 { CURL_FLEXION[1] + CURL_FLEXION[2] } else { base };
            rotation *= axis_angle_matrix(&t.flex_axis, flex * curl);
            point += rotation * t.direction * t.phalanges[j];
            local[slot] = point;
            slot += 1;
        }
    }
    let rot = pose.orientation.to_rotation_matrix();
    let mut points = [Vec3::zeros(); KEYPOINT_COUNT];
    for (out, p) in points.iter_mut().zip(local.iter()) {
        *out = rot * p + pose.wrist;
    }
    if hand == Hand::Left {
        // mirror across the sagittal plane, then restore the pose translation
        for p in points.iter_mut() {
            p.x = 2.0 * pose.wrist.x - p.x;
        }
    }
    KeypointFrame { timestamp_ns, hand, points }
}
