//! Payloads carried between pipeline stages, JSON-encoded except for
//! keypoint frames, which use the fixed binary layout of
//! [`KeypointFrame::encode`](beavr_core::keypoints::KeypointFrame::encode).

use beavr_core::geometry::{transform_to_pose, Quaternion, Transform, Vec3};
use beavr_core::ik::IkTarget;
use beavr_core::keypoints::Hand;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub mod topics {
    use beavr_core::keypoints::Hand;

    pub const PAUSE: &str = "pause";
    pub const BUTTON: &str = "button";
    pub const TRANSFORMED_PREFIX: &str = "TRANSFORMED_";
    pub const ENDEFF_PREFIX: &str = "endeff_coords/";
    pub const ROBOT_STATE_PREFIX: &str = "robot_state/";
    pub const METRICS_PREFIX: &str = "metrics/";

    pub fn keypoints(hand: Hand) -> &'static str {
        hand.as_str()
    }
    pub fn transformed(hand: Hand) -> String {
        format!("{TRANSFORMED_PREFIX}{hand}")
    }
    pub fn endeff(robot: &str) -> String {
        format!("{ENDEFF_PREFIX}{robot}")
    }
    pub fn robot_state(robot: &str) -> String {
        format!("{ROBOT_STATE_PREFIX}{robot}")
    }
    pub fn metrics(robot: &str) -> String {
        format!("{METRICS_PREFIX}{robot}")
    }
}

pub fn to_payload<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("message types always serialize")
}

pub fn from_payload<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, serde_json::Error> {
    serde_json::from_slice(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Pause,
    Resume,
    Button,
    Stop,
}

impl CommandKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pause" => Some(Self::Pause),
            "resume" => Some(Self::Resume),
            "button" => Some(Self::Button),
            "stop" => Some(Self::Stop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCommand {
    pub kind: CommandKind,
    pub timestamp_ns: u64,
}

impl SessionCommand {
    pub fn topic(&self) -> &'static str {
        match self.kind {
            CommandKind::Button => topics::BUTTON,
            _ => topics::PAUSE,
        }
    }
}

/// Position plus `[w, x, y, z]` orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn from_transform(h: &Transform) -> Self {
        let (p, q) = transform_to_pose(h);
        Self { position: [p.x, p.y, p.z], orientation: [q.w, q.x, q.y, q.z] }
    }

    pub fn quaternion(&self) -> Quaternion {
        let [w, x, y, z] = self.orientation;
        Quaternion::new_unchecked(w, x, y, z).normalized()
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn to_transform(&self) -> Transform {
        Transform::from_pose(self.position(), &self.quaternion())
    }
}

/// Output of the operator's transform stage for one keypoint frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedHand {
    pub hand: Hand,
    pub capture_ts: u64,
    /// Hand basis in the VR frame, translated to the (smoothed) wrist.
    pub basis: Pose,
    /// Smoothed wrist-relative keypoints, 24 × xyz.
    pub keypoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Transformed {
    Hand(TransformedHand),
    Command(SessionCommand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CommandTarget {
    Arm { pose: Pose },
    Hand { targets: Vec<IkTarget> },
}

/// Retargeted goal for one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorCommand {
    pub robot: String,
    /// Strictly increasing per robot.
    pub seq: u64,
    /// Capture instant of the keypoint frame this command came from.
    pub capture_ts: u64,
    pub target: CommandTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub robot: String,
    /// Control tick counter.
    pub seq: u64,
    /// Sequence number of the last applied command.
    pub command_seq: Option<u64>,
    pub q: Vec<f64>,
    /// Joint state before this tick's command was applied.
    pub q_prev: Vec<f64>,
    pub pose: Pose,
    pub apply_ts: u64,
    pub blocked: bool,
}

/// Live timing summary an interface publishes about once a second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotMetrics {
    pub robot: String,
    pub hz: f64,
    pub jitter_ms: f64,
    pub latency_ms: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_json_shapes() {
        let cmd = Transformed::Command(SessionCommand { kind: CommandKind::Pause, timestamp_ns: 5 });
        let json = String::from_utf8(to_payload(&cmd)).unwrap();
        assert_eq!(json, r#"{"type":"command","kind":"pause","timestamp_ns":5}"#);
        assert_eq!(from_payload::<Transformed>(json.as_bytes()).unwrap(), cmd);

        let target = CommandTarget::Hand { targets: vec![IkTarget::new("index_tip", Vec3::new(0.1, 0.2, 0.3))] };
        let json = String::from_utf8(to_payload(&target)).unwrap();
        assert!(json.starts_with(r#"{"kind":"hand","targets":[{"marker":"index_tip","desired":[0.1,0.2,0.3]"#), "{json}");
    }

    #[test]
    fn pose_round_trip() {
        let h = Transform::from_pose(Vec3::new(0.1, -0.2, 0.3), &Quaternion::from_axis_angle(&Vec3::y(), 0.7));
        let back = Pose::from_transform(&h).to_transform();
        assert!((back.to_matrix() - h.to_matrix()).amax() < 1e-12);
    }
}
