//! Revolute kinematic trees, forward kinematics and point Jacobians.
//!
//! A chain is a list of revolute joints in topological order. Each joint
//! hangs off a parent link (the base or an earlier joint's link) through a
//! fixed offset and rotates its own link about a local axis. A single-branch
//! chain is the usual serial arm; the hand model uses one branch per finger.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3xX};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Transform, Vec3};

pub const BASE_LINK: &str = "base";

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("joint vector has {got} entries, chain has {expected} joints")]
    Dimension { expected: usize, got: usize },
    #[error("unknown marker `{0}`")]
    UnknownMarker(String),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ChainError {
    ChainError::Invalid { path: path.into(), message: message.into() }
}

/// Serialized chain document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDescription {
    pub name: String,
    /// Capsule radius used for self-collision, meters.
    #[serde(default = "default_radius")]
    pub capsule_radius: f64,
    pub joints: Vec<JointDescription>,
    #[serde(default)]
    pub markers: Vec<MarkerDescription>,
    /// Optional named joint configuration the robot starts in.
    #[serde(default)]
    pub home: Option<Vec<f64>>,
}

fn default_radius() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDescription {
    pub name: String,
    /// Link this joint drives; defaults to the joint name.
    #[serde(default)]
    pub link: Option<String>,
    /// Parent link; defaults to the previous joint's link (or the base).
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub offset: OffsetDescription,
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    /// Far end of this link's collision capsule in link coordinates. Defaults
    /// to the first child joint's origin, or the link origin for leaves.
    #[serde(default)]
    pub capsule_end: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetDescription {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerDescription {
    pub name: String,
    pub link: String,
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub link: String,
    /// Index of the parent joint, `None` when attached to the base.
    pub parent: Option<usize>,
    pub offset: Transform,
    pub axis: Vec3,
    pub limits: (f64, f64),
    pub capsule_end: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub name: String,
    /// Joint whose link carries the marker; `None` for the base.
    pub joint: Option<usize>,
    pub offset: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    name: String,
    joints: Vec<Joint>,
    markers: Vec<Marker>,
    capsule_radius: f64,
    home: Vec<f64>,
    /// ancestors[j][k] is true when joint k moves joint j's link.
    ancestors: Vec<Vec<bool>>,
}

/// Joint angles in radians with the time they were sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vec<f64>,
    pub timestamp_ns: u64,
}

impl JointState {
    pub fn new(q: Vec<f64>) -> Self {
        Self { q, timestamp_ns: 0 }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(alloc::vec![0.0; n])
    }
}

fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn finite(path: &str, values: &[f64]) -> Result<(), ChainError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(path, "non-finite value"))
    }
}

impl KinematicChain {
    pub fn from_description(desc: &ChainDescription) -> Result<Self, ChainError> {
        if desc.name.is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if desc.joints.is_empty() {
            return Err(invalid("joints", "chain needs at least one joint"));
        }
        if !(desc.capsule_radius >= 0.0 && desc.capsule_radius.is_finite()) {
            return Err(invalid("capsule_radius", "must be a non-negative number"));
        }

        let mut link_index: BTreeMap<String, Option<usize>> = BTreeMap::new();
        link_index.insert(BASE_LINK.to_string(), None);
        let mut joints: Vec<Joint> = Vec::with_capacity(desc.joints.len());
        for (i, jd) in desc.joints.iter().enumerate() {
            let path = format!("joints[{i}]");
            let link = jd.link.clone().unwrap_or_else(|| jd.name.clone());
            if link_index.contains_key(&link) {
                return Err(invalid(format!("{path}.link"), format!("duplicate link `{link}`")));
            }
            let parent = match &jd.parent {
                Some(p) => {
                    *link_index.get(p).ok_or_else(|| invalid(format!("{path}.parent"), format!("unknown or later link `{p}`")))?
                }
                None => i.checked_sub(1),
            };
            finite(&format!("{path}.axis"), &jd.axis)?;
            let axis = vec3(jd.axis);
            if (axis.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(invalid(format!("{path}.axis"), "axis is not unit-norm"));
            }
            finite(&format!("{path}.limits"), &jd.limits)?;
            if jd.limits[0] >= jd.limits[1] {
                return Err(invalid(format!("{path}.limits"), "min must be below max"));
            }
            finite(&format!("{path}.offset.translation"), &jd.offset.translation)?;
            finite(&format!("{path}.offset.rpy"), &jd.offset.rpy)?;
            let offset = Transform::from_rpy(vec3(jd.offset.translation), jd.offset.rpy);
            link_index.insert(link.clone(), Some(i));
            joints.push(Joint {
                name: jd.name.clone(),
                link,
                parent,
                offset,
                axis,
                limits: (jd.limits[0], jd.limits[1]),
                capsule_end: Vec3::zeros(),
            });
        }
        for (i, jd) in desc.joints.iter().enumerate() {
            joints[i].capsule_end = match jd.capsule_end {
                Some(end) => {
                    finite(&format!("joints[{i}].capsule_end"), &end)?;
                    vec3(end)
                }
                None => joints
                    .iter()
                    .find(|j| j.parent == Some(i))
                    .map(|child| *child.offset.translation())
                    .unwrap_or_else(Vec3::zeros),
            };
        }

        let mut markers = Vec::with_capacity(desc.markers.len());
        for (i, md) in desc.markers.iter().enumerate() {
            let path = format!("markers[{i}]");
            let joint = *link_index
                .get(&md.link)
                .ok_or_else(|| invalid(format!("{path}.link"), format!("unknown link `{}`", md.link)))?;
            if markers.iter().any(|m: &Marker| m.name == md.name) {
                return Err(invalid(format!("{path}.name"), format!("duplicate marker `{}`", md.name)));
            }
            finite(&format!("{path}.offset"), &md.offset)?;
            markers.push(Marker { name: md.name.clone(), joint, offset: vec3(md.offset) });
        }

        let n = joints.len();
        let home = match &desc.home {
            Some(h) if h.len() != n => return Err(invalid("home", format!("has {} entries, chain has {n} joints", h.len()))),
            Some(h) => {
                for (i, (v, j)) in h.iter().zip(&joints).enumerate() {
                    if !(j.limits.0..=j.limits.1).contains(v) {
                        return Err(invalid(format!("home[{i}]"), "outside joint limits"));
                    }
                }
                h.clone()
            }
            None => joints.iter().map(|j| 0.0_f64.clamp(j.limits.0, j.limits.1)).collect(),
        };

        let mut ancestors = alloc::vec![alloc::vec![false; n]; n];
        for (j, row) in ancestors.iter_mut().enumerate() {
            let mut cursor = Some(j);
            while let Some(k) = cursor {
                row[k] = true;
                cursor = joints[k].parent;
            }
        }

        Ok(Self { name: desc.name.clone(), joints, markers, capsule_radius: desc.capsule_radius, home, ancestors })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn capsule_radius(&self) -> f64 {
        self.capsule_radius
    }

    pub fn home(&self) -> JointState {
        JointState::new(self.home.clone())
    }

    pub fn marker(&self, name: &str) -> Result<&Marker, ChainError> {
        self.markers.iter().find(|m| m.name == name).ok_or_else(|| ChainError::UnknownMarker(name.to_string()))
    }

    pub fn marker_index(&self, name: &str) -> Result<usize, ChainError> {
        self.markers.iter().position(|m| m.name == name).ok_or_else(|| ChainError::UnknownMarker(name.to_string()))
    }

    pub fn link_joint(&self, link: &str) -> Result<Option<usize>, ChainError> {
        if link == BASE_LINK {
            return Ok(None);
        }
        self.joints.iter().position(|j| j.link == link).map(Some).ok_or_else(|| ChainError::UnknownLink(link.to_string()))
    }

    /// Joint `k` moves joint `j`'s link (including `k == j`).
    pub fn is_ancestor(&self, k: usize, j: usize) -> bool {
        self.ancestors[j][k]
    }

    /// Links are adjacent when one is the other's parent.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.joints[a].parent == Some(b) || self.joints[b].parent == Some(a)
    }

    pub fn check_dimension(&self, q: &[f64]) -> Result<(), ChainError> {
        if q.len() != self.dof() {
            return Err(ChainError::Dimension { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.len() == self.dof() && q.iter().zip(&self.joints).all(|(v, j)| *v >= j.limits.0 && *v <= j.limits.1)
    }

    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limits.0, j.limits.1);
        }
    }

    /// World pose of every joint's link, indexed like [`Self::joints`].
    pub fn link_poses(&self, q: &[f64]) -> Result<Vec<Transform>, ChainError> {
        self.check_dimension(q)?;
        let mut poses: Vec<Transform> = Vec::with_capacity(self.dof());
        for (i, joint) in self.joints.iter().enumerate() {
            let parent = joint.parent.map(|p| poses[p]).unwrap_or_else(Transform::identity);
            let pose = parent * joint.offset * Transform::from_axis_angle(&joint.axis, q[i]);
            poses.push(pose);
        }
        Ok(poses)
    }

    /// Link name → world pose, including the base at identity.
    pub fn forward_kinematics(&self, q: &JointState) -> Result<BTreeMap<String, Transform>, ChainError> {
        let poses = self.link_poses(&q.q)?;
        let mut out = BTreeMap::new();
        out.insert(BASE_LINK.to_string(), Transform::identity());
        for (joint, pose) in self.joints.iter().zip(poses) {
            out.insert(joint.link.clone(), pose);
        }
        Ok(out)
    }

    pub(crate) fn marker_position_in(&self, poses: &[Transform], marker: &Marker) -> Vec3 {
        match marker.joint {
            Some(j) => poses[j].transform_point(&marker.offset),
            None => marker.offset,
        }
    }

    pub fn marker_position(&self, q: &JointState, marker: &str) -> Result<Vec3, ChainError> {
        let m = self.marker(marker)?;
        let poses = self.link_poses(&q.q)?;
        Ok(self.marker_position_in(&poses, m))
    }

    /// Writes ∂p/∂q for a world point rigidly attached to `link_joint`'s link
    /// into three rows of `out` starting at `row`. Revolute column:
    /// `axis_world × (p − joint_origin)`, zero for joints not moving the link.
    pub(crate) fn fill_point_jacobian(
        &self,
        poses: &[Transform],
        link_joint: Option<usize>,
        point: &Vec3,
        out: &mut DMatrix<f64>,
        row: usize,
        weight: f64,
    ) {
        let Some(j) = link_joint else { return };
        for k in 0..self.dof() {
            if !self.ancestors[j][k] {
                continue;
            }
            let axis = poses[k].transform_vector(&self.joints[k].axis);
            let col = axis.cross(&(point - poses[k].translation())) * weight;
            out[(row, k)] = col.x;
            out[(row + 1, k)] = col.y;
            out[(row + 2, k)] = col.z;
        }
    }

    /// Angular Jacobian rows (world-frame axes) for a link's orientation.
    pub(crate) fn fill_angular_jacobian(
        &self,
        poses: &[Transform],
        link_joint: usize,
        out: &mut DMatrix<f64>,
        row: usize,
        weight: f64,
    ) {
        for k in 0..self.dof() {
            if !self.ancestors[link_joint][k] {
                continue;
            }
            let axis = poses[k].transform_vector(&self.joints[k].axis) * weight;
            out[(row, k)] = axis.x;
            out[(row + 1, k)] = axis.y;
            out[(row + 2, k)] = axis.z;
        }
    }

    /// 3×n positional Jacobian of a named marker.
    pub fn point_jacobian(&self, q: &JointState, marker: &str) -> Result<Matrix3xX<f64>, ChainError> {
        let m = self.marker(marker)?;
        let poses = self.link_poses(&q.q)?;
        let p = self.marker_position_in(&poses, m);
        let mut j = DMatrix::zeros(3, self.dof());
        self.fill_point_jacobian(&poses, m.joint, &p, &mut j, 0, 1.0);
        Ok(Matrix3xX::from_iterator(self.dof(), j.iter().copied()))
    }
}
