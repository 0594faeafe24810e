//! Rigid transforms, unit quaternions and the VR-to-robot retargeting math.
//!
//! Keypoints arrive in a Y-up VR frame (meters). The operator turns them into
//! a wrist-relative point set, an orthonormal hand basis, and finally a robot
//! end-effector target through the composition
//! `H_target = H_robot_initial * (H_r_v^-1 * H_hand_delta * H_r_v)`.

use core::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoints::{self, Finger, KeypointFrame};
use crate::math;

pub type Vec3 = Vector3<f64>;

/// Tolerance used when validating rotation matrices and unit quaternions.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Minimum angle between the basis landmark directions (1 degree).
const MIN_BASIS_ANGLE_SIN: f64 = 0.017_452_406_437_283_51;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal with determinant +1 (deviation {deviation:e})")]
    NotARotation { deviation: f64 },
    #[error("quaternion is not unit norm (norm {norm})")]
    NotUnit { norm: f64 },
    #[error("degenerate hand basis: {0}")]
    DegenerateBasis(&'static str),
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Homogeneous rigid transform: proper rotation plus translation in meters.
///
/// The bottom row `[0 0 0 1]` is implicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Transform {
    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// determinant +1 within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let deviation = rotation_deviation(&rotation);
        if deviation > ROTATION_TOLERANCE || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation { deviation });
        }
        Ok(Self { rotation, translation })
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation of `angle` radians about a unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self { rotation: axis_angle_matrix(axis, angle), translation: Vec3::zeros() }
    }

    /// Fixed-axis roll/pitch/yaw (x then y then z), as used by the chain files.
    pub fn from_rpy(translation: Vec3, rpy: [f64; 3]) -> Self {
        let rx = axis_angle_matrix(&Vec3::x(), rpy[0]);
        let ry = axis_angle_matrix(&Vec3::y(), rpy[1]);
        let rz = axis_angle_matrix(&Vec3::z(), rpy[2]);
        Self { rotation: rz * ry * rx, translation }
    }

    pub fn from_pose(position: Vec3, orientation: &Quaternion) -> Self {
        Self { rotation: orientation.to_rotation_matrix(), translation: position }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn with_translation(mut self, translation: Vec3) -> Self {
        self.translation = translation;
        self
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        let rotation: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation)
    }

    /// Largest deviation of the rotation block from a proper rotation.
    pub fn rotation_error(&self) -> f64 {
        rotation_deviation(&self.rotation)
    }
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        Transform { rotation: self.rotation * rhs.rotation, translation: self.rotation * rhs.translation + self.translation }
    }
}

impl<'a> Mul<&'a Transform> for &'a Transform {
    type Output = Transform;

    fn mul(self, rhs: &'a Transform) -> Transform {
        *self * *rhs
    }
}

/// max |RᵀR − I| entry combined with |det R − 1|.
fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    if !r.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0_f64, |acc, v| acc.max(math::abs(*v)));
    ortho.max(math::abs(r.determinant() - 1.0))
}

pub(crate) fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    let (s, c) = (math::sin(angle), math::cos(angle));
    let k = skew(axis);
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

pub(crate) fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit quaternion `w + xi + yj + zk` representing a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new_unchecked(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Validates unit norm within [`ROTATION_TOLERANCE`].
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Self { w, x, y, z };
        let norm = q.norm();
        if !norm.is_finite() || math::abs(norm - 1.0) > ROTATION_TOLERANCE {
            return Err(GeometryError::NotUnit { norm });
        }
        Ok(q)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let half = 0.5 * angle;
        let s = math::sin(half) / n;
        Self { w: math::cos(half), x: axis.x * s, y: axis.y * s, z: axis.z * s }
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.dot(self))
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    pub fn conjugate(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            -*self
        } else {
            *self
        }
    }

    /// Rotation angle in `[0, π]` of the relative rotation `self⁻¹ * other`.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        let rel = self.conjugate() * *other;
        2.0 * math::atan2(rel.vector().norm(), math::abs(rel.w))
    }

    /// Axis-angle vector (axis scaled by angle) of this rotation, shortest arc.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = self.canonical();
        let v = q.vector();
        let s = v.norm();
        if s < 1e-15 {
            return v * 2.0;
        }
        let angle = 2.0 * math::atan2(s, q.w);
        v * (angle / s)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_rotation_matrix() * v
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Shepperd's method: picks the numerically largest component first.
    /// The result has `w >= 0`.
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = 2.0 * math::sqrt(trace + 1.0);
            Quaternion {
                w: 0.25 * s,
                x: (m[(2, 1)] - m[(1, 2)]) / s,
                y: (m[(0, 2)] - m[(2, 0)]) / s,
                z: (m[(1, 0)] - m[(0, 1)]) / s,
            }
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * math::sqrt(1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]);
            Quaternion {
                w: (m[(2, 1)] - m[(1, 2)]) / s,
                x: 0.25 * s,
                y: (m[(0, 1)] + m[(1, 0)]) / s,
                z: (m[(0, 2)] + m[(2, 0)]) / s,
            }
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * math::sqrt(1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]);
            Quaternion {
                w: (m[(0, 2)] - m[(2, 0)]) / s,
                x: (m[(0, 1)] + m[(1, 0)]) / s,
                y: 0.25 * s,
                z: (m[(1, 2)] + m[(2, 1)]) / s,
            }
        } else {
            let s = 2.0 * math::sqrt(1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]);
            Quaternion {
                w: (m[(1, 0)] - m[(0, 1)]) / s,
                x: (m[(0, 2)] + m[(2, 0)]) / s,
                y: (m[(1, 2)] + m[(2, 1)]) / s,
                z: 0.25 * s,
            }
        };
        q.normalized().canonical()
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion {
            w: l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            x: l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            y: l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            z: l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        }
    }
}

/// Per-finger scale applied to fingertip targets when mapping a human hand
/// onto the larger robot hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleProfile {
    pub thumb: f64,
    pub index: f64,
    pub middle: f64,
    pub ring: f64,
}

impl Default for ScaleProfile {
    fn default() -> Self {
        Self { thumb: 1.7, index: 1.8, middle: 1.8, ring: 1.8 }
    }
}

impl ScaleProfile {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for s in [self.thumb, self.index, self.middle, self.ring] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GeometryError::NonPositiveScale(s));
            }
        }
        Ok(())
    }

    /// Scale for a retargeted finger. The pinky is never retargeted and has
    /// no entry; asking for it returns the ring scale.
    pub fn for_finger(&self, finger: Finger) -> f64 {
        match finger {
            Finger::Thumb => self.thumb,
            Finger::Index => self.index,
            Finger::Middle => self.middle,
            Finger::Ring | Finger::Pinky => self.ring,
        }
    }
}

/// Translates every keypoint into the wrist frame: `p'_i = p_i - p_0`.
pub fn wrist_relative(frame: &KeypointFrame) -> KeypointFrame {
    let wrist = frame.points[keypoints::WRIST];
    let mut out = frame.clone();
    for p in out.points.iter_mut() {
        *p -= wrist;
    }
    out
}

/// Orthonormal hand frame from the index, middle and pinky proximal landmarks.
///
/// Columns: `b1` along the wrist→middle-knuckle direction, `b2` the lateral
/// index−pinky direction made orthogonal to `b1` (Gram–Schmidt), and
/// `b3 = b1 × b2`. Landmarks are taken relative to the wrist, so raw and
/// wrist-relative frames give the same rotation; the translation is the
/// frame's wrist point.
pub fn hand_basis(frame: &KeypointFrame) -> Result<Transform, GeometryError> {
    let wrist = frame.points[keypoints::WRIST];
    let middle = frame.points[Finger::Middle.proximal()] - wrist;
    let index = frame.points[Finger::Index.proximal()] - wrist;
    let pinky = frame.points[Finger::Pinky.proximal()] - wrist;
    let lateral = index - pinky;

    let middle_norm = middle.norm();
    let lateral_norm = lateral.norm();
    if middle_norm < 1e-9 || lateral_norm < 1e-9 {
        return Err(GeometryError::DegenerateBasis("landmark coincides with the wrist"));
    }
    let b1 = middle / middle_norm;
    let along = lateral.dot(&b1);
    let ortho = lateral - b1 * along;
    // |ortho| / |lateral| is the sine of the angle between the two directions.
    if ortho.norm() < MIN_BASIS_ANGLE_SIN * lateral_norm {
        return Err(GeometryError::DegenerateBasis("index, middle and pinky landmarks are collinear"));
    }
    let b2 = ortho.normalize();
    let b3 = b1.cross(&b2);
    let rotation = Matrix3::from_columns(&[b1, b2, b3]);
    Ok(Transform::from_parts_unchecked(rotation, wrist))
}

/// Y-up VR point to Z-up robot point with per-finger scale:
/// `p' = [-x, -z, y]`, then `p'' = s·[p'_y, -p'_x, p'_z]`.
pub fn vr_to_robot(p: &Vec3, scale: f64) -> Vec3 {
    let reflected = Vec3::new(-p.x, -p.z, p.y);
    Vec3::new(reflected.y * scale, -reflected.x * scale, reflected.z * scale)
}

/// `H_target = H_ri_rh * (H_r_v⁻¹ * H_ht_hi * H_r_v)`, evaluated as written.
pub fn compose_target(h_ri_rh: &Transform, h_r_v: &Transform, h_ht_hi: &Transform) -> Transform {
    let relative = h_r_v.inverse() * *h_ht_hi * *h_r_v;
    *h_ri_rh * relative
}

/// Position and canonical (`w >= 0`) orientation of a transform.
pub fn transform_to_pose(h: &Transform) -> (Vec3, Quaternion) {
    (*h.translation(), Quaternion::from_rotation_matrix(h.rotation()))
}
