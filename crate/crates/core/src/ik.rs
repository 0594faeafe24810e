//! Multi-target damped-least-squares IK with capsule self-collision.
//!
//! Each iteration stacks the weighted position errors of all targets (and an
//! optional orientation error) into `e`, the matching rows of the Jacobian
//! into `J`, and steps `Δq = Jᵀ(JJᵀ + λ²I)⁻¹e`. The step is scaled so no
//! joint moves more than the clamp and the result is clamped to the joint
//! limits. An iterate is accepted only when it strictly lowers the largest
//! target error and does not introduce a self-collision.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{vr_to_robot, Quaternion, ScaleProfile, Transform, Vec3};
use crate::keypoints::{Finger, KeypointFrame};
use crate::kinematics::{ChainError, JointState, KinematicChain};

/// Step halvings tried in each iteration's line search.
const MAX_BACKTRACKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IkError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("no targets given")]
    NoTargets,
    #[error("target weight must be positive, got {0}")]
    BadWeight(f64),
    #[error("invalid solver settings: {0}")]
    BadSettings(&'static str),
}

/// Desired world position for a named marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkTarget {
    pub marker: String,
    pub desired: Vec3,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl IkTarget {
    pub fn new(marker: impl Into<String>, desired: Vec3) -> Self {
        Self { marker: marker.into(), desired, weight: 1.0 }
    }
}

/// Full pose goal for an arm: a marker position plus the orientation of the
/// marker's link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTarget {
    pub marker: String,
    pub position: Vec3,
    pub orientation: Quaternion,
    /// Relative weight of the orientation rows (meters per radian).
    #[serde(default = "default_orientation_weight")]
    pub orientation_weight: f64,
}

fn default_orientation_weight() -> f64 {
    0.2
}

impl PoseTarget {
    pub fn new(marker: impl Into<String>, position: Vec3, orientation: Quaternion) -> Self {
        Self { marker: marker.into(), position, orientation, orientation_weight: default_orientation_weight() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkSettings {
    pub damping: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the largest target error, meters.
    pub tolerance: f64,
    /// Largest per-joint change in one iteration, radians.
    pub step_clamp: f64,
    pub collision_margin: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self { damping: 0.05, max_iterations: 100, tolerance: 1e-3, step_clamp: 0.2, collision_margin: 0.005 }
    }
}

impl IkSettings {
    pub fn validate(&self) -> Result<(), IkError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.damping) {
            return Err(IkError::BadSettings("damping must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(IkError::BadSettings("max_iterations must be positive"));
        }
        if !positive(self.tolerance) {
            return Err(IkError::BadSettings("tolerance must be positive"));
        }
        if !positive(self.step_clamp) {
            return Err(IkError::BadSettings("step_clamp must be positive"));
        }
        if !positive(self.collision_margin) {
            return Err(IkError::BadSettings("collision_margin must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub q: JointState,
    /// Largest remaining target error, meters (orientation error counts in
    /// radians for pose goals).
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub collision_blocked: bool,
}

/// A pair of links whose capsules come closer than the margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionPair {
    pub a: usize,
    pub b: usize,
    /// Surface distance (axis distance minus both radii); negative when
    /// the capsules overlap.
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollisionReport {
    pub pairs: Vec<CollisionPair>,
}

impl CollisionReport {
    pub fn is_clear(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Line-search iterate: joints, link poses, error vector, worst residual.
type Candidate = (Vec<f64>, Vec<Transform>, DVector<f64>, f64);

/// Compiled target: marker joint/offset resolved once per solve.
struct ResolvedPoint {
    joint: Option<usize>,
    offset: Vec3,
    desired: Vec3,
    weight: f64,
}

struct ResolvedOrientation {
    joint: usize,
    desired: Quaternion,
    weight: f64,
}

struct Problem<'a> {
    chain: &'a KinematicChain,
    points: Vec<ResolvedPoint>,
    orientation: Option<ResolvedOrientation>,
}

impl Problem<'_> {
    fn rows(&self) -> usize {
        3 * self.points.len() + if self.orientation.is_some() { 3 } else { 0 }
    }

    /// Weighted error vector and the largest unweighted target error.
    fn error(&self, poses: &[Transform]) -> (DVector<f64>, f64) {
        let mut e = DVector::zeros(self.rows());
        let mut worst = 0.0_f64;
        for (i, t) in self.points.iter().enumerate() {
            let p = match t.joint {
                Some(j) => poses[j].transform_point(&t.offset),
                None => t.offset,
            };
            let d = t.desired - p;
            worst = worst.max(d.norm());
            e.fixed_rows_mut::<3>(3 * i).copy_from(&(d * t.weight));
        }
        if let Some(o) = &self.orientation {
            let current = Quaternion::from_rotation_matrix(poses[o.joint].rotation());
            let rv = (o.desired * current.conjugate()).to_rotation_vector();
            worst = worst.max(rv.norm());
            let row = 3 * self.points.len();
            e.fixed_rows_mut::<3>(row).copy_from(&(rv * o.weight));
        }
        (e, worst)
    }

    fn jacobian(&self, poses: &[Transform]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.rows(), self.chain.dof());
        for (i, t) in self.points.iter().enumerate() {
            let p = match t.joint {
                Some(j) => poses[j].transform_point(&t.offset),
                None => t.offset,
            };
            self.chain.fill_point_jacobian(poses, t.joint, &p, &mut jac, 3 * i, t.weight);
        }
        if let Some(o) = &self.orientation {
            self.chain.fill_angular_jacobian(poses, o.joint, &mut jac, 3 * self.points.len(), o.weight);
        }
        jac
    }
}

fn resolve_point(chain: &KinematicChain, t: &IkTarget) -> Result<ResolvedPoint, IkError> {
    if !(t.weight > 0.0 && t.weight.is_finite()) {
        return Err(IkError::BadWeight(t.weight));
    }
    let m = chain.marker(&t.marker)?;
    Ok(ResolvedPoint { joint: m.joint, offset: m.offset, desired: t.desired, weight: t.weight })
}

/// Position-only multi-target solve, warm-started from `seed`.
pub fn solve_dls(
    chain: &KinematicChain,
    seed: &JointState,
    targets: &[IkTarget],
    settings: &IkSettings,
) -> Result<IkResult, IkError> {
    if targets.is_empty() {
        return Err(IkError::NoTargets);
    }
    let points = targets.iter().map(|t| resolve_point(chain, t)).collect::<Result<Vec<_>, _>>()?;
    solve(&Problem { chain, points, orientation: None }, seed, settings)
}

/// Six-dimensional pose solve on the same DLS core; the orientation error is
/// the rotation vector of `R_desired · R_currentᵀ`.
pub fn solve_pose_dls(
    chain: &KinematicChain,
    seed: &JointState,
    target: &PoseTarget,
    settings: &IkSettings,
) -> Result<IkResult, IkError> {
    let point = resolve_point(chain, &IkTarget::new(target.marker.clone(), target.position))?;
    let joint = point.joint.ok_or(IkError::Chain(ChainError::UnknownLink(crate::kinematics::BASE_LINK.into())))?;
    // also rejects NaN
    if target.orientation_weight.partial_cmp(&0.0) != Some(core::cmp::Ordering::Greater) {
        return Err(IkError::BadWeight(target.orientation_weight));
    }
    let orientation =
        Some(ResolvedOrientation { joint, desired: target.orientation.normalized(), weight: target.orientation_weight });
    solve(&Problem { chain, points: alloc::vec![point], orientation }, seed, settings)
}

fn solve(problem: &Problem<'_>, seed: &JointState, settings: &IkSettings) -> Result<IkResult, IkError> {
    settings.validate()?;
    let chain = problem.chain;
    chain.check_dimension(&seed.q)?;

    let mut q = seed.q.clone();
    chain.clamp_to_limits(&mut q);
    let mut poses = chain.link_poses(&q)?;
    let (mut e, mut worst) = problem.error(&poses);
    let mut currently_clear = check_collision_poses(chain, &poses, settings.collision_margin).is_clear();
    let mut iterations = 0;
    let mut collision_blocked = false;
    let lambda_sq = settings.damping * settings.damping;
    let rows = problem.rows();

    while worst >= settings.tolerance && iterations < settings.max_iterations {
        let jac = problem.jacobian(&poses);
        let mut damped = &jac * jac.transpose();
        for i in 0..rows {
            damped[(i, i)] += lambda_sq;
        }
        let Some(chol) = damped.cholesky() else { break };
        let mut dq = jac.transpose() * chol.solve(&e);
        // Scaling the whole step keeps every joint within the clamp without
        // bending the DLS direction.
        let largest = dq.amax();
        if largest > settings.step_clamp {
            dq *= settings.step_clamp / largest;
        }

        // Short line search over halvings; the best strict improvement wins.
        let mut accepted: Option<Candidate> = None;
        let mut scale = 1.0;
        for _ in 0..=MAX_BACKTRACKS {
            let mut candidate: Vec<f64> = q.iter().zip(dq.iter()).map(|(a, d)| a + d * scale).collect();
            chain.clamp_to_limits(&mut candidate);
            let cand_poses = chain.link_poses(&candidate)?;
            let (cand_e, cand_worst) = problem.error(&cand_poses);
            let best = accepted.as_ref().map_or(worst, |a| a.3);
            if cand_worst < best {
                accepted = Some((candidate, cand_poses, cand_e, cand_worst));
            }
            scale *= 0.5;
        }
        let Some((candidate, cand_poses, cand_e, cand_worst)) = accepted else { break };

        // An iterate that newly collides is rolled back and the solve stops.
        let clear = check_collision_poses(chain, &cand_poses, settings.collision_margin).is_clear();
        if currently_clear && !clear {
            collision_blocked = true;
            break;
        }
        iterations += 1;
        q = candidate;
        poses = cand_poses;
        e = cand_e;
        worst = cand_worst;
        currently_clear = clear;
    }

    Ok(IkResult {
        q: JointState { q, timestamp_ns: seed.timestamp_ns },
        residual: worst,
        iterations,
        converged: worst < settings.tolerance,
        collision_blocked,
    })
}

/// Capsule endpoints of every link in world coordinates.
pub fn capsule_segments(chain: &KinematicChain, poses: &[Transform]) -> Vec<(Vec3, Vec3)> {
    chain
        .joints()
        .iter()
        .zip(poses)
        .map(|(joint, pose)| (*pose.translation(), pose.transform_point(&joint.capsule_end)))
        .collect()
}

/// Reports every non-adjacent link pair whose capsules are closer than
/// `margin` (surface to surface).
pub fn check_collision(chain: &KinematicChain, q: &JointState, margin: f64) -> Result<CollisionReport, ChainError> {
    let poses = chain.link_poses(&q.q)?;
    Ok(check_collision_poses(chain, &poses, margin))
}

fn check_collision_poses(chain: &KinematicChain, poses: &[Transform], margin: f64) -> CollisionReport {
    let segments = capsule_segments(chain, poses);
    let diameter = 2.0 * chain.capsule_radius();
    let mut pairs = Vec::new();
    for a in 0..segments.len() {
        for b in (a + 1)..segments.len() {
            if chain.adjacent(a, b) {
                continue;
            }
            let axis = segment_distance(&segments[a].0, &segments[a].1, &segments[b].0, &segments[b].1);
            let distance = axis - diameter;
            if distance < margin {
                pairs.push(CollisionPair { a, b, distance });
            }
        }
    }
    CollisionReport { pairs }
}

/// Closest distance between segments `p1q1` and `p2q2`.
pub fn segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}

/// Marker names bound to fingertip targets, in target order.
pub fn fingertip_marker_names() -> [(Finger, &'static str, &'static str); 4] {
    [
        (Finger::Thumb, "thumb_distal", "thumb_tip"),
        (Finger::Index, "index_distal", "index_tip"),
        (Finger::Middle, "middle_distal", "middle_tip"),
        (Finger::Ring, "ring_distal", "ring_tip"),
    ]
}

/// Eight targets: distal and tip landmarks of thumb, index, middle and ring,
/// each mapped through [`vr_to_robot`] with that finger's scale. Expects a
/// wrist-relative frame.
pub fn fingertip_targets_from_hand(frame: &KeypointFrame, profile: &ScaleProfile) -> Vec<IkTarget> {
    let mut out = Vec::with_capacity(8);
    for (finger, distal, tip) in fingertip_marker_names() {
        let s = profile.for_finger(finger);
        out.push(IkTarget::new(distal, vr_to_robot(&frame.points[finger.distal()], s)));
        out.push(IkTarget::new(tip, vr_to_robot(&frame.points[finger.tip()], s)));
    }
    out
}
