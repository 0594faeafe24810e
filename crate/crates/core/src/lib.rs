//! Allocation-only core of the beavr teleoperation stack.
//!
//! Everything here is pure computation over owned values: VR hand retargeting
//! geometry, serial/tree kinematic chains, the damped-least-squares IK solver
//! with capsule self-collision, temporal filters, the topic frame codec and
//! the timing statistics used by the benchmark. IO, threads and sockets live
//! in the `beavr` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod filters;
pub mod geometry;
pub mod ik;
pub mod keypoints;
pub mod kinematics;
pub mod timing;
pub mod wire;

pub(crate) mod math;

pub use geometry::{Quaternion, ScaleProfile, Transform, Vec3};
pub use keypoints::{Finger, Hand, KeypointFrame, KEYPOINT_COUNT};
pub use kinematics::{JointState, KinematicChain};
pub use wire::TopicFrame;
