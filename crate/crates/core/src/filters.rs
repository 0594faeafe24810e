//! Temporal smoothing: a windowed moving average for keypoint streams and a
//! complementary filter (linear blend + SLERP) for end-effector poses.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{Quaternion, Vec3};
use crate::math;

/// Below this half-angle SLERP falls back to normalized linear interpolation.
const SLERP_LINEAR_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("sample dimension changed from {expected} to {got}")]
    Dimension { expected: usize, got: usize },
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
    #[error("blend factor must lie in (0, 1], got {0}")]
    BadAlpha(f64),
}

/// Mean of the most recent `window` samples; during warm-up, of all samples
/// seen so far.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    samples: VecDeque<Vec<f64>>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Result<Self, FilterError> {
        if window == 0 {
            return Err(FilterError::ZeroWindow);
        }
        Ok(Self { window, samples: VecDeque::with_capacity(window) })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn reset(&mut self) {
        self.samples.clear();
    }

    pub fn step(&mut self, sample: &[f64]) -> Result<Vec<f64>, FilterError> {
        if let Some(first) = self.samples.front() {
            if first.len() != sample.len() {
                return Err(FilterError::Dimension { expected: first.len(), got: sample.len() });
            }
        }
        if self.samples.len() == self.window {
            self.samples.pop_front();
        }
        self.samples.push_back(sample.to_vec());
        // Summed from scratch each step so rounding never accumulates.
        let mut mean = alloc::vec![0.0; sample.len()];
        for s in &self.samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        let n = self.samples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }
}

/// Spherical linear interpolation along the shorter arc.
///
/// `q1` is negated when `q0·q1 < 0`, so `t = 1` returns `q1` up to sign.
pub fn slerp(q0: &Quaternion, q1: &Quaternion, t: f64) -> Quaternion {
    let mut end = *q1;
    let mut dot = q0.dot(q1);
    if dot < 0.0 {
        end = -end;
        dot = -dot;
    }
    // Half-angle between the two, robust near 0 where acos loses precision.
    let chord = Quaternion::new_unchecked(end.w - q0.w * dot, end.x - q0.x * dot, end.y - q0.y * dot, end.z - q0.z * dot);
    let half_angle = math::atan2(chord.norm(), dot);
    if half_angle < SLERP_LINEAR_THRESHOLD {
        let lerp = Quaternion::new_unchecked(
            q0.w + (end.w - q0.w) * t,
            q0.x + (end.x - q0.x) * t,
            q0.y + (end.y - q0.y) * t,
            q0.z + (end.z - q0.z) * t,
        );
        return lerp.normalized();
    }
    let sin_total = math::sin(half_angle);
    let a = math::sin((1.0 - t) * half_angle) / sin_total;
    let b = math::sin(t * half_angle) / sin_total;
    Quaternion::new_unchecked(a * q0.w + b * end.w, a * q0.x + b * end.x, a * q0.y + b * end.y, a * q0.z + b * end.z).normalized()
}

/// Exponential blend of a pose toward each measurement with gain `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryFilter {
    position: Vec3,
    orientation: Quaternion,
    alpha: f64,
}

impl ComplementaryFilter {
    pub fn new(alpha: f64, position: Vec3, orientation: Quaternion) -> Result<Self, FilterError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FilterError::BadAlpha(alpha));
        }
        Ok(Self { position, orientation: orientation.normalized(), alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn state(&self) -> (Vec3, Quaternion) {
        (self.position, self.orientation)
    }

    /// Re-seeds the filter, e.g. after a recalibration.
    pub fn reset(&mut self, position: Vec3, orientation: Quaternion) {
        self.position = position;
        self.orientation = orientation.normalized();
    }

    pub fn step(&mut self, measured_position: &Vec3, measured_orientation: &Quaternion) -> (Vec3, Quaternion) {
        self.position = self.position * (1.0 - self.alpha) + measured_position * self.alpha;
        self.orientation = slerp(&self.orientation, measured_orientation, self.alpha);
        (self.position, self.orientation)
    }
}
