//! Workspace clipping and the relative-action safety filter.
//!
//! The filter turns a stream of absolute targets into a command stream whose
//! per-period step, velocity, acceleration and jerk are bounded (Euclidean
//! norms, finite differences at the control period `dt`):
//!
//! 1. **step / velocity**: a rate-limited tracker `x` moves toward the target by
//!    at most `delta = min(max_step, max_vel * dt)` per period;
//! 2. **acceleration**: `y1` is the moving average of the last `n_acc` values
//!    of `x`, so `|Δ²y1| <= 2 delta / n_acc`;
//! 3. **jerk**: the output `y2` is the moving average of the last `n_jerk`
//!    values of `y1`, so `|Δ³y2| <= 4 delta / (n_acc n_jerk)`.
//!
//! The window lengths are the smallest integers meeting `max_acc` and
//! `max_jerk`. Averaging only forms convex combinations of tracker positions,
//! so the output never overshoots the targets and stays inside any convex
//! region (the workspace box) that contains them. Orientation is limited by
//! clamping the geodesic step angle.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionFrame, Reference};
use crate::geometry::{Pose, Quat, Vec3};
use crate::robot::RobotState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SafetyError {
    #[error("workspace min corner {min} is not strictly below max corner {max}")]
    InvalidWorkspace { min: Vec3, max: Vec3 },
    #[error("limit `{0}` must be finite and strictly positive")]
    InvalidLimit(&'static str),
}

/// Axis-aligned box in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Workspace {
    min: Vec3,
    max: Vec3,
}

impl Workspace {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, SafetyError> {
        let ok = min.is_finite()
            && max.is_finite()
            && min.x < max.x
            && min.y < max.y
            && min.z < max.z;
        if ok {
            Ok(Self { min, max })
        } else {
            Err(SafetyError::InvalidWorkspace { min, max })
        }
    }

    pub fn min(&self) -> Vec3 {
        self.min
    }

    pub fn max(&self) -> Vec3 {
        self.max
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.clip(p) == p
    }

    pub fn clip(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }
}

impl<'de> Deserialize<'de> for Workspace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Corners {
            min: Vec3,
            max: Vec3,
        }
        let c = Corners::deserialize(d)?;
        Workspace::new(c.min, c.max).map_err(serde::de::Error::custom)
    }
}

pub fn clip_to_workspace(ws: &Workspace, p: Vec3) -> Vec3 {
    ws.clip(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelLimits {
    /// m per control period
    pub max_step: f64,
    /// m/s
    pub max_vel: f64,
    /// m/s²
    pub max_acc: f64,
    /// m/s³
    pub max_jerk: f64,
    /// rad per control period
    pub max_rot_step: f64,
    /// control period, s
    pub dt: f64,
    /// Factor applied to `max_step` while the robot reports contact.
    #[serde(default = "default_contact_scale")]
    pub contact_step_scale: f64,
}

fn default_contact_scale() -> f64 {
    0.25
}

impl Default for RelLimits {
    fn default() -> Self {
        Self {
            max_step: 0.01,
            max_vel: 0.25,
            max_acc: 2.0,
            max_jerk: 50.0,
            max_rot_step: 0.02,
            dt: 0.01,
            contact_step_scale: default_contact_scale(),
        }
    }
}

impl RelLimits {
    pub fn validate(&self) -> Result<(), SafetyError> {
        let fields = [
            ("max_step", self.max_step),
            ("max_vel", self.max_vel),
            ("max_acc", self.max_acc),
            ("max_jerk", self.max_jerk),
            ("max_rot_step", self.max_rot_step),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(SafetyError::InvalidLimit(name));
            }
        }
        if !(self.contact_step_scale.is_finite()
            && self.contact_step_scale > 0.0
            && self.contact_step_scale <= 1.0)
        {
            return Err(SafetyError::InvalidLimit("contact_step_scale"));
        }
        Ok(())
    }

    /// Largest translation of the tracker per period.
    pub fn step_bound(&self) -> f64 {
        self.max_step.min(self.max_vel * self.dt)
    }

    /// Moving-average window lengths `(n_acc, n_jerk)`.
    pub fn smoothing_windows(&self) -> (usize, usize) {
        let delta = self.step_bound();
        let dt = self.dt;
        let n_acc = (2.0 * delta / (self.max_acc * dt * dt)).ceil().max(1.0);
        let n_jerk = (4.0 * delta / (n_acc * self.max_jerk * dt * dt * dt))
            .ceil()
            .max(1.0);
        (n_acc as usize, n_jerk as usize)
    }
}

/// Converts a relative action into an absolute one against the current state:
/// the translation is added in the base frame and the rotation is
/// left-multiplied onto the current orientation. Absolute actions pass
/// through unchanged.
pub fn rel_to_abs(a: &ActionFrame, state: &RobotState) -> ActionFrame {
    if a.reference == Reference::Abs {
        return *a;
    }
    let current = state.tcp_pose;
    let mut out = *a;
    out.motion.position = current.position + a.motion.position;
    out.motion.orientation = a.motion.orientation * current.orientation;
    out.reference = Reference::Abs;
    out
}

/// Memory of the rate limiter. Seeded from the robot pose; single owner.
#[derive(Debug, Clone)]
pub struct FilterState {
    limits: RelLimits,
    tracker: Vec3,
    tracker_window: VecDeque<Vec3>,
    smooth_window: VecDeque<Vec3>,
    orientation: Quat,
    // last three emitted positions, newest last
    history: [Vec3; 3],
}

impl FilterState {
    pub fn new(pose: &Pose, limits: &RelLimits) -> Result<Self, SafetyError> {
        limits.validate()?;
        let (n_acc, n_jerk) = limits.smoothing_windows();
        let p = pose.position;
        Ok(Self {
            limits: *limits,
            tracker: p,
            tracker_window: std::iter::repeat_n(p, n_acc).collect(),
            smooth_window: std::iter::repeat_n(p, n_jerk).collect(),
            orientation: pose.orientation,
            history: [p; 3],
        })
    }

    /// Re-seeds the filter at rest at `pose`.
    pub fn reset(&mut self, pose: &Pose) {
        *self = Self::new(pose, &self.limits).expect("limits validated at construction");
    }

    pub fn limits(&self) -> &RelLimits {
        &self.limits
    }

    pub fn position(&self) -> Vec3 {
        self.history[2]
    }

    pub fn orientation(&self) -> Quat {
        self.orientation
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position(), self.orientation)
    }

    /// Finite-difference velocity of the emitted stream.
    pub fn velocity(&self) -> Vec3 {
        (self.history[2] - self.history[1]) * (1.0 / self.limits.dt)
    }

    /// Finite-difference acceleration of the emitted stream.
    pub fn acceleration(&self) -> Vec3 {
        let dt = self.limits.dt;
        (self.history[2] - self.history[1] * 2.0 + self.history[0]) * (1.0 / (dt * dt))
    }

    /// Emits the next command toward `target`.
    pub fn limit(&mut self, target: &Pose, contact: bool) -> Pose {
        let mut delta = self.limits.step_bound();
        if contact {
            delta *= self.limits.contact_step_scale;
        }
        let err = target.position - self.tracker;
        self.tracker = if err.norm() <= delta {
            target.position
        } else {
            self.tracker + err.clamp_norm(delta)
        };

        let smoothed = push_and_average(&mut self.tracker_window, self.tracker);
        let out = push_and_average(&mut self.smooth_window, smoothed);
        self.history = [self.history[1], self.history[2], out];

        let angle = self.orientation.angle_to(target.orientation);
        self.orientation = if angle <= self.limits.max_rot_step {
            target.orientation
        } else {
            self.orientation
                .slerp(target.orientation, self.limits.max_rot_step / angle)
        };
        Pose::new(out, self.orientation)
    }
}

fn push_and_average(window: &mut VecDeque<Vec3>, value: Vec3) -> Vec3 {
    window.pop_front();
    window.push_back(value);
    let first = window[0];
    if window.iter().all(|v| *v == first) {
        return first;
    }
    let sum = window.iter().fold(Vec3::ZERO, |acc, v| acc + *v);
    sum * (1.0 / window.len() as f64)
}

pub fn limit(filter: &mut FilterState, target: &Pose, contact: bool) -> Pose {
    filter.limit(target, contact)
}
