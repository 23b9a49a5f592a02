//! Robot and gripper contracts plus a deterministic simulated Cartesian robot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionFrame, GripperAction, GripperCommand, PathMode, Reference};
use crate::geometry::{Pose, Quat, Vec3};
use crate::safety::Workspace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobotError {
    #[error("relative action reached the robot layer; convert it with rel_to_abs first")]
    RelActionRejected,
    #[error("target {target} lies outside the workspace")]
    TargetOutsideWorkspace { target: Vec3 },
    #[error("motion did not converge within {timeout} s")]
    Timeout { timeout: f64 },
    #[error("gripper width {width} m outside [0, {max_width}] m")]
    WidthOutOfRange { width: f64, max_width: f64 },
    #[error("invalid robot config: `{0}` must be finite and strictly positive")]
    InvalidConfig(&'static str),
}

/// Observable robot state. All fields come from the same control tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub tcp_pose: Pose,
    pub tcp_velocity: Vec3,
    pub gripper_width: f64,
    pub moving: bool,
    /// Set when the robot reports contact; scales the safety step bound.
    #[serde(default)]
    pub contact: bool,
    pub timestamp: f64,
}

impl Default for RobotState {
    fn default() -> Self {
        Self {
            tcp_pose: Pose::IDENTITY,
            tcp_velocity: Vec3::ZERO,
            gripper_width: 0.0,
            moving: false,
            contact: false,
            timestamp: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTolerance {
    /// m
    pub position: f64,
    /// rad
    pub rotation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimRobotConfig {
    pub neutral_pose: Pose,
    pub dt: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub omega_max: f64,
    pub goal_tolerance: GoalTolerance,
    pub blocking_timeout: f64,
    pub gripper_speed: f64,
    pub max_width: f64,
}

impl Default for SimRobotConfig {
    fn default() -> Self {
        Self {
            // tool z axis pointing down at the table
            neutral_pose: Pose::new(
                Vec3::new(0.4, 0.0, 0.3),
                Quat::from_axis_angle(Vec3::X, std::f64::consts::PI),
            ),
            dt: 0.01,
            v_max: 0.25,
            a_max: 1.0,
            omega_max: 1.0,
            goal_tolerance: GoalTolerance {
                position: 1e-3,
                rotation: 0.5f64.to_radians(),
            },
            blocking_timeout: 10.0,
            gripper_speed: 0.08,
            max_width: 0.08,
        }
    }
}

impl SimRobotConfig {
    pub fn validate(&self) -> Result<(), RobotError> {
        let fields = [
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("omega_max", self.omega_max),
            ("goal_tolerance.position", self.goal_tolerance.position),
            ("goal_tolerance.rotation", self.goal_tolerance.rotation),
            ("blocking_timeout", self.blocking_timeout),
            ("gripper_speed", self.gripper_speed),
            ("max_width", self.max_width),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(RobotError::InvalidConfig(name));
            }
        }
        if !self.neutral_pose.is_finite() {
            return Err(RobotError::InvalidConfig("neutral_pose"));
        }
        Ok(())
    }

    /// Angular acceleration cap, scaled like the translational one.
    pub fn alpha_max(&self) -> f64 {
        self.omega_max * self.a_max / self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionStatus {
    /// Within goal tolerance of the target.
    Reached,
    /// Non-blocking call; motion continues as the clock advances.
    Pending,
    /// Blocking call gave up after `blocking_timeout`.
    TimedOut,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionHandle {
    pub status: MotionStatus,
    pub target: Pose,
    /// Time spent inside the call (sim seconds for the sim backend).
    pub elapsed: f64,
}

impl MotionHandle {
    pub fn is_reached(&self) -> bool {
        self.status == MotionStatus::Reached
    }
}

pub trait Gripper {
    fn gripper_move(&mut self, g: GripperCommand);
    fn gripper_move_to(&mut self, width: f64) -> Result<(), RobotError>;
    fn gripper_width(&self) -> f64;
    fn max_width(&self) -> f64;
}

pub trait Robot: Gripper + Send {
    fn move_cart_pos(&mut self, action: &ActionFrame) -> Result<MotionHandle, RobotError>;
    fn move_to_neutral(&mut self) -> Result<MotionHandle, RobotError>;
    fn get_state(&self) -> RobotState;
    /// Control period in seconds.
    fn control_period(&self) -> f64;
    /// Lets one control period elapse. Live backends sleep; the sim integrates.
    fn advance(&mut self);
    fn workspace(&self) -> Option<&Workspace>;
}

// distances below this count as arrived (m, rad, or fraction of a Lin segment)
const ARRIVAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
enum Motion {
    Idle,
    Ptp {
        target: Pose,
    },
    Lin {
        start: Pose,
        target: Pose,
        progress: f64,
        rate: f64,
        rate_max: f64,
        rate_acc: f64,
    },
    /// Decelerating along the current velocity before a motion that cannot
    /// start from the current velocity.
    Braking {
        next: Pose,
        path: PathMode,
    },
}

/// Deterministic Cartesian robot integrated at a fixed control period.
#[derive(Debug, Clone)]
pub struct SimRobot {
    config: SimRobotConfig,
    workspace: Option<Workspace>,
    pose: Pose,
    velocity: Vec3,
    angular_speed: f64,
    motion: Motion,
    gripper_width: f64,
    gripper_target: f64,
    contact: bool,
    ticks: u64,
}

impl SimRobot {
    pub fn new(config: SimRobotConfig) -> Result<Self, RobotError> {
        config.validate()?;
        Ok(Self {
            config,
            workspace: None,
            pose: config.neutral_pose,
            velocity: Vec3::ZERO,
            angular_speed: 0.0,
            motion: Motion::Idle,
            gripper_width: config.max_width,
            gripper_target: config.max_width,
            contact: false,
            ticks: 0,
        })
    }

    pub fn with_workspace(mut self, ws: Workspace) -> Self {
        self.workspace = Some(ws);
        self
    }

    pub fn config(&self) -> &SimRobotConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.config.dt
    }

    pub fn is_moving(&self) -> bool {
        !matches!(self.motion, Motion::Idle) || self.gripper_width != self.gripper_target
    }

    /// Force hook: the sim has no contact model, so tests set the flag.
    pub fn set_contact(&mut self, contact: bool) {
        self.contact = contact;
    }

    fn within_tolerance(&self, target: &Pose) -> bool {
        let (d, a) = self.pose.distance_to(target);
        d <= self.config.goal_tolerance.position && a <= self.config.goal_tolerance.rotation
    }

    fn check_workspace(&self, p: Vec3) -> Result<(), RobotError> {
        match &self.workspace {
            Some(ws) if !ws.contains(p) => Err(RobotError::TargetOutsideWorkspace { target: p }),
            _ => Ok(()),
        }
    }

    fn axis_cap(&self) -> (f64, f64) {
        let s = 3f64.sqrt();
        (self.config.v_max / s, self.config.a_max / s)
    }

    fn can_start(&self, target: &Pose, path: PathMode) -> bool {
        let v = self.velocity;
        if v == Vec3::ZERO {
            return true;
        }
        match path {
            PathMode::Ptp => {
                let (vc, _) = self.axis_cap();
                // velocities are rebuilt from positions, allow for rounding
                (0..3).all(|i| v.get(i).abs() <= vc * (1.0 + 1e-9))
            }
            PathMode::Lin => {
                let delta = target.position - self.pose.position;
                let len = delta.norm();
                let Some(dir) = delta.normalized() else {
                    return false;
                };
                let along = v.dot(dir);
                let lateral = (v - dir * along).norm();
                if lateral > 1e-12 || along < 0.0 {
                    return false;
                }
                let (rate_max, rate_acc) = self.lin_caps(&self.pose, target);
                let rate = along / len;
                let dv = rate_acc * self.config.dt;
                rate <= rate_max + dv
                    && (rate - dv).max(0.0) <= braking_speed(1.0, rate_acc, self.config.dt)
            }
        }
    }

    fn lin_caps(&self, start: &Pose, target: &Pose) -> (f64, f64) {
        let (len, angle) = start.distance_to(target);
        let c = &self.config;
        let mut rate_max = f64::INFINITY;
        let mut rate_acc = f64::INFINITY;
        if len > 0.0 {
            rate_max = rate_max.min(c.v_max / len);
            rate_acc = rate_acc.min(c.a_max / len);
        }
        if angle > 0.0 {
            rate_max = rate_max.min(c.omega_max / angle);
            rate_acc = rate_acc.min(c.alpha_max() / angle);
        }
        (rate_max, rate_acc)
    }

    fn begin(&mut self, target: Pose, path: PathMode) {
        if self.velocity == Vec3::ZERO && self.pose == target {
            self.motion = Motion::Idle;
            self.angular_speed = 0.0;
            return;
        }
        if !self.can_start(&target, path) {
            self.motion = Motion::Braking { next: target, path };
            return;
        }
        self.motion = match path {
            PathMode::Ptp => Motion::Ptp { target },
            PathMode::Lin => {
                let (rate_max, rate_acc) = self.lin_caps(&self.pose, &target);
                let len = self.pose.position.distance(target.position);
                let rate = if len > 0.0 {
                    self.velocity.norm() / len
                } else {
                    0.0
                };
                self.angular_speed = 0.0;
                Motion::Lin {
                    start: self.pose,
                    target,
                    progress: 0.0,
                    rate,
                    rate_max,
                    rate_acc,
                }
            }
        };
    }

    fn command_gripper(&mut self, action: GripperAction) {
        self.gripper_target = match action {
            GripperAction::Open => self.config.max_width,
            GripperAction::Close => 0.0,
        };
    }

    fn run_blocking(&mut self, target: Pose) -> MotionHandle {
        let t0 = self.time();
        loop {
            let elapsed = self.time() - t0;
            if matches!(self.motion, Motion::Idle) && self.within_tolerance(&target) {
                return MotionHandle {
                    status: MotionStatus::Reached,
                    target,
                    elapsed,
                };
            }
            if elapsed >= self.config.blocking_timeout {
                return MotionHandle {
                    status: MotionStatus::TimedOut,
                    target,
                    elapsed,
                };
            }
            self.sim_step(self.config.dt);
        }
    }

    /// Advances the simulated control loop by one period. The integrator is
    /// defined per control period, so `dt` is only checked for positivity.
    pub fn sim_step(&mut self, dt: f64) {
        assert!(dt > 0.0, "sim_step requires dt > 0");
        let dt = self.config.dt;
        self.ticks += 1;
        self.step_gripper(dt);

        match self.motion {
            Motion::Idle => {
                self.velocity = Vec3::ZERO;
                self.angular_speed = 0.0;
            }
            Motion::Braking { next, path } => {
                let speed = self.velocity.norm();
                let slower = (speed - self.config.a_max * dt).max(0.0);
                let v = if slower > 0.0 {
                    self.velocity * (slower / speed)
                } else {
                    Vec3::ZERO
                };
                self.pose.position += v * dt;
                self.velocity = v;
                self.angular_speed = 0.0;
                if v == Vec3::ZERO {
                    self.begin(next, path);
                }
            }
            Motion::Ptp { target } => self.step_ptp(target, dt),
            Motion::Lin {
                start,
                target,
                progress,
                rate,
                rate_max,
                rate_acc,
            } => {
                let (new_rate, arrived) = approach(1.0 - progress, rate, rate_max, rate_acc, dt);
                let old = self.pose.position;
                if arrived {
                    self.pose = target;
                    self.velocity = (target.position - old) * (1.0 / dt);
                    self.motion = Motion::Idle;
                    return;
                }
                let u = progress + new_rate * dt;
                let p = start.position + (target.position - start.position) * u;
                self.pose = Pose::new(p, start.orientation.slerp(target.orientation, u));
                self.velocity = (p - old) * (1.0 / dt);
                self.motion = Motion::Lin {
                    start,
                    target,
                    progress: u,
                    rate: new_rate,
                    rate_max,
                    rate_acc,
                };
            }
        }
    }

    fn step_ptp(&mut self, target: Pose, dt: f64) {
        let (vc, ac) = self.axis_cap();
        let old = self.pose.position;
        let mut p = old;
        let mut done = true;
        for i in 0..3 {
            let remaining = target.position.get(i) - old.get(i);
            let (v, arrived) = approach_signed(remaining, self.velocity.get(i), vc, ac, dt);
            if arrived {
                p.set(i, target.position.get(i));
            } else {
                p.set(i, old.get(i) + v * dt);
                done = false;
            }
        }

        let angle = self.pose.orientation.angle_to(target.orientation);
        let (w, arrived) = approach(
            angle,
            self.angular_speed,
            self.config.omega_max,
            self.config.alpha_max(),
            dt,
        );
        let q = if arrived || w * dt >= angle {
            self.angular_speed = 0.0;
            target.orientation
        } else {
            done = false;
            self.angular_speed = w;
            self.pose.orientation.slerp(target.orientation, w * dt / angle)
        };

        self.pose = Pose::new(p, q);
        self.velocity = (p - old) * (1.0 / dt);
        if done {
            self.pose = target;
            self.motion = Motion::Idle;
        }
    }

    fn step_gripper(&mut self, dt: f64) {
        let diff = self.gripper_target - self.gripper_width;
        let step = self.config.gripper_speed * dt;
        if diff.abs() <= step + 1e-12 {
            self.gripper_width = self.gripper_target;
        } else {
            self.gripper_width += step.copysign(diff);
        }
    }
}

/// Largest speed from which a discrete accel-limited profile (decrement
/// `a*dt` per period) stops exactly within `remaining`.
pub fn braking_speed(remaining: f64, a: f64, dt: f64) -> f64 {
    if remaining <= 0.0 {
        return 0.0;
    }
    if !a.is_finite() {
        return f64::INFINITY;
    }
    let dv = a * dt;
    let unit = dv * dt;
    // n whole deceleration periods after the current one
    let mut n = (((1.0 + 8.0 * remaining / unit).sqrt() - 1.0) / 2.0).floor();
    let tri = |n: f64| unit * n * (n + 1.0) / 2.0;
    while n > 0.0 && tri(n) > remaining {
        n -= 1.0;
    }
    while tri(n + 1.0) <= remaining {
        n += 1.0;
    }
    (remaining / dt + dv * n * (n + 1.0) / 2.0) / (n + 1.0)
}

/// One period of approach toward a point `remaining >= 0` ahead, starting at
/// `speed` (positive toward the target). Returns the new speed and whether
/// the target is reached this period.
fn approach(remaining: f64, speed: f64, v_cap: f64, a_cap: f64, dt: f64) -> (f64, bool) {
    let dv = a_cap * dt;
    let hi = (speed + dv).min(v_cap).min(braking_speed(remaining, a_cap, dt));
    let lo = (speed - dv).max(-v_cap);
    let v = if hi >= lo { hi } else { lo };
    let arrived = (remaining - v * dt).abs() <= ARRIVAL_EPS && v.abs() <= dv * (1.0 + 1e-9);
    (v, arrived)
}

fn approach_signed(remaining: f64, speed: f64, v_cap: f64, a_cap: f64, dt: f64) -> (f64, bool) {
    let dir = if remaining < 0.0 { -1.0 } else { 1.0 };
    let (v, arrived) = approach(remaining * dir, speed * dir, v_cap, a_cap, dt);
    (v * dir, arrived)
}

impl Gripper for SimRobot {
    fn gripper_move(&mut self, g: GripperCommand) {
        self.command_gripper(g.discretize());
    }

    fn gripper_move_to(&mut self, width: f64) -> Result<(), RobotError> {
        if !(width.is_finite() && (0.0..=self.config.max_width).contains(&width)) {
            return Err(RobotError::WidthOutOfRange {
                width,
                max_width: self.config.max_width,
            });
        }
        self.gripper_target = width;
        Ok(())
    }

    fn gripper_width(&self) -> f64 {
        self.gripper_width
    }

    fn max_width(&self) -> f64 {
        self.config.max_width
    }
}

impl Robot for SimRobot {
    fn move_cart_pos(&mut self, action: &ActionFrame) -> Result<MotionHandle, RobotError> {
        if action.reference == Reference::Rel {
            return Err(RobotError::RelActionRejected);
        }
        let target = action.motion.pose();
        self.check_workspace(target.position)?;
        self.command_gripper(action.motion.gripper.discretize());
        self.begin(target, action.path);
        if action.blocking {
            Ok(self.run_blocking(target))
        } else {
            Ok(MotionHandle {
                status: if matches!(self.motion, Motion::Idle) && self.within_tolerance(&target) {
                    MotionStatus::Reached
                } else {
                    MotionStatus::Pending
                },
                target,
                elapsed: 0.0,
            })
        }
    }

    fn move_to_neutral(&mut self) -> Result<MotionHandle, RobotError> {
        let neutral = self.config.neutral_pose;
        self.check_workspace(neutral.position)?;
        self.begin(neutral, PathMode::Ptp);
        let handle = self.run_blocking(neutral);
        match handle.status {
            MotionStatus::TimedOut => Err(RobotError::Timeout {
                timeout: self.config.blocking_timeout,
            }),
            _ => Ok(handle),
        }
    }

    fn get_state(&self) -> RobotState {
        RobotState {
            tcp_pose: self.pose,
            tcp_velocity: self.velocity,
            gripper_width: self.gripper_width,
            moving: self.is_moving(),
            contact: self.contact,
            timestamp: self.time(),
        }
    }

    fn control_period(&self) -> f64 {
        self.config.dt
    }

    fn advance(&mut self) {
        self.sim_step(self.config.dt);
    }

    fn workspace(&self) -> Option<&Workspace> {
        self.workspace.as_ref()
    }
}
