//! Reference implementations used as test oracles. Written independently of
//! the production code paths they check.
#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roboshim::actions::{ActionFrame, GripperCommand, PathMode};
use roboshim::calibration::PoseObservation;
use roboshim::camera::{Intrinsics, Scene, SyntheticCamera};
use roboshim::environment::{CameraManager, CameraRecord, CameraSource, Mount, RobotEnv};
use roboshim::geometry::{Pose, Quat, Vec3};
use roboshim::robot::{Robot, RobotState, SimRobot, SimRobotConfig};
use roboshim::safety::{clip_to_workspace, rel_to_abs, FilterState, RelLimits, Workspace};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

pub fn random_quat(rng: &mut impl Rng) -> Quat {
    loop {
        let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n2: f64 = c.iter().map(|v| v * v).sum();
        if n2 > 0.01 && n2 <= 1.0 {
            return Quat::normalize(c[0], c[1], c[2], c[3]).unwrap();
        }
    }
}

pub fn random_vec(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi))
}

pub fn random_pose(rng: &mut impl Rng, extent: f64) -> Pose {
    Pose::new(random_vec(rng, -extent, extent), random_quat(rng))
}

/// Rotation matrix from axis and angle (Rodrigues), independent of the
/// quaternion formulas.
pub fn rodrigues(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let k = axis * (1.0 / axis.norm());
    let (s, c) = angle.sin_cos();
    let kk = [[0.0, -k.z, k.y], [k.z, 0.0, -k.x], [-k.y, k.x, 0.0]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut k2 = 0.0;
            for m in 0..3 {
                k2 += kk[i][m] * kk[m][j];
            }
            r[i][j] = if i == j { 1.0 } else { 0.0 } + s * kk[i][j] + (1.0 - c) * k2;
        }
    }
    r
}

pub fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|m| a[i][m] * b[m][j]).sum();
        }
    }
    r
}

pub fn mat_vec(a: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    let x = [v.x, v.y, v.z];
    let r: [f64; 3] = std::array::from_fn(|i| (0..3).map(|m| a[i][m] * x[m]).sum());
    Vec3::new(r[0], r[1], r[2])
}

pub fn mat_max_diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

// ---------------------------------------------------------------- sim oracle

/// Distance covered when decelerating from `v` by `a*dt` per period until
/// stopped, by direct summation.
pub fn stopping_distance(v: f64, a: f64, dt: f64) -> f64 {
    let mut s = v;
    let mut d = 0.0;
    while s > 0.0 {
        d += s * dt;
        s -= a * dt;
    }
    d
}

/// Largest speed whose stopping distance fits in `r`, by bisection.
pub fn braking_speed_oracle(r: f64, a: f64, dt: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = r / dt + a * dt * (r / (a * dt * dt)).sqrt() * 2.0 + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if stopping_distance(mid, a, dt) <= r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// One axis of the point-to-point sim: greedy speed choice under the speed
/// cap, the acceleration cap and the stopping constraint.
#[derive(Debug, Clone, Copy)]
pub struct AxisOracle {
    pub pos: f64,
    pub vel: f64,
}

impl AxisOracle {
    pub fn step(&mut self, target: f64, v_cap: f64, a_cap: f64, dt: f64) {
        let r = target - self.pos;
        let dir = if r < 0.0 { -1.0 } else { 1.0 };
        let (r, v) = (r * dir, self.vel * dir);
        let dv = a_cap * dt;
        let hi = (v + dv).min(v_cap).min(braking_speed_oracle(r, a_cap, dt));
        let lo = (v - dv).max(-v_cap);
        let next = if hi >= lo { hi } else { lo };
        let old = self.pos;
        if (r - next * dt).abs() <= 1e-12 && next.abs() <= dv * (1.0 + 1e-9) {
            self.pos = target;
        } else {
            self.pos += next * dt * dir;
        }
        self.vel = (self.pos - old) / dt;
    }
}

/// Translation-only point-to-point sim reference.
#[derive(Debug, Clone, Copy)]
pub struct PtpOracle {
    pub axes: [AxisOracle; 3],
}

impl PtpOracle {
    pub fn at(p: Vec3) -> Self {
        Self {
            axes: [0, 1, 2].map(|i| AxisOracle { pos: p.get(i), vel: 0.0 }),
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.axes[0].pos, self.axes[1].pos, self.axes[2].pos)
    }

    pub fn step(&mut self, target: Vec3, cfg: &SimRobotConfig) {
        let s = 3f64.sqrt();
        for i in 0..3 {
            self.axes[i].step(target.get(i), cfg.v_max / s, cfg.a_max / s, cfg.dt);
        }
    }
}

// ------------------------------------------------------------- filter oracle

/// Stepwise reference of the rate limiter: a step-clamped tracker followed by
/// two moving averages over the complete history (history before the first
/// sample is the start position).
pub struct FilterOracle {
    pub delta: f64,
    pub n1: usize,
    pub n2: usize,
    pub start: Vec3,
    pub xs: Vec<Vec3>,
    pub y1s: Vec<Vec3>,
    pub out: Vec<Vec3>,
}

pub fn smallest_window(bound_numerator: f64, limit: f64) -> usize {
    let mut n = 1usize;
    while bound_numerator / n as f64 > limit {
        n += 1;
    }
    n
}

impl FilterOracle {
    pub fn new(limits: &RelLimits, start: Vec3) -> Self {
        let delta = limits.max_step.min(limits.max_vel * limits.dt);
        let dt = limits.dt;
        let n1 = smallest_window(2.0 * delta / (dt * dt), limits.max_acc);
        let n2 = smallest_window(4.0 * delta / (n1 as f64 * dt * dt * dt), limits.max_jerk);
        Self {
            delta,
            n1,
            n2,
            start,
            xs: Vec::new(),
            y1s: Vec::new(),
            out: Vec::new(),
        }
    }

    fn x(&self, k: isize) -> Vec3 {
        if k < 0 {
            self.start
        } else {
            self.xs[k as usize]
        }
    }

    fn y1(&self, k: isize) -> Vec3 {
        if k < 0 {
            self.start
        } else {
            self.y1s[k as usize]
        }
    }

    pub fn step(&mut self, target: Vec3) -> Vec3 {
        let prev = self.x(self.xs.len() as isize - 1);
        let e = target - prev;
        let n = e.norm();
        let x = if n <= self.delta { target } else { prev + e * (self.delta / n) };
        self.xs.push(x);
        let k = self.xs.len() as isize - 1;
        let mut s = Vec3::ZERO;
        for i in (0..self.n1 as isize).rev() {
            s = s + self.x(k - i);
        }
        let y1 = s * (1.0 / self.n1 as f64);
        self.y1s.push(y1);
        let mut s = Vec3::ZERO;
        for i in (0..self.n2 as isize).rev() {
            s = s + self.y1(k - i);
        }
        let y2 = s * (1.0 / self.n2 as f64);
        self.out.push(y2);
        y2
    }
}

// ------------------------------------------------------------ hand-eye data

/// Noise-free eye-in-hand observations for ground truth `x` (camera in TCP)
/// and a static marker in the base frame.
pub fn eye_in_hand_observations(rng: &mut impl Rng, x: &Pose, n: usize) -> Vec<PoseObservation> {
    let marker_in_base = Pose::new(Vec3::new(0.5, 0.1, 0.0), random_quat(rng));
    (0..n)
        .map(|k| {
            let g = Pose::new(random_vec(rng, -0.3, 0.3) + Vec3::new(0.4, 0.0, 0.4), random_quat(rng));
            // marker in camera = (G X)^-1 W
            let m = g.compose(x).inverse().compose(&marker_in_base);
            PoseObservation {
                t: k as f64,
                gripper_in_base: g,
                marker_in_camera: m,
            }
        })
        .collect()
}

/// Noise-free eye-to-base observations for ground truth `x` (camera in base)
/// and a marker rigidly attached to the TCP.
pub fn eye_to_base_observations(rng: &mut impl Rng, x: &Pose, n: usize) -> Vec<PoseObservation> {
    let marker_in_tcp = Pose::new(random_vec(rng, -0.05, 0.05), random_quat(rng));
    (0..n)
        .map(|k| {
            let g = Pose::new(random_vec(rng, -0.3, 0.3) + Vec3::new(0.4, 0.0, 0.4), random_quat(rng));
            // marker in camera = X^-1 G Y
            let m = x.inverse().compose(&g).compose(&marker_in_tcp);
            PoseObservation {
                t: k as f64,
                gripper_in_base: g,
                marker_in_camera: m,
            }
        })
        .collect()
}

pub fn perturb(rng: &mut impl Rng, p: &Pose, sigma_t: f64, sigma_r: f64) -> Pose {
    use rand_distr::{Distribution, Normal};
    let nt = Normal::new(0.0, sigma_t).unwrap();
    let nr = Normal::new(0.0, sigma_r).unwrap();
    let dt = Vec3::new(nt.sample(rng), nt.sample(rng), nt.sample(rng));
    let dr = Vec3::new(nr.sample(rng), nr.sample(rng), nr.sample(rng));
    Pose::new(p.position + dt, Quat::from_rotation_vector(dr) * p.orientation)
}

// ----------------------------------------------------------- env fixtures

pub fn small_intrinsics() -> Intrinsics {
    Intrinsics::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap()
}

pub fn test_workspace() -> Workspace {
    Workspace::new(Vec3::new(0.2, -0.3, 0.05), Vec3::new(0.6, 0.3, 0.5)).unwrap()
}

/// Limits whose window lengths are not near integer boundaries.
pub fn test_limits(dt: f64) -> RelLimits {
    RelLimits {
        max_step: 0.01,
        max_vel: 0.2,
        max_acc: 1.7,
        max_jerk: 37.0,
        max_rot_step: 0.05,
        dt,
        contact_step_scale: 0.25,
    }
}

pub fn sim_config() -> SimRobotConfig {
    SimRobotConfig::default()
}

/// Environment with a static and a wrist synthetic camera, polled
/// synchronously.
pub fn test_env() -> RobotEnv {
    let cfg = sim_config();
    let ws = test_workspace();
    let robot = SimRobot::new(cfg).unwrap().with_workspace(ws);
    let scene = Arc::new(Scene::default());
    let i = small_intrinsics();
    let mut cams = CameraManager::new();
    let static_pose = Pose::new(
        Vec3::new(0.4, 0.0, 1.0),
        Quat::from_axis_angle(Vec3::X, std::f64::consts::PI),
    );
    cams.register(
        CameraRecord {
            name: "front".into(),
            intrinsics: i,
            extrinsics: static_pose,
            mount: Mount::Static,
        },
        CameraSource::Polled(Box::new(SyntheticCamera::new(i, scene.clone(), static_pose).unwrap())),
    )
    .unwrap();
    let wrist = Pose::from_translation(Vec3::new(0.0, 0.0, 0.05));
    cams.register(
        CameraRecord {
            name: "wrist".into(),
            intrinsics: i,
            extrinsics: wrist,
            mount: Mount::Wrist,
        },
        CameraSource::Polled(Box::new(SyntheticCamera::new(i, scene, wrist).unwrap())),
    )
    .unwrap();
    cams.start_all().unwrap();
    RobotEnv::new(Box::new(robot), ws, test_limits(cfg.dt), cams).unwrap()
}

// ---------------------------------------------------------- shared runs

pub fn at_origin(cfg: SimRobotConfig) -> SimRobot {
    SimRobot::new(SimRobotConfig {
        neutral_pose: Pose::IDENTITY,
        ..cfg
    })
    .unwrap()
}

pub fn go(p: Vec3, q: Quat, path: PathMode, blocking: bool) -> ActionFrame {
    ActionFrame::absolute(Pose::new(p, q), GripperCommand::OPEN, path, blocking)
}

pub fn random_action(r: &mut impl Rng) -> ActionFrame {
    let pos = Vec3::new(
        r.gen_range(-10.0..10.0),
        r.gen::<f64>() * 1e-7,
        r.gen_range(-1e3..1e3),
    );
    let orn = if r.gen_bool(0.1) { Quat::IDENTITY } else { random_quat(r) };
    let grip = match r.gen_range(0..4) {
        0 => -1.0,
        1 => 1.0,
        2 => 0.0,
        _ => r.gen_range(-1.0..=1.0),
    };
    let g = GripperCommand::new(grip).unwrap();
    let path = if r.gen_bool(0.5) { PathMode::Lin } else { PathMode::Ptp };
    let blocking = r.gen_bool(0.5);
    if r.gen_bool(0.5) {
        ActionFrame::absolute(Pose::new(pos, orn), g, path, blocking)
    } else {
        ActionFrame::relative(pos, orn, g, path, blocking)
    }
}

/// Runs the environment's pipeline on a random action stream, with the robot
/// ideally tracking the emitted command. Returns the emitted poses.
pub fn sandwich_run(seed: u64, steps: usize, limits: &RelLimits, ws: &Workspace) -> Vec<(Pose, bool)> {
    let mut rng = rng(seed);
    let start = Pose::new(Vec3::new(0.4, 0.0, 0.3), Quat::IDENTITY);
    let mut f = FilterState::new(&start, limits).unwrap();
    let mut state = RobotState {
        tcp_pose: start,
        ..RobotState::default()
    };
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = if rng.gen_bool(0.1) {
            // occasional far absolute target, possibly outside the box
            ActionFrame::absolute(
                Pose::new(random_vec(&mut rng, -1.0, 1.0), random_quat(&mut rng)),
                GripperCommand::OPEN,
                PathMode::Ptp,
                false,
            )
        } else {
            let scale = if rng.gen_bool(0.2) { 0.5 } else { 0.02 };
            ActionFrame::relative(
                random_vec(&mut rng, -scale, scale),
                Quat::from_rotation_vector(random_vec(&mut rng, -0.2, 0.2)),
                GripperCommand::OPEN,
                PathMode::Ptp,
                false,
            )
        };
        let contact = rng.gen_bool(0.05);
        state.contact = contact;
        let abs = rel_to_abs(&a, &state);
        let target = abs.motion.pose();
        let inside = Pose::new(ws.clip(target.position), target.orientation);
        let limited = f.limit(&inside, contact);
        let emitted = Pose::new(clip_to_workspace(ws, limited.position), limited.orientation);
        state.tcp_pose = emitted;
        out.push((emitted, contact));
    }
    out
}

pub fn check_rate_bounds(poses: &[(Pose, bool)], limits: &RelLimits, ws: &Workspace) {
    let dt = limits.dt;
    for (k, (p, _)) in poses.iter().enumerate() {
        assert!(ws.contains(p.position), "step {k} outside workspace: {}", p.position);
        assert_eq!(clip_to_workspace(ws, p.position), p.position);
    }
    for (k, w) in poses.windows(2).enumerate() {
        let step = (w[1].0.position - w[0].0.position).norm();
        assert!(step <= limits.max_step + 1e-12, "step {k}: {step}");
        assert!(step / dt <= limits.max_vel + 1e-9, "velocity {k}: {}", step / dt);
        let rot = w[0].0.orientation.angle_to(w[1].0.orientation);
        assert!(rot <= limits.max_rot_step + 1e-9, "rotation step {k}: {rot}");
    }
    for (k, w) in poses.windows(3).enumerate() {
        let a = (w[2].0.position - w[1].0.position * 2.0 + w[0].0.position).norm() / (dt * dt);
        assert!(a <= limits.max_acc + 1e-9, "acceleration {k}: {a}");
    }
    for (k, w) in poses.windows(4).enumerate() {
        let j = (w[3].0.position - w[2].0.position * 3.0 + w[1].0.position * 3.0 - w[0].0.position).norm()
            / dt.powi(3);
        assert!(j <= limits.max_jerk * (1.0 + 1e-9), "jerk {k}: {j}");
    }
}

pub fn check_bounds(states: &[RobotState], cfg: &SimRobotConfig) {
    let dt = cfg.dt;
    for w in states.windows(2) {
        let v = (w[1].tcp_pose.position - w[0].tcp_pose.position).norm() / dt;
        assert!(v <= cfg.v_max + 1e-12, "speed {v} at t={}", w[1].timestamp);
    }
    for w in states.windows(3) {
        let (p0, p1, p2) = (w[0].tcp_pose.position, w[1].tcp_pose.position, w[2].tcp_pose.position);
        let a = (p2 - p1 * 2.0 + p0).norm() / (dt * dt);
        assert!(a <= cfg.a_max + 1e-9, "accel {a} at t={}", w[2].timestamp);
    }
}

pub fn random_run(seed: u64, cfg: SimRobotConfig, ticks: usize) -> Vec<RobotState> {
    let mut rng = rng(seed);
    let mut r = at_origin(cfg);
    let mut states = vec![r.get_state()];
    let mut next_cmd = 0;
    for tick in 0..ticks {
        if tick == next_cmd {
            let p = random_vec(&mut rng, -0.3, 0.3);
            let q = random_quat(&mut rng);
            let path = if rng.gen_bool(0.5) { PathMode::Lin } else { PathMode::Ptp };
            r.move_cart_pos(&go(p, q, path, false)).unwrap();
            next_cmd = tick + rng.gen_range(1..120);
        }
        r.sim_step(cfg.dt);
        let s = r.get_state();
        assert!(s.timestamp >= states.last().unwrap().timestamp);
        states.push(s);
    }
    states
}

