//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use roboshim::actions::{ActionFrame, GripperCommand, PathMode};
use roboshim::calibration::PoseObservation;
use roboshim::camera::{Intrinsics, Scene, SyntheticCamera};
use roboshim::environment::{CameraManager, CameraRecord, CameraSource, Mount, RobotEnv};
use roboshim::geometry::{Pose, Quat, Vec3};
use roboshim::robot::{SimRobot, SimRobotConfig};
use roboshim::safety::{RelLimits, Workspace};

pub fn workspace() -> Workspace {
    Workspace::new(Vec3::new(0.2, -0.3, 0.02), Vec3::new(0.7, 0.3, 0.6)).expect("valid workspace")
}

pub fn intrinsics(width: u32, height: u32) -> Intrinsics {
    let f = width as f64 * 0.875;
    Intrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
        .expect("valid intrinsics")
}

/// Overhead camera looking straight down at the default scene.
pub fn overhead_camera(width: u32, height: u32) -> SyntheticCamera {
    let pose = Pose::new(Vec3::new(0.45, 0.0, 0.9), Quat::from_axis_angle(Vec3::X, std::f64::consts::PI));
    SyntheticCamera::new(intrinsics(width, height), Arc::new(Scene::default()), pose).expect("camera")
}

/// Environment with the sim robot and, optionally, one polled wrist camera.
pub fn env(camera: Option<(u32, u32)>) -> RobotEnv {
    let ws = workspace();
    let robot = SimRobot::new(SimRobotConfig::default()).expect("robot").with_workspace(ws);
    let mut cameras = CameraManager::new();
    if let Some((w, h)) = camera {
        let record = CameraRecord {
            name: "wrist".into(),
            intrinsics: intrinsics(w, h),
            extrinsics: Pose::from_translation(Vec3::new(0.0, 0.0, 0.05)),
            mount: Mount::Wrist,
        };
        cameras
            .register(record, CameraSource::Polled(Box::new(overhead_camera(w, h))))
            .expect("register");
    }
    cameras.start_all().expect("start cameras");
    let mut env = RobotEnv::new(Box::new(robot), ws, RelLimits::default(), cameras).expect("env");
    env.reset().expect("reset");
    env
}

/// Small relative step that alternates direction so long runs stay inside the workspace.
pub fn nudge(k: usize) -> ActionFrame {
    let s = if (k / 50).is_multiple_of(2) { 1.0 } else { -1.0 };
    ActionFrame::relative(
        Vec3::new(0.002 * s, 0.001 * s, -0.001 * s),
        Quat::from_axis_angle(Vec3::Z, 0.005 * s),
        GripperCommand::OPEN,
        PathMode::Ptp,
        false,
    )
}

/// Noise-free eye-in-hand observations on a fixed, well-spread trajectory.
pub fn eye_in_hand_observations(x: &Pose, n: usize) -> Vec<PoseObservation> {
    let marker = Pose::new(Vec3::new(0.5, 0.1, 0.0), Quat::from_axis_angle(Vec3::Z, 0.4));
    (0..n)
        .map(|k| {
            let a = k as f64;
            let axis = Vec3::new((1.3 * a).sin(), (0.7 * a).cos(), 1.0 + 0.5 * (2.1 * a).sin());
            let g = Pose::new(
                Vec3::new(0.4 + 0.1 * (0.9 * a).sin(), 0.1 * (1.7 * a).cos(), 0.4 + 0.05 * a.sin()),
                Quat::from_axis_angle(axis * (1.0 / axis.norm()), 0.3 + 0.2 * (0.5 * a).cos()),
            );
            PoseObservation {
                t: a,
                gripper_in_base: g,
                marker_in_camera: g.compose(x).inverse().compose(&marker),
            }
        })
        .collect()
}
