//! Wiring from a resolved [`Config`] to a running environment, and the control
//! loop shared by the terminal teleop and scripted recording.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use roboshim::actions::ActionFrame;
use roboshim::camera::SyntheticCamera;
use roboshim::environment::{
    CameraManager, CameraRecord, CameraSource, EnvError, Mount, Recorder, RobotEnv, StepResult,
};
use roboshim::input::{InputDevice, InputError, RecorderCommand};
use roboshim::robot::SimRobot;
use roboshim::ThreadedCamera;
use thiserror::Error;

use crate::config::Config;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("{0}")]
    Other(String),
}

pub fn build_cameras(config: &Config) -> Result<CameraManager, EnvError> {
    let scene = Arc::new(config.scene.clone());
    let mut cams = CameraManager::new();
    for c in &config.cameras {
        // wrist cameras get their world pose on the first read
        let start_pose = match c.mount {
            Mount::Static => c.extrinsics,
            Mount::Wrist => config.robot.neutral_pose.compose(&c.extrinsics),
        };
        let cam = SyntheticCamera::new(c.intrinsics, scene.clone(), start_pose)?.with_fps(c.fps);
        let source = if c.threaded {
            CameraSource::Threaded(ThreadedCamera::new(Box::new(cam)))
        } else {
            CameraSource::Polled(Box::new(cam))
        };
        cams.register(
            CameraRecord {
                name: c.name.clone(),
                intrinsics: c.intrinsics,
                extrinsics: c.extrinsics,
                mount: c.mount,
            },
            source,
        )?;
    }
    cams.start_all()?;
    Ok(cams)
}

pub fn build_env(config: &Config) -> Result<RobotEnv, EnvError> {
    let robot = SimRobot::new(config.robot)?.with_workspace(config.workspace);
    RobotEnv::new(Box::new(robot), config.workspace, config.rel_limits, build_cameras(config)?)
}

/// What happened during one control tick.
pub struct Tick {
    pub action: Option<ActionFrame>,
    pub result: Option<StepResult>,
    /// Directories of episodes finished during this tick.
    pub finished: Vec<PathBuf>,
}

/// Applies a recorder command; returns the finished episode directory, if any.
pub fn apply_recorder_command(
    env: &RobotEnv,
    recorder: &mut Recorder,
    cmd: RecorderCommand,
) -> Result<Option<PathBuf>, EnvError> {
    match cmd {
        RecorderCommand::Start => {
            if !recorder.is_open() {
                recorder.start_episode(&env.episode_meta())?;
            }
            Ok(None)
        }
        RecorderCommand::Stop => {
            if recorder.is_open() {
                Ok(Some(recorder.end_episode()?))
            } else {
                Ok(None)
            }
        }
        RecorderCommand::Discard => {
            if recorder.is_open() {
                recorder.discard()?;
            }
            Ok(None)
        }
    }
}

/// One period: recorder commands, then either the next action through
/// `env.step` (recorded when an episode is open) or `env.hold`.
pub fn tick(env: &mut RobotEnv, input: &mut dyn InputDevice, recorder: &mut Recorder) -> Result<Tick, RunError> {
    let action = input.get_action()?;
    let mut finished = Vec::new();
    for cmd in input.take_recorder_commands() {
        finished.extend(apply_recorder_command(env, recorder, cmd)?);
    }
    let result = match &action {
        Some(a) => {
            let r = env.step(a)?;
            if recorder.is_open() {
                recorder.record_step(a, &r)?;
            }
            Some(r)
        }
        None => env.hold()?,
    };
    Ok(Tick {
        action,
        result,
        finished,
    })
}

/// Sleeps until `next` and advances it by one period. Falls back to "now"
/// when the loop is running late so it never bursts to catch up.
pub fn pace(next: &mut Instant, period: Duration) {
    let now = Instant::now();
    if *next > now {
        std::thread::sleep(*next - now);
        *next += period;
    } else {
        *next = now + period;
    }
}
