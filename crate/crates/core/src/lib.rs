//! Hardware-agnostic robot environment toolkit.
//!
//! Actions flow `input -> environment (rel_to_abs, limit, clip) -> robot`;
//! observations combine the robot state with the latest camera frames.

pub mod actions;
pub mod calibration;
pub mod camera;
pub mod environment;
pub mod geometry;
pub mod input;
pub mod robot;
pub mod safety;

pub use actions::{ActionError, ActionFrame, GripperAction, GripperCommand, PathMode, Reference};
pub use camera::{Camera, CameraError, Frame, Intrinsics, Scene, SyntheticCamera, ThreadedCamera};
pub use environment::{
    CameraManager, CameraRecord, CameraSource, EnvError, Mount, Observation, PlaybackEnv, Recorder,
    RobotEnv, StepInfo, StepResult,
};
pub use geometry::{Pose, Quat, Vec3};
pub use input::{ControlSpace, InputDevice, KeyboardInput, RecorderCommand, ScriptedInput};
pub use robot::{Gripper, MotionHandle, MotionStatus, Robot, RobotError, RobotState, SimRobot, SimRobotConfig};
pub use safety::{FilterState, RelLimits, SafetyError, Workspace};
