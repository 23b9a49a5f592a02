//! Input devices producing actions: a key-event driven keyboard device and a
//! scripted device.

use std::collections::{BTreeMap, VecDeque};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionFrame, GripperCommand, PathMode};
use crate::geometry::{Quat, Vec3};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InputError {
    #[error("input device disconnected")]
    DeviceDead,
    #[error("invalid input config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSpace {
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecorderCommand {
    Start,
    Stop,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
    PlusZ,
    MinusZ,
    PlusRoll,
    MinusRoll,
    PlusPitch,
    MinusPitch,
    PlusYaw,
    MinusYaw,
    GripperToggle,
    GripperOpen,
    GripperClose,
    RecordStart,
    RecordStop,
    RecordDiscard,
}

impl Command {
    /// Unit translation direction, if this is a translation command.
    pub fn translation(self) -> Option<Vec3> {
        Some(match self {
            Command::PlusX => Vec3::X,
            Command::MinusX => -Vec3::X,
            Command::PlusY => Vec3::Y,
            Command::MinusY => -Vec3::Y,
            Command::PlusZ => Vec3::Z,
            Command::MinusZ => -Vec3::Z,
            _ => return None,
        })
    }

    /// Unit rotation axis (base frame), if this is a rotation command.
    pub fn rotation(self) -> Option<Vec3> {
        Some(match self {
            Command::PlusRoll => Vec3::X,
            Command::MinusRoll => -Vec3::X,
            Command::PlusPitch => Vec3::Y,
            Command::MinusPitch => -Vec3::Y,
            Command::PlusYaw => Vec3::Z,
            Command::MinusYaw => -Vec3::Z,
            _ => return None,
        })
    }
}

/// Key names follow the browser `KeyboardEvent.key` strings.
pub fn default_bindings() -> BTreeMap<String, Command> {
    [
        ("ArrowRight", Command::PlusX),
        ("ArrowLeft", Command::MinusX),
        ("ArrowUp", Command::PlusY),
        ("ArrowDown", Command::MinusY),
        ("PageUp", Command::PlusZ),
        ("PageDown", Command::MinusZ),
        ("]", Command::PlusYaw),
        ("[", Command::MinusYaw),
        (".", Command::PlusPitch),
        (",", Command::MinusPitch),
        ("Home", Command::PlusRoll),
        ("End", Command::MinusRoll),
        (" ", Command::GripperToggle),
        ("r", Command::RecordStart),
        ("s", Command::RecordStop),
        ("d", Command::RecordDiscard),
    ]
    .into_iter()
    .map(|(k, c)| (k.to_string(), c))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// m per key event
    pub step_translation: f64,
    /// rad per key event
    pub step_rotation: f64,
    pub bindings: BTreeMap<String, Command>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            step_translation: 0.01,
            step_rotation: 0.05,
            bindings: default_bindings(),
        }
    }
}

impl InputConfig {
    pub fn validate(&self) -> Result<(), InputError> {
        for (name, v) in [
            ("step_translation", self.step_translation),
            ("step_rotation", self.step_rotation),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(InputError::InvalidConfig(format!(
                    "`{name}` must be finite and strictly positive"
                )));
            }
        }
        Ok(())
    }
}

pub trait InputDevice {
    fn control_space(&self) -> ControlSpace;
    /// Action implied by input since the last call, or `None` when idle.
    fn get_action(&mut self) -> Result<Option<ActionFrame>, InputError>;
    /// Recorder commands received since the last call.
    fn take_recorder_commands(&mut self) -> Vec<RecorderCommand> {
        Vec::new()
    }
}

/// Producer side of a keyboard device. Cloneable; dropping every sender
/// makes the device report `DeviceDead` once its queue is drained.
#[derive(Debug, Clone)]
pub struct KeySender(Sender<String>);

impl KeySender {
    /// Queues one key press. Returns false if the device is gone.
    pub fn press(&self, key: &str) -> bool {
        self.0.send(key.to_string()).is_ok()
    }
}

/// Relative keyboard device fed from a key-event queue. Every key press is
/// one step along its bound axis; presses since the last poll are summed.
pub struct KeyboardInput {
    events: Receiver<String>,
    config: InputConfig,
    gripper: GripperCommand,
    recorder: Vec<RecorderCommand>,
}

impl KeyboardInput {
    pub fn new(config: InputConfig) -> Result<(Self, KeySender), InputError> {
        config.validate()?;
        let (tx, rx) = mpsc::channel();
        Ok((
            Self {
                events: rx,
                config,
                gripper: GripperCommand::OPEN,
                recorder: Vec::new(),
            },
            KeySender(tx),
        ))
    }

    pub fn gripper(&self) -> GripperCommand {
        self.gripper
    }
}

impl InputDevice for KeyboardInput {
    fn control_space(&self) -> ControlSpace {
        ControlSpace::Relative
    }

    fn get_action(&mut self) -> Result<Option<ActionFrame>, InputError> {
        let mut translation = Vec3::ZERO;
        let mut rotation = Quat::IDENTITY;
        let mut any_motion = false;
        let mut disconnected = false;
        let mut received = false;
        loop {
            let key = match self.events.try_recv() {
                Ok(k) => k,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    disconnected = true;
                    break;
                }
            };
            received = true;
            let Some(&cmd) = self.config.bindings.get(&key) else {
                continue;
            };
            if let Some(dir) = cmd.translation() {
                translation += dir * self.config.step_translation;
                any_motion = true;
            } else if let Some(axis) = cmd.rotation() {
                rotation = Quat::from_axis_angle(axis, self.config.step_rotation) * rotation;
                any_motion = true;
            } else {
                match cmd {
                    Command::GripperToggle => {
                        self.gripper = if self.gripper.value() < 0.0 {
                            GripperCommand::OPEN
                        } else {
                            GripperCommand::CLOSE
                        };
                    }
                    Command::GripperOpen => self.gripper = GripperCommand::OPEN,
                    Command::GripperClose => self.gripper = GripperCommand::CLOSE,
                    Command::RecordStart => self.recorder.push(RecorderCommand::Start),
                    Command::RecordStop => self.recorder.push(RecorderCommand::Stop),
                    Command::RecordDiscard => self.recorder.push(RecorderCommand::Discard),
                    _ => unreachable!("motion commands handled above"),
                }
                if matches!(
                    cmd,
                    Command::GripperToggle | Command::GripperOpen | Command::GripperClose
                ) {
                    any_motion = true;
                }
            }
        }
        if disconnected && !received {
            return Err(InputError::DeviceDead);
        }
        Ok(any_motion.then(|| {
            ActionFrame::relative(translation, rotation, self.gripper, PathMode::Ptp, false)
        }))
    }

    fn take_recorder_commands(&mut self) -> Vec<RecorderCommand> {
        std::mem::take(&mut self.recorder)
    }
}

/// Test double returning preloaded actions in order, then `None` forever.
#[derive(Debug, Clone)]
pub struct ScriptedInput {
    queue: VecDeque<ActionFrame>,
    space: ControlSpace,
}

impl ScriptedInput {
    pub fn new(space: ControlSpace) -> Self {
        Self {
            queue: VecDeque::new(),
            space,
        }
    }

    pub fn load(&mut self, actions: impl IntoIterator<Item = ActionFrame>) {
        self.queue.extend(actions);
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl InputDevice for ScriptedInput {
    fn control_space(&self) -> ControlSpace {
        self.space
    }

    fn get_action(&mut self) -> Result<Option<ActionFrame>, InputError> {
        Ok(self.queue.pop_front())
    }
}
