//! Keyed motion actions and their JSON wire form.
//!
//! ```text
//! {"motion":{"pos":[x,y,z],"orn":[x,y,z,w],"grip":g},"ref":"abs","path":"lin","blocking":false}
//! ```
//!
//! Every key is mandatory and unknown keys are rejected. Numbers are written
//! with shortest round-trip formatting, so `decode(encode(a)) == a` holds
//! bit-for-bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Quat, Vec3, UNIT_NORM_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error("field `{field}` is not finite")]
    NonFiniteField { field: &'static str },
    #[error("field `motion.orn` has norm {norm}, expected 1 ± {UNIT_NORM_TOLERANCE}")]
    NonUnitQuaternion { norm: f64 },
    #[error("field `motion.grip` = {value} is outside [-1, 1]")]
    GripperOutOfRange { value: f64 },
    #[error("malformed action message at line {line}, column {column}: {message}")]
    MalformedMessage {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Discretized open/close command actually sent to a gripper backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripperAction {
    Open,
    Close,
}

/// Gripper command `g` in `[-1, 1]`: negative closes, zero and above opens.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GripperCommand(f64);

impl GripperCommand {
    pub const OPEN: GripperCommand = GripperCommand(1.0);
    pub const CLOSE: GripperCommand = GripperCommand(-1.0);

    pub fn new(g: f64) -> Result<Self, ActionError> {
        if !g.is_finite() {
            return Err(ActionError::NonFiniteField {
                field: "motion.grip",
            });
        }
        if !(-1.0..=1.0).contains(&g) {
            return Err(ActionError::GripperOutOfRange { value: g });
        }
        Ok(Self(g))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn discretize(self) -> GripperAction {
        if self.0 < 0.0 {
            GripperAction::Close
        } else {
            GripperAction::Open
        }
    }
}

impl TryFrom<f64> for GripperCommand {
    type Error = ActionError;
    fn try_from(g: f64) -> Result<Self, Self::Error> {
        GripperCommand::new(g)
    }
}

impl From<GripperCommand> for f64 {
    fn from(g: GripperCommand) -> Self {
        g.0
    }
}

impl From<GripperAction> for GripperCommand {
    fn from(a: GripperAction) -> Self {
        match a {
            GripperAction::Open => GripperCommand::OPEN,
            GripperAction::Close => GripperCommand::CLOSE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    Abs,
    Rel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathMode {
    Ptp,
    Lin,
}

/// Target pose plus gripper command. For relative actions the position is a
/// base-frame delta and the orientation is left-multiplied onto the current
/// orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionTarget {
    pub position: Vec3,
    pub orientation: Quat,
    pub gripper: GripperCommand,
}

impl MotionTarget {
    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.orientation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionFrame {
    pub motion: MotionTarget,
    pub reference: Reference,
    pub path: PathMode,
    pub blocking: bool,
}

impl ActionFrame {
    pub fn absolute(target: Pose, gripper: GripperCommand, path: PathMode, blocking: bool) -> Self {
        Self {
            motion: MotionTarget {
                position: target.position,
                orientation: target.orientation,
                gripper,
            },
            reference: Reference::Abs,
            path,
            blocking,
        }
    }

    pub fn relative(
        translation: Vec3,
        rotation: Quat,
        gripper: GripperCommand,
        path: PathMode,
        blocking: bool,
    ) -> Self {
        Self {
            motion: MotionTarget {
                position: translation,
                orientation: rotation,
                gripper,
            },
            reference: Reference::Rel,
            path,
            blocking,
        }
    }

    pub fn is_relative(&self) -> bool {
        self.reference == Reference::Rel
    }

    /// Checks the invariants that the typed fields cannot enforce on their own.
    pub fn validate(&self) -> Result<&Self, ActionError> {
        if !self.motion.position.is_finite() {
            return Err(ActionError::NonFiniteField {
                field: "motion.pos",
            });
        }
        Ok(self)
    }

    pub fn to_message(&self) -> ActionMessage {
        ActionMessage {
            motion: MotionMessage {
                pos: self.motion.position.to_array(),
                orn: self.motion.orientation.to_array(),
                grip: self.motion.gripper.value(),
            },
            reference: self.reference,
            path: self.path,
            blocking: self.blocking,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionMessage {
    pub pos: [f64; 3],
    pub orn: [f64; 4],
    pub grip: f64,
}

/// Unvalidated wire form of an [`ActionFrame`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionMessage {
    pub motion: MotionMessage,
    #[serde(rename = "ref")]
    pub reference: Reference,
    pub path: PathMode,
    pub blocking: bool,
}

impl ActionMessage {
    pub fn validate(&self) -> Result<ActionFrame, ActionError> {
        let m = &self.motion;
        if !m.pos.iter().all(|v| v.is_finite()) {
            return Err(ActionError::NonFiniteField {
                field: "motion.pos",
            });
        }
        if !m.orn.iter().all(|v| v.is_finite()) {
            return Err(ActionError::NonFiniteField {
                field: "motion.orn",
            });
        }
        let orientation = Quat::from_array(m.orn).map_err(|_| ActionError::NonUnitQuaternion {
            norm: m.orn.iter().map(|v| v * v).sum::<f64>().sqrt(),
        })?;
        let gripper = GripperCommand::new(m.grip)?;
        Ok(ActionFrame {
            motion: MotionTarget {
                position: Vec3::from_array(m.pos),
                orientation,
                gripper,
            },
            reference: self.reference,
            path: self.path,
            blocking: self.blocking,
        })
    }
}

impl From<&ActionFrame> for ActionMessage {
    fn from(a: &ActionFrame) -> Self {
        a.to_message()
    }
}

impl Serialize for ActionFrame {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_message().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActionFrame {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let msg = ActionMessage::deserialize(d)?;
        msg.validate().map_err(serde::de::Error::custom)
    }
}

pub fn validate(a: &ActionFrame) -> Result<&ActionFrame, ActionError> {
    a.validate()
}

pub fn encode(a: &ActionFrame) -> Result<String, ActionError> {
    a.validate()?;
    Ok(serde_json::to_string(&a.to_message()).expect("action message serializes"))
}

pub fn decode(text: &str) -> Result<ActionFrame, ActionError> {
    let msg: ActionMessage =
        serde_json::from_str(text).map_err(|e| ActionError::MalformedMessage {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    msg.validate()
}
