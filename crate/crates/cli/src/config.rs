//! Layered TOML configuration: built-in defaults, then an optional file, then
//! `key.path=value` overrides. Later layers replace leaf values; tables merge.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use roboshim::camera::{Intrinsics, Scene};
use roboshim::environment::Mount;
use roboshim::geometry::{Pose, Quat, Vec3};
use roboshim::input::InputConfig;
use roboshim::robot::SimRobotConfig;
use roboshim::safety::{RelLimits, Workspace};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("bad override `{0}`: expected key.path=value")]
    BadOverride(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub name: String,
    pub intrinsics: Intrinsics,
    /// Pose in the base frame (static) or in the TCP frame (wrist).
    pub extrinsics: Pose,
    pub mount: Mount,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Acquire on a background thread instead of rendering on every read.
    #[serde(default = "default_threaded")]
    pub threaded: bool,
}

fn default_fps() -> f64 {
    30.0
}

fn default_threaded() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecorderConfig {
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub state_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub robot: SimRobotConfig,
    pub workspace: Workspace,
    pub rel_limits: RelLimits,
    pub cameras: Vec<CameraConfig>,
    pub scene: Scene,
    pub input: InputConfig,
    pub recorder: RecorderConfig,
    pub service: ServiceConfig,
}

impl Default for Config {
    fn default() -> Self {
        let intrinsics = Intrinsics::new(140.0, 140.0, 79.5, 59.5, 160, 120).expect("valid intrinsics");
        Self {
            robot: SimRobotConfig::default(),
            workspace: Workspace::new(Vec3::new(0.2, -0.3, 0.02), Vec3::new(0.7, 0.3, 0.6))
                .expect("valid workspace"),
            rel_limits: RelLimits::default(),
            cameras: vec![
                CameraConfig {
                    name: "front".into(),
                    intrinsics,
                    extrinsics: Pose::new(
                        Vec3::new(0.45, 0.0, 0.9),
                        Quat::from_axis_angle(Vec3::X, std::f64::consts::PI),
                    ),
                    mount: Mount::Static,
                    fps: 30.0,
                    threaded: true,
                },
                CameraConfig {
                    name: "wrist".into(),
                    intrinsics,
                    extrinsics: Pose::from_translation(Vec3::new(0.0, 0.0, 0.05)),
                    mount: Mount::Wrist,
                    fps: 30.0,
                    threaded: true,
                },
            ],
            scene: Scene::default(),
            input: InputConfig::default(),
            recorder: RecorderConfig {
                root: PathBuf::from("episodes"),
            },
            service: ServiceConfig {
                port: 8765,
                state_rate_hz: 20.0,
            },
        }
    }
}

impl Config {
    /// Resolves defaults < `file` < `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut merged = match Value::try_from(Config::default()) {
            Ok(Value::Table(t)) => t,
            _ => unreachable!("defaults serialize to a table"),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            let layer: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.message().to_string(),
            })?;
            merge(&mut merged, layer);
        }
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        let config: Config = Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: "config".into(),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.robot.validate().map_err(|e| invalid(&e))?;
        self.rel_limits.validate().map_err(|e| invalid(&e))?;
        if self.rel_limits.dt != self.robot.dt {
            return Err(ConfigError::Invalid(format!(
                "rel_limits.dt ({}) must equal robot.dt ({})",
                self.rel_limits.dt, self.robot.dt
            )));
        }
        if !self.workspace.contains(self.robot.neutral_pose.position) {
            return Err(ConfigError::Invalid("robot.neutral_pose lies outside the workspace".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.cameras {
            if !names.insert(c.name.as_str()) {
                return Err(ConfigError::Invalid(format!("duplicate camera name `{}`", c.name)));
            }
            if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
                return Err(ConfigError::Invalid(format!(
                    "camera name `{}` must be non-empty [A-Za-z0-9_-]",
                    c.name
                )));
            }
            c.intrinsics.validate().map_err(|e| invalid(&e))?;
            if !(c.fps.is_finite() && c.fps > 0.0) {
                return Err(ConfigError::Invalid(format!("camera `{}`: fps must be positive", c.name)));
            }
            if !c.extrinsics.is_finite() {
                return Err(ConfigError::Invalid(format!("camera `{}`: non-finite extrinsics", c.name)));
            }
        }
        self.input.validate().map_err(|e| invalid(&e))?;
        if !(self.service.state_rate_hz.is_finite() && self.service.state_rate_hz > 0.0) {
            return Err(ConfigError::Invalid("service.state_rate_hz must be positive".into()));
        }
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side as a TOML value; bare words become strings.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn apply_override(root: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(ConfigError::Invalid(format!("`{path}`: `{k}` is not a table")));
            }
        };
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = Config::default();
        let back: Config = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_value("0.1"), Value::Float(0.1));
        assert_eq!(parse_value("3"), Value::Integer(3));
        assert_eq!(parse_value("\"a b\""), Value::String("a b".into()));
        assert_eq!(parse_value("runs/x"), Value::String("runs/x".into()));
        assert_eq!(parse_value("[1.0, 2.0]"), Value::Array(vec![Value::Float(1.0), Value::Float(2.0)]));
    }

    #[test]
    fn tables_merge_leaf_by_leaf() {
        let mut base: Table = "[a]\nx = 1\ny = 2\n".parse().unwrap();
        merge(&mut base, "[a]\ny = 3\n".parse().unwrap());
        assert_eq!(base["a"]["x"].as_integer(), Some(1));
        assert_eq!(base["a"]["y"].as_integer(), Some(3));
    }
}
