//! Gym-like environment over a robot, the safety pipeline and cameras, plus
//! episode recording, validation and playback.
//!
//! Episode layout:
//!
//! ```text
//! episode_<id>/
//!   manifest.json            written last; its presence marks a complete episode
//!   frames.jsonl             one StepRecord per line
//!   cam_<name>/rgb_<idx>.png
//!   cam_<name>/depth_<idx>.png   16-bit, millimeters
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionError, ActionFrame, MotionTarget, Reference};
use crate::camera::{
    decode_depth_png, decode_rgb_png, encode_depth_png, encode_rgb_png, Camera, CameraError, Frame,
    Intrinsics, ThreadedCamera, DEPTH_SCALE,
};
use crate::geometry::Pose;
use crate::robot::{Robot, RobotError, RobotState};
use crate::safety::{rel_to_abs, FilterState, RelLimits, SafetyError, Workspace};

pub const EPISODE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_FILE: &str = "frames.jsonl";

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("environment must be reset before stepping")]
    EnvironmentNotReset,
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error("camera name `{0}` already registered")]
    DuplicateName(String),
    #[error("unknown camera `{0}`")]
    UnknownCamera(String),
    #[error("storage full: {0}")]
    StorageFull(io::Error),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("an episode is already open at {0}")]
    EpisodeAlreadyOpen(PathBuf),
    #[error("no episode is open")]
    NoOpenEpisode,
    #[error("incomplete episode at {path}: {reason}")]
    IncompleteEpisode { path: PathBuf, reason: String },
    #[error("episode version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt episode at {path}: {reason}")]
    CorruptEpisode { path: PathBuf, reason: String },
    #[error("playback reached the last frame")]
    PlaybackFinished,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EnvError + '_ {
    move |e| {
        if e.kind() == io::ErrorKind::StorageFull {
            EnvError::StorageFull(e)
        } else {
            EnvError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    }
}

fn corrupt(path: &Path, reason: impl ToString) -> EnvError {
    EnvError::CorruptEpisode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mount {
    Static,
    Wrist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub name: String,
    pub intrinsics: Intrinsics,
    /// Camera in the base frame (static) or in the TCP frame (wrist).
    pub extrinsics: Pose,
    pub mount: Mount,
}

impl CameraRecord {
    /// Camera pose in the base frame given the current TCP pose.
    pub fn world_pose(&self, tcp: &Pose) -> Pose {
        match self.mount {
            Mount::Static => self.extrinsics,
            Mount::Wrist => tcp.compose(&self.extrinsics),
        }
    }
}

/// How the environment reads a camera: polled synchronously on every
/// observation (deterministic) or through a background latest-frame wrapper.
pub enum CameraSource {
    Polled(Box<dyn Camera>),
    Threaded(ThreadedCamera),
}

impl CameraSource {
    fn start(&mut self) -> Result<(), CameraError> {
        match self {
            CameraSource::Polled(c) => c.start(),
            CameraSource::Threaded(c) => c.start(),
        }
    }

    fn stop(&mut self) {
        match self {
            CameraSource::Polled(c) => c.stop(),
            CameraSource::Threaded(c) => c.stop(),
        }
    }

    fn frame(&mut self, pose: &Pose) -> Result<Arc<Frame>, CameraError> {
        match self {
            CameraSource::Polled(c) => {
                c.set_pose(pose);
                c.get_image().map(Arc::new)
            }
            CameraSource::Threaded(c) => {
                c.set_pose(pose);
                c.latest()
            }
        }
    }
}

#[derive(Default)]
pub struct CameraManager {
    cameras: Vec<(CameraRecord, CameraSource)>,
}

impl CameraManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, record: CameraRecord, source: CameraSource) -> Result<(), EnvError> {
        if self.cameras.iter().any(|(r, _)| r.name == record.name) {
            return Err(EnvError::DuplicateName(record.name));
        }
        record.intrinsics.validate()?;
        self.cameras.push((record, source));
        Ok(())
    }

    pub fn records(&self) -> Vec<CameraRecord> {
        self.cameras.iter().map(|(r, _)| r.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.cameras.iter().map(|(r, _)| r.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn record(&self, name: &str) -> Result<&CameraRecord, EnvError> {
        self.cameras
            .iter()
            .find(|(r, _)| r.name == name)
            .map(|(r, _)| r)
            .ok_or_else(|| EnvError::UnknownCamera(name.to_string()))
    }

    pub fn world_pose(&self, name: &str, tcp: &Pose) -> Result<Pose, EnvError> {
        Ok(self.record(name)?.world_pose(tcp))
    }

    pub fn start_all(&mut self) -> Result<(), EnvError> {
        for (_, src) in &mut self.cameras {
            src.start()?;
        }
        Ok(())
    }

    pub fn stop_all(&mut self) {
        for (_, src) in &mut self.cameras {
            src.stop();
        }
    }

    /// Latest frame of every camera, positioned for the given TCP pose.
    pub fn latest_frames(&mut self, tcp: &Pose) -> Result<BTreeMap<String, Arc<Frame>>, EnvError> {
        let mut out = BTreeMap::new();
        for (rec, src) in &mut self.cameras {
            let frame = src.frame(&rec.world_pose(tcp))?;
            out.insert(rec.name.clone(), frame);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let text = serde_json::to_string_pretty(&self.records()).expect("records serialize");
        fs::write(path, text).map_err(io_err(path))
    }

    /// Reads camera records written by [`CameraManager::save`].
    pub fn load_records(path: &Path) -> Result<Vec<CameraRecord>, EnvError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| corrupt(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub robot_state: RobotState,
    pub images: BTreeMap<String, Arc<Frame>>,
}

impl Observation {
    pub fn frame_seq(&self) -> BTreeMap<String, u64> {
        self.images.iter().map(|(k, f)| (k.clone(), f.seq)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// The workspace clip changed the command.
    pub clipped: bool,
    /// The rate limiter changed the command.
    pub limited: bool,
    /// Absolute command sent to the robot.
    pub executed: ActionFrame,
    /// Wall-clock seconds spent in the step.
    pub step_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Optional task hook returning `(reward, done)`. None ships.
pub type Evaluator = Box<dyn FnMut(&Observation) -> (f64, bool) + Send>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub cameras: Vec<CameraRecord>,
    pub workspace: Workspace,
    pub limits: RelLimits,
    pub dt: f64,
    pub depth_scale: f64,
}

pub struct RobotEnv {
    robot: Box<dyn Robot>,
    workspace: Workspace,
    limits: RelLimits,
    cameras: CameraManager,
    filter: Option<FilterState>,
    /// Last absolute target before limiting; re-applied by `hold`.
    last_target: Option<ActionFrame>,
    last_info: Option<StepInfo>,
    evaluator: Option<Evaluator>,
    done_signal: bool,
}

impl RobotEnv {
    pub fn new(
        robot: Box<dyn Robot>,
        workspace: Workspace,
        limits: RelLimits,
        cameras: CameraManager,
    ) -> Result<Self, EnvError> {
        limits.validate()?;
        Ok(Self {
            robot,
            workspace,
            limits,
            cameras,
            filter: None,
            last_target: None,
            last_info: None,
            evaluator: None,
            done_signal: false,
        })
    }

    pub fn set_evaluator(&mut self, evaluator: Evaluator) {
        self.evaluator = Some(evaluator);
    }

    /// Marks the next step result as final.
    pub fn signal_done(&mut self) {
        self.done_signal = true;
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn limits(&self) -> &RelLimits {
        &self.limits
    }

    pub fn cameras(&self) -> &CameraManager {
        &self.cameras
    }

    pub fn cameras_mut(&mut self) -> &mut CameraManager {
        &mut self.cameras
    }

    pub fn robot_state(&self) -> RobotState {
        self.robot.get_state()
    }

    pub fn last_info(&self) -> Option<&StepInfo> {
        self.last_info.as_ref()
    }

    pub fn is_reset(&self) -> bool {
        self.filter.is_some()
    }

    pub fn episode_meta(&self) -> EpisodeMeta {
        EpisodeMeta {
            cameras: self.cameras.records(),
            workspace: self.workspace,
            limits: self.limits,
            dt: self.robot.control_period(),
            depth_scale: DEPTH_SCALE,
        }
    }

    pub fn observe(&mut self) -> Result<Observation, EnvError> {
        let robot_state = self.robot.get_state();
        let images = self.cameras.latest_frames(&robot_state.tcp_pose)?;
        Ok(Observation {
            robot_state,
            images,
        })
    }

    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        self.robot.move_to_neutral()?;
        let pose = self.robot.get_state().tcp_pose;
        self.filter = Some(FilterState::new(&pose, &self.limits)?);
        self.last_target = None;
        self.last_info = None;
        self.done_signal = false;
        self.observe()
    }

    pub fn step(&mut self, action: &ActionFrame) -> Result<StepResult, EnvError> {
        if self.filter.is_none() {
            return Err(EnvError::EnvironmentNotReset);
        }
        action.validate()?;
        let state = self.robot.get_state();
        let absolute = rel_to_abs(action, &state);
        self.last_target = Some(absolute);
        self.execute(&absolute, &state)
    }

    /// One control period without new input: the last target is re-applied
    /// so the filter keeps converging. Without a target the robot just idles.
    pub fn hold(&mut self) -> Result<Option<StepResult>, EnvError> {
        if self.filter.is_none() {
            return Err(EnvError::EnvironmentNotReset);
        }
        match self.last_target {
            Some(target) => {
                let state = self.robot.get_state();
                self.execute(&target, &state).map(Some)
            }
            None => {
                self.robot.advance();
                Ok(None)
            }
        }
    }

    fn execute(&mut self, absolute: &ActionFrame, state: &RobotState) -> Result<StepResult, EnvError> {
        let started = Instant::now();
        let filter = self.filter.as_mut().expect("checked by caller");
        let requested = absolute.motion.pose();
        // keep the limiter's own state inside the box so the final clip never
        // has to break its rate bounds
        let inside = Pose::new(self.workspace.clip(requested.position), requested.orientation);
        let limited_pose = filter.limit(&inside, state.contact);
        let final_pos = self.workspace.clip(limited_pose.position);
        let clipped = inside.position != requested.position || final_pos != limited_pose.position;
        let limited = limited_pose != inside;

        let executed = ActionFrame {
            motion: MotionTarget {
                position: final_pos,
                orientation: limited_pose.orientation,
                gripper: absolute.motion.gripper,
            },
            reference: Reference::Abs,
            path: absolute.path,
            blocking: absolute.blocking,
        };
        self.robot.move_cart_pos(&executed)?;
        self.robot.advance();
        let obs = self.observe()?;
        let (reward, mut done) = match self.evaluator.as_mut() {
            Some(f) => f(&obs),
            None => (0.0, false),
        };
        done |= std::mem::take(&mut self.done_signal);
        let info = StepInfo {
            clipped,
            limited,
            executed,
            step_seconds: started.elapsed().as_secs_f64(),
        };
        self.last_info = Some(info);
        Ok(StepResult {
            obs,
            reward,
            done,
            info,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub seq: u64,
    pub timestamp: f64,
}

/// One line of `frames.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub index: usize,
    pub timestamp: f64,
    /// Input action as received.
    pub action: ActionFrame,
    /// Absolute command after the safety pipeline.
    pub executed: ActionFrame,
    pub robot_state: RobotState,
    pub cameras: BTreeMap<String, FrameMeta>,
    pub clipped: bool,
    pub limited: bool,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub id: String,
    pub frame_count: usize,
    pub cameras: Vec<CameraRecord>,
    pub workspace: Workspace,
    pub limits: RelLimits,
    pub dt: f64,
    pub depth_scale: f64,
}

struct OpenEpisode {
    id: String,
    dir: PathBuf,
    frames: BufWriter<File>,
    meta: EpisodeMeta,
    count: usize,
}

/// Writes episodes under a root directory.
pub struct Recorder {
    root: PathBuf,
    open: Option<OpenEpisode>,
}

fn rgb_file(index: usize) -> String {
    format!("rgb_{index:06}.png")
}

fn depth_file(index: usize) -> String {
    format!("depth_{index:06}.png")
}

fn camera_dir(name: &str) -> String {
    format!("cam_{name}")
}

impl Recorder {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            open: None,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn current_dir(&self) -> Option<&Path> {
        self.open.as_ref().map(|e| e.dir.as_path())
    }

    pub fn frame_count(&self) -> usize {
        self.open.as_ref().map_or(0, |e| e.count)
    }

    fn next_id(&self) -> Result<String, EnvError> {
        let mut max = 0u64;
        if self.root.exists() {
            for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
                let entry = entry.map_err(io_err(&self.root))?;
                let name = entry.file_name();
                if let Some(n) = name
                    .to_str()
                    .and_then(|s| s.strip_prefix("episode_"))
                    .and_then(|s| s.parse::<u64>().ok())
                {
                    max = max.max(n);
                }
            }
        }
        Ok(format!("{:06}", max + 1))
    }

    pub fn start_episode(&mut self, meta: &EpisodeMeta) -> Result<PathBuf, EnvError> {
        if let Some(open) = &self.open {
            return Err(EnvError::EpisodeAlreadyOpen(open.dir.clone()));
        }
        let id = self.next_id()?;
        let dir = self.root.join(format!("episode_{id}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for cam in &meta.cameras {
            let d = dir.join(camera_dir(&cam.name));
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        let path = dir.join(FRAMES_FILE);
        let file = File::create(&path).map_err(io_err(&path))?;
        self.open = Some(OpenEpisode {
            id,
            dir: dir.clone(),
            frames: BufWriter::new(file),
            meta: meta.clone(),
            count: 0,
        });
        Ok(dir)
    }

    /// Appends the step that `action` produced.
    pub fn record_step(&mut self, action: &ActionFrame, result: &StepResult) -> Result<(), EnvError> {
        let ep = self.open.as_mut().ok_or(EnvError::NoOpenEpisode)?;
        let index = ep.count;
        let mut cameras = BTreeMap::new();
        for (name, frame) in &result.obs.images {
            let d = ep.dir.join(camera_dir(name));
            let rgb = encode_rgb_png(frame.width, frame.height, &frame.rgb)?;
            let p = d.join(rgb_file(index));
            fs::write(&p, rgb).map_err(io_err(&p))?;
            let depth = encode_depth_png(frame.width, frame.height, &frame.depth)?;
            let p = d.join(depth_file(index));
            fs::write(&p, depth).map_err(io_err(&p))?;
            cameras.insert(
                name.clone(),
                FrameMeta {
                    seq: frame.seq,
                    timestamp: frame.timestamp,
                },
            );
        }
        let record = StepRecord {
            index,
            timestamp: result.obs.robot_state.timestamp,
            action: *action,
            executed: result.info.executed,
            robot_state: result.obs.robot_state,
            cameras,
            clipped: result.info.clipped,
            limited: result.info.limited,
            reward: result.reward,
            done: result.done,
        };
        let line = serde_json::to_string(&record).expect("step record serializes");
        let path = ep.dir.join(FRAMES_FILE);
        writeln!(ep.frames, "{line}").map_err(io_err(&path))?;
        ep.count += 1;
        Ok(())
    }

    /// Flushes the step log and writes the manifest atomically.
    pub fn end_episode(&mut self) -> Result<PathBuf, EnvError> {
        let mut ep = self.open.take().ok_or(EnvError::NoOpenEpisode)?;
        let frames_path = ep.dir.join(FRAMES_FILE);
        ep.frames.flush().map_err(io_err(&frames_path))?;
        ep.frames.get_ref().sync_all().map_err(io_err(&frames_path))?;
        let manifest = Manifest {
            version: EPISODE_VERSION,
            id: ep.id.clone(),
            frame_count: ep.count,
            cameras: ep.meta.cameras.clone(),
            workspace: ep.meta.workspace,
            limits: ep.meta.limits,
            dt: ep.meta.dt,
            depth_scale: ep.meta.depth_scale,
        };
        let tmp = ep.dir.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        let dest = ep.dir.join(MANIFEST_FILE);
        fs::rename(&tmp, &dest).map_err(io_err(&dest))?;
        Ok(ep.dir)
    }

    /// Drops the open episode and its files.
    pub fn discard(&mut self) -> Result<(), EnvError> {
        let ep = self.open.take().ok_or(EnvError::NoOpenEpisode)?;
        drop(ep.frames);
        fs::remove_dir_all(&ep.dir).map_err(io_err(&ep.dir))
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest, EnvError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(EnvError::IncompleteEpisode {
            path: dir.to_path_buf(),
            reason: "manifest.json missing".into(),
        });
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(&path, e))?;
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt(&path, "missing version"))?;
    if found != EPISODE_VERSION as u64 {
        return Err(EnvError::VersionMismatch {
            found: found as u32,
            expected: EPISODE_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| corrupt(&path, e))
}

fn read_records(dir: &Path) -> Result<Vec<StepRecord>, EnvError> {
    let path = dir.join(FRAMES_FILE);
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        let rec: StepRecord =
            serde_json::from_str(&line).map_err(|e| corrupt(&path, format!("line {}: {e}", i + 1)))?;
        if rec.index != i {
            return Err(corrupt(&path, format!("line {} has index {}", i + 1, rec.index)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub path: PathBuf,
    pub id: String,
    pub frame_count: usize,
    pub cameras: Vec<String>,
}

/// Accepts exactly the directories produced by [`Recorder::end_episode`].
pub fn validate_episode(dir: &Path) -> Result<EpisodeSummary, EnvError> {
    let manifest = read_manifest(dir)?;
    let records = read_records(dir)?;
    if records.len() != manifest.frame_count {
        return Err(corrupt(
            dir,
            format!(
                "manifest lists {} frames but {} step records exist",
                manifest.frame_count,
                records.len()
            ),
        ));
    }
    for cam in &manifest.cameras {
        let d = dir.join(camera_dir(&cam.name));
        let n = if d.is_dir() {
            fs::read_dir(&d).map_err(io_err(&d))?.count()
        } else {
            0
        };
        if n != 2 * manifest.frame_count {
            return Err(corrupt(
                dir,
                format!("camera `{}` has {n} image files, expected {}", cam.name, 2 * manifest.frame_count),
            ));
        }
        for i in 0..manifest.frame_count {
            for f in [rgb_file(i), depth_file(i)] {
                if !d.join(&f).is_file() {
                    return Err(corrupt(dir, format!("missing {}/{f}", camera_dir(&cam.name))));
                }
            }
        }
        for rec in &records {
            if !rec.cameras.contains_key(&cam.name) {
                return Err(corrupt(dir, format!("frame {} lacks camera `{}`", rec.index, cam.name)));
            }
        }
    }
    Ok(EpisodeSummary {
        path: dir.to_path_buf(),
        id: manifest.id,
        frame_count: manifest.frame_count,
        cameras: manifest.cameras.iter().map(|c| c.name.clone()).collect(),
    })
}

/// Complete episodes directly under `root`, sorted by directory name.
pub fn list_episodes(root: &Path) -> Vec<EpisodeSummary> {
    let Ok(entries) = fs::read_dir(root) else {
        return Vec::new();
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().filter_map(|d| validate_episode(d).ok()).collect()
}

/// Replays a recorded episode behind the environment interface. `reset`
/// yields frame 0 and each `step` the next frame; the last frame is marked
/// `done`.
pub struct PlaybackEnv {
    dir: PathBuf,
    manifest: Manifest,
    records: Vec<StepRecord>,
    cursor: Option<usize>,
}

impl PlaybackEnv {
    pub fn load(dir: &Path) -> Result<Self, EnvError> {
        validate_episode(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: read_manifest(dir)?,
            records: read_records(dir)?,
            cursor: None,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Input actions in recording order.
    pub fn actions(&self) -> Vec<ActionFrame> {
        self.records.iter().map(|r| r.action).collect()
    }

    pub fn executed_actions(&self) -> Vec<ActionFrame> {
        self.records.iter().map(|r| r.executed).collect()
    }

    pub fn is_done(&self) -> bool {
        self.cursor.is_some_and(|c| c + 1 >= self.records.len())
    }

    pub fn observation(&self, index: usize) -> Result<Observation, EnvError> {
        let rec = self.records.get(index).ok_or(EnvError::PlaybackFinished)?;
        let mut images = BTreeMap::new();
        for cam in &self.manifest.cameras {
            let d = self.dir.join(camera_dir(&cam.name));
            let meta = rec.cameras[&cam.name];
            let p = d.join(rgb_file(index));
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            let (width, height, rgb) = decode_rgb_png(&bytes)?;
            let p = d.join(depth_file(index));
            let bytes = fs::read(&p).map_err(io_err(&p))?;
            let (dw, dh, depth) = decode_depth_png(&bytes)?;
            if (dw, dh) != (width, height) {
                return Err(corrupt(&self.dir, format!("frame {index} rgb/depth size mismatch")));
            }
            images.insert(
                cam.name.clone(),
                Arc::new(Frame {
                    width,
                    height,
                    rgb,
                    depth,
                    timestamp: meta.timestamp,
                    seq: meta.seq,
                }),
            );
        }
        Ok(Observation {
            robot_state: rec.robot_state,
            images,
        })
    }

    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        if self.records.is_empty() {
            return Err(EnvError::PlaybackFinished);
        }
        self.cursor = Some(0);
        self.observation(0)
    }

    /// Ignores `_action` and returns the next recorded frame.
    pub fn step(&mut self, _action: Option<&ActionFrame>) -> Result<StepResult, EnvError> {
        let next = match self.cursor {
            None => return Err(EnvError::EnvironmentNotReset),
            Some(c) => c + 1,
        };
        if next >= self.records.len() {
            return Err(EnvError::PlaybackFinished);
        }
        let obs = self.observation(next)?;
        self.cursor = Some(next);
        let rec = &self.records[next];
        Ok(StepResult {
            obs,
            reward: rec.reward,
            done: next + 1 == self.records.len(),
            info: StepInfo {
                clipped: rec.clipped,
                limited: rec.limited,
                executed: rec.executed,
                step_seconds: 0.0,
            },
        })
    }
}
