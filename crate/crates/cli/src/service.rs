//! HTTP + websocket bridge. A single control thread owns the environment and
//! ticks at the control period; network sessions only talk to it through a
//! command queue and read immutable snapshots.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use roboshim::actions::{decode, ActionFrame};
use roboshim::camera::{encode_gray_png, encode_rgb_png, normalize_depth, Frame};
use roboshim::environment::{list_episodes, EnvError, Recorder, RobotEnv};
use roboshim::input::RecorderCommand;
use roboshim::robot::RobotState;
use roboshim::safety::Workspace;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::app::{apply_recorder_command, build_env, pace};
use crate::config::Config;

pub const CONTROLLER_BUSY: &str = "controller busy";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("runtime: {0}")]
    Runtime(std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "state")]
pub struct StateMessage {
    pub t: f64,
    pub tcp_pos: [f64; 3],
    pub tcp_orn: [f64; 4],
    pub gripper: f64,
    pub moving: bool,
    pub clipped: bool,
    pub limited: bool,
    pub workspace: Workspace,
    pub recording: bool,
    pub episode_frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StateMessage {
    fn new(s: &RobotState, env: &RobotEnv, recorder: &Recorder, error: Option<String>) -> Self {
        let info = env.last_info();
        Self {
            t: s.timestamp,
            tcp_pos: s.tcp_pose.position.to_array(),
            tcp_orn: s.tcp_pose.orientation.to_array(),
            gripper: s.gripper_width,
            moving: s.moving,
            clipped: info.is_some_and(|i| i.clipped),
            limited: info.is_some_and(|i| i.limited),
            workspace: *env.workspace(),
            recording: recorder.is_open(),
            episode_frames: recorder.frame_count(),
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandMessage {
    Action(ActionFrame),
    Recorder(RecorderCommand),
    Reset,
}

impl CommandMessage {
    /// `{"type":"action", ...action wire fields}`, `{"type":"recorder","cmd":..}`
    /// or `{"type":"reset"}`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let obj = v.as_object_mut().ok_or("message must be a JSON object")?;
        let kind = obj
            .remove("type")
            .and_then(|t| t.as_str().map(str::to_string))
            .ok_or("missing string field `type`")?;
        match kind.as_str() {
            "action" => decode(&v.to_string()).map(Self::Action).map_err(|e| e.to_string()),
            "recorder" => {
                if obj.len() != 1 {
                    return Err("recorder message takes exactly one field `cmd`".into());
                }
                let cmd = obj.remove("cmd").ok_or("missing field `cmd`")?;
                serde_json::from_value(cmd).map(Self::Recorder).map_err(|e| e.to_string())
            }
            "reset" if obj.is_empty() => Ok(Self::Reset),
            "reset" => Err("reset takes no fields".into()),
            other => Err(format!("unknown message type `{other}`")),
        }
    }
}

struct Shared {
    state: RwLock<StateMessage>,
    frames: RwLock<BTreeMap<String, Arc<Frame>>>,
    controller: AtomicBool,
    commands: mpsc::Sender<CommandMessage>,
    info: serde_json::Value,
    recorder_root: PathBuf,
    stream_period: Duration,
}

/// Releases the controller slot when the session ends.
struct ControllerGuard(Arc<Shared>);

impl Drop for ControllerGuard {
    fn drop(&mut self) {
        self.0.controller.store(false, Ordering::SeqCst);
    }
}

pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    server: Option<JoinHandle<()>>,
    control: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server exits (Ctrl-C or [`ServiceHandle::shutdown`]).
    pub fn wait(mut self) {
        if let Some(s) = self.server.take() {
            let _ = s.join();
        }
        self.stop_control();
    }

    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_control(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(c) = self.control.take() {
            let _ = c.join();
        }
    }

    fn stop_all(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(s) = self.server.take() {
            let _ = s.join();
        }
        self.stop_control();
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_all();
    }
}

fn info_json(config: &Config) -> serde_json::Value {
    json!({
        "dt": config.robot.dt,
        "state_rate_hz": config.service.state_rate_hz,
        "robot": config.robot,
        "workspace": config.workspace,
        "rel_limits": config.rel_limits,
        "cameras": config.cameras.iter().map(|c| json!({
            "name": c.name,
            "intrinsics": c.intrinsics,
            "extrinsics": c.extrinsics,
            "mount": c.mount,
            "fps": c.fps,
        })).collect::<Vec<_>>(),
        "input": config.input,
        "recorder_root": config.recorder.root,
    })
}

/// Starts the control loop and the server on `port` (0 picks a free port).
pub fn start(config: &Config, port: u16) -> Result<ServiceHandle, ServiceError> {
    let listener = std::net::TcpListener::bind(("127.0.0.1", port)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServiceError::PortInUse(port)
        } else {
            ServiceError::Bind { port, source: e }
        }
    })?;
    listener.set_nonblocking(true).map_err(ServiceError::Runtime)?;
    let addr = listener.local_addr().map_err(ServiceError::Runtime)?;

    let mut env = build_env(config)?;
    let obs = env.reset()?;
    let recorder = Recorder::new(&config.recorder.root);
    let (tx, rx) = mpsc::channel();
    let shared = Arc::new(Shared {
        state: RwLock::new(StateMessage::new(&obs.robot_state, &env, &recorder, None)),
        frames: RwLock::new(obs.images),
        controller: AtomicBool::new(false),
        commands: tx,
        info: info_json(config),
        recorder_root: config.recorder.root.clone(),
        stream_period: Duration::from_secs_f64(1.0 / config.service.state_rate_hz),
    });

    let stop = Arc::new(AtomicBool::new(false));
    let control = {
        let shared = shared.clone();
        let stop = stop.clone();
        let period = Duration::from_secs_f64(config.robot.dt);
        std::thread::Builder::new()
            .name("control".into())
            .spawn(move || control_loop(env, recorder, rx, shared, stop, period))
            .map_err(ServiceError::Runtime)?
    };

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(ServiceError::Runtime)?;
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let app = router(shared);
    let server = std::thread::Builder::new()
        .name("server".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers");
                let signal = async {
                    tokio::select! {
                        _ = shutdown_rx => {}
                        _ = tokio::signal::ctrl_c() => {}
                    }
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(signal).await {
                    tracing::error!("server error: {e}");
                }
            });
            // open websocket sessions are dropped with the runtime
            runtime.shutdown_timeout(Duration::from_millis(200));
        })
        .map_err(ServiceError::Runtime)?;
    tracing::info!("listening on {addr}");
    Ok(ServiceHandle {
        addr,
        stop,
        shutdown: Some(shutdown_tx),
        server: Some(server),
        control: Some(control),
    })
}

fn control_loop(
    mut env: RobotEnv,
    mut recorder: Recorder,
    rx: mpsc::Receiver<CommandMessage>,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    period: Duration,
) {
    let mut next = Instant::now() + period;
    let mut error: Option<String> = None;
    while !stop.load(Ordering::SeqCst) {
        let mut pending = None;
        let mut outcome: Result<(), EnvError> = Ok(());
        while let Ok(cmd) = rx.try_recv() {
            match cmd {
                // only the newest action of a period is applied
                CommandMessage::Action(a) => pending = Some(a),
                CommandMessage::Recorder(c) => {
                    outcome = outcome.and(apply_recorder_command(&env, &mut recorder, c).map(|_| ()));
                }
                CommandMessage::Reset => {
                    pending = None;
                    outcome = outcome.and(env.reset().map(|_| ()));
                }
            }
        }
        let obs = match &pending {
            Some(a) => env.step(a).and_then(|r| {
                if recorder.is_open() {
                    recorder.record_step(a, &r)?;
                }
                Ok(r.obs)
            }),
            None => env.hold().and_then(|r| match r {
                Some(r) => Ok(r.obs),
                None => env.observe(),
            }),
        };
        match (outcome, obs) {
            (Ok(()), Ok(obs)) => {
                *shared.frames.write().unwrap() = obs.images;
                *shared.state.write().unwrap() = StateMessage::new(&obs.robot_state, &env, &recorder, error.take());
            }
            (Err(e), _) | (_, Err(e)) => {
                tracing::warn!("control tick failed: {e}");
                error = Some(e.to_string());
                let s = env.robot_state();
                *shared.state.write().unwrap() = StateMessage::new(&s, &env, &recorder, error.clone());
            }
        }
        pace(&mut next, period);
    }
    if recorder.is_open() {
        if let Err(e) = recorder.end_episode() {
            tracing::error!("closing episode on shutdown: {e}");
        }
    }
    env.cameras_mut().stop_all();
}

fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/info", get(info))
        .route("/episodes", get(episodes))
        .route("/camera/{name}/rgb.png", get(camera_rgb))
        .route("/camera/{name}/depth.png", get(camera_depth))
        .route("/ws", get(ws_upgrade))
        .with_state(shared)
}

async fn info(State(s): State<Arc<Shared>>) -> Json<serde_json::Value> {
    Json(s.info.clone())
}

async fn episodes(State(s): State<Arc<Shared>>) -> Response {
    let root = s.recorder_root.clone();
    match tokio::task::spawn_blocking(move || list_episodes(&root)).await {
        Ok(list) => Json(list).into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "Internal", &e.to_string()),
    }
}

fn error_response(status: StatusCode, kind: &str, message: &str) -> Response {
    (status, Json(json!({ "error": kind, "message": message }))).into_response()
}

fn latest_frame(s: &Shared, name: &str) -> Result<Arc<Frame>, Response> {
    s.frames.read().unwrap().get(name).cloned().ok_or_else(|| {
        error_response(StatusCode::NOT_FOUND, "UnknownCamera", &format!("unknown camera `{name}`"))
    })
}

fn png_response(frame: &Frame, body: Vec<u8>) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    headers.insert("x-frame-seq", HeaderValue::from(frame.seq));
    headers.insert(
        "x-frame-timestamp",
        HeaderValue::from_str(&frame.timestamp.to_string()).expect("ascii number"),
    );
    (headers, body).into_response()
}

async fn camera_rgb(Path(name): Path<String>, State(s): State<Arc<Shared>>) -> Response {
    let frame = match latest_frame(&s, &name) {
        Ok(f) => f,
        Err(r) => return r,
    };
    match encode_rgb_png(frame.width, frame.height, &frame.rgb) {
        Ok(png) => png_response(&frame, png),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "Codec", &e.to_string()),
    }
}

#[derive(Deserialize)]
struct DepthQuery {
    near: Option<f64>,
    far: Option<f64>,
}

async fn camera_depth(
    Path(name): Path<String>,
    Query(q): Query<DepthQuery>,
    State(s): State<Arc<Shared>>,
) -> Response {
    let frame = match latest_frame(&s, &name) {
        Ok(f) => f,
        Err(r) => return r,
    };
    let (near, far) = (q.near.unwrap_or(0.1), q.far.unwrap_or(2.0));
    let gray = match normalize_depth(&frame.depth, near, far) {
        Ok(g) => g,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "BadRange", &e.to_string()),
    };
    match encode_gray_png(frame.width, frame.height, &gray) {
        Ok(png) => png_response(&frame, png),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "Codec", &e.to_string()),
    }
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
enum Role {
    Controller,
    #[default]
    Observer,
}

#[derive(Deserialize)]
struct WsQuery {
    #[serde(default)]
    role: Role,
}

async fn ws_upgrade(
    ws: WebSocketUpgrade,
    Query(q): Query<WsQuery>,
    State(s): State<Arc<Shared>>,
) -> Response {
    ws.on_upgrade(move |socket| session(socket, s, q.role))
}

async fn send_json(socket: &mut WebSocket, value: &impl Serialize) -> bool {
    let text = serde_json::to_string(value).expect("message serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn session(mut socket: WebSocket, s: Arc<Shared>, role: Role) {
    let _guard = match role {
        Role::Controller => {
            if s
                .controller
                .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
                .is_err()
            {
                let _ = socket
                    .send(Message::Close(Some(CloseFrame {
                        code: axum::extract::ws::close_code::POLICY,
                        reason: CONTROLLER_BUSY.into(),
                    })))
                    .await;
                return;
            }
            Some(ControllerGuard(s.clone()))
        }
        Role::Observer => None,
    };
    let mut interval = tokio::time::interval(s.stream_period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            _ = interval.tick() => {
                let state = s.state.read().unwrap().clone();
                if !send_json(&mut socket, &state).await {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = if role == Role::Controller {
                        CommandMessage::parse(text.as_str())
                            .and_then(|cmd| s.commands.send(cmd).map_err(|_| "control loop stopped".to_string()))
                    } else {
                        Err("observers cannot send commands".to_string())
                    };
                    if let Err(message) = reply {
                        if !send_json(&mut socket, &json!({ "type": "error", "message": message })).await {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_parsing() {
        assert_eq!(CommandMessage::parse(r#"{"type":"reset"}"#), Ok(CommandMessage::Reset));
        assert_eq!(
            CommandMessage::parse(r#"{"type":"recorder","cmd":"start"}"#),
            Ok(CommandMessage::Recorder(RecorderCommand::Start))
        );
        let a = CommandMessage::parse(
            r#"{"type":"action","motion":{"pos":[0.01,0,0],"orn":[0,0,0,1],"grip":1},"ref":"rel","path":"ptp","blocking":false}"#,
        )
        .unwrap();
        assert!(matches!(a, CommandMessage::Action(f) if f.motion.position.x == 0.01));
        assert!(CommandMessage::parse(r#"{"type":"recorder","cmd":"pause"}"#).is_err());
        assert!(CommandMessage::parse(r#"{"type":"fly"}"#).is_err());
        assert!(CommandMessage::parse(r#"[1]"#).is_err());
        assert!(CommandMessage::parse(
            r#"{"type":"action","motion":{"pos":[0,0,0],"orn":[0,0,0,2],"grip":1},"ref":"rel","path":"ptp","blocking":false}"#
        )
        .is_err());
    }
}
