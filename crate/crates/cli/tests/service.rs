use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use roboshim::actions::{encode, ActionFrame, GripperCommand, PathMode};
use roboshim::camera::{decode_gray_png, decode_rgb_png};
use roboshim::geometry::{Quat, Vec3};
use roboshim_cli::config::Config;
use roboshim_cli::service::{self, ServiceError, StateMessage, CONTROLLER_BUSY};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::stream::MaybeTlsStream;
use tokio_tungstenite::tungstenite::{connect, Message, WebSocket};

type Socket = WebSocket<MaybeTlsStream<TcpStream>>;

fn config(root: &std::path::Path, camera_fps: f64) -> Config {
    let mut c = Config::default();
    for cam in &mut c.cameras {
        cam.intrinsics = roboshim::camera::Intrinsics::new(30.0, 30.0, 15.5, 11.5, 32, 24).unwrap();
        cam.fps = camera_fps;
    }
    c.recorder.root = root.to_path_buf();
    c
}

fn open(addr: SocketAddr, role: &str) -> Socket {
    let (mut ws, _) = connect(format!("ws://{addr}/ws?role={role}")).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_mut() {
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    }
    ws
}

/// Next state message, skipping anything else.
fn next_state(ws: &mut Socket) -> StateMessage {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => {
                let v: serde_json::Value = serde_json::from_str(t.as_str()).unwrap();
                if v["type"] == "state" {
                    return serde_json::from_value(v).unwrap();
                }
            }
            Message::Close(f) => panic!("closed: {f:?}"),
            _ => {}
        }
    }
}

fn next_error(ws: &mut Socket) -> String {
    loop {
        if let Message::Text(t) = ws.read().unwrap() {
            let v: serde_json::Value = serde_json::from_str(t.as_str()).unwrap();
            if v["type"] == "error" {
                return v["message"].as_str().unwrap().to_string();
            }
        }
    }
}

fn send(ws: &mut Socket, text: String) {
    ws.send(Message::Text(text.into())).unwrap();
}

fn action_message(a: &ActionFrame) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&encode(a).unwrap()).unwrap();
    v["type"] = "action".into();
    v.to_string()
}

fn rel_x(dx: f64) -> ActionFrame {
    ActionFrame::relative(Vec3::new(dx, 0.0, 0.0), Quat::IDENTITY, GripperCommand::OPEN, PathMode::Ptp, false)
}

#[test]
fn observer_sees_static_pose() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(root.path(), 30.0);
    let h = service::start(&cfg, 0).unwrap();
    let mut ws = open(h.addr(), "observer");
    let first = next_state(&mut ws);
    for _ in 0..10 {
        let s = next_state(&mut ws);
        assert_eq!(s.tcp_pos, first.tcp_pos);
        assert_eq!(s.tcp_orn, first.tcp_orn);
        assert!(!s.moving && !s.recording);
        assert_eq!(s.workspace, cfg.workspace);
    }
    assert_eq!(first.tcp_pos, cfg.robot.neutral_pose.position.to_array());
    // observers may not command
    send(&mut ws, action_message(&rel_x(0.01)));
    assert_eq!(next_error(&mut ws), "observers cannot send commands");
    h.shutdown();
}

#[test]
fn controller_action_moves_within_step() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(root.path(), 30.0);
    let h = service::start(&cfg, 0).unwrap();
    let mut ws = open(h.addr(), "controller");
    let x0 = next_state(&mut ws).tcp_pos[0];
    send(&mut ws, action_message(&rel_x(0.01)));
    let s = next_state(&mut ws);
    assert!(s.tcp_pos[0] - x0 <= 0.01 + 1e-12);
    // the held target is reached exactly once the pipeline settles
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let s = next_state(&mut ws);
        assert!(s.tcp_pos[0] - x0 <= 0.01 + 1e-12, "overshoot {}", s.tcp_pos[0] - x0);
        if (s.tcp_pos[0] - (x0 + 0.01)).abs() < 1e-9 && !s.moving {
            break;
        }
        assert!(Instant::now() < deadline, "never settled: {}", s.tcp_pos[0] - x0);
    }

    send(&mut ws, "{\"type\":\"fly\"}".into());
    assert!(next_error(&mut ws).contains("unknown message type"));

    send(&mut ws, "{\"type\":\"reset\"}".into());
    let deadline = Instant::now() + Duration::from_secs(5);
    while (next_state(&mut ws).tcp_pos[0] - x0).abs() > 1e-3 {
        assert!(Instant::now() < deadline);
    }
    h.shutdown();
}

#[test]
fn only_one_controller() {
    let root = tempfile::tempdir().unwrap();
    let h = service::start(&config(root.path(), 30.0), 0).unwrap();
    let mut first = open(h.addr(), "controller");
    next_state(&mut first);
    let mut second = open(h.addr(), "controller");
    match second.read().unwrap() {
        Message::Close(Some(f)) => {
            assert_eq!(f.reason.as_str(), CONTROLLER_BUSY);
            assert_eq!(f.code, CloseCode::Policy);
        }
        other => panic!("expected close, got {other:?}"),
    }
    // observers are unaffected
    let mut obs = open(h.addr(), "observer");
    next_state(&mut obs);
    // the slot frees when the controller leaves
    first.close(None).unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let mut c = open(h.addr(), "controller");
        match c.read().unwrap() {
            Message::Text(_) => break,
            Message::Close(_) => {
                assert!(Instant::now() < deadline);
                std::thread::sleep(Duration::from_millis(50));
            }
            _ => {}
        }
    }
    h.shutdown();
}

#[test]
fn camera_endpoints() {
    let root = tempfile::tempdir().unwrap();
    // slow cameras so consecutive fetches see the same frame
    let h = service::start(&config(root.path(), 0.2), 0).unwrap();
    let base = format!("http://{}", h.addr());
    let client = reqwest::blocking::Client::new();

    let r = client.get(format!("{base}/camera/front/rgb.png")).send().unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.headers()["content-type"], "image/png");
    let seq = r.headers()["x-frame-seq"].to_str().unwrap().to_string();
    let ts: f64 = r.headers()["x-frame-timestamp"].to_str().unwrap().parse().unwrap();
    assert!(ts >= 0.0);
    let (w, hgt, rgb) = decode_rgb_png(&r.bytes().unwrap()).unwrap();
    assert_eq!((w, hgt, rgb.len()), (32, 24, 32 * 24 * 3));
    let again = client.get(format!("{base}/camera/front/rgb.png")).send().unwrap();
    assert_eq!(again.headers()["x-frame-seq"].to_str().unwrap(), seq);

    let r = client.get(format!("{base}/camera/nope/rgb.png")).send().unwrap();
    assert_eq!(r.status(), 404);
    let body: serde_json::Value = r.json().unwrap();
    assert_eq!(body["error"], "UnknownCamera");
    assert_eq!(client.get(format!("{base}/camera/nope/depth.png")).send().unwrap().status(), 404);

    // the front camera sees the table about 0.9 m away everywhere
    let gray = |near: f64, far: f64| {
        let r = client
            .get(format!("{base}/camera/front/depth.png?near={near}&far={far}"))
            .send()
            .unwrap();
        assert_eq!(r.status(), 200);
        decode_gray_png(&r.bytes().unwrap()).unwrap().2
    };
    assert!(gray(0.1, 0.2).iter().all(|p| *p == 255));
    assert!(gray(5.0, 6.0).iter().all(|p| *p == 0));
    let mid = gray(0.5, 1.5);
    assert!(mid.iter().all(|p| *p > 0 && *p < 255));
    let r = client.get(format!("{base}/camera/front/depth.png?near=2&far=1")).send().unwrap();
    assert_eq!(r.status(), 400);

    let info: serde_json::Value = client.get(format!("{base}/info")).send().unwrap().json().unwrap();
    assert_eq!(info["dt"], 0.01);
    assert_eq!(info["state_rate_hz"], 20.0);
    assert_eq!(info["cameras"].as_array().unwrap().len(), 2);
    assert_eq!(info["input"]["bindings"]["ArrowRight"], "plus_x");
    h.shutdown();
}

#[test]
fn recorder_commands_produce_an_episode() {
    let root = tempfile::tempdir().unwrap();
    let h = service::start(&config(root.path(), 30.0), 0).unwrap();
    let base = format!("http://{}", h.addr());
    let mut ws = open(h.addr(), "controller");
    send(&mut ws, r#"{"type":"recorder","cmd":"start"}"#.into());
    while !next_state(&mut ws).recording {}
    for _ in 0..10 {
        send(&mut ws, action_message(&rel_x(0.002)));
        std::thread::sleep(Duration::from_millis(30));
    }
    // let the last commands land; buffered states lag, so track the largest
    // count seen until recording stops
    std::thread::sleep(Duration::from_millis(200));
    send(&mut ws, r#"{"type":"recorder","cmd":"stop"}"#.into());
    let mut frames = 0;
    loop {
        let s = next_state(&mut ws);
        if !s.recording {
            break;
        }
        frames = frames.max(s.episode_frames);
    }
    // actions closer together than a period may coalesce
    assert!(frames > 0 && frames <= 10, "{frames}");
    let list: serde_json::Value = reqwest::blocking::get(format!("{base}/episodes")).unwrap().json().unwrap();
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["frame_count"].as_u64().unwrap() as usize, frames);

    // discard leaves nothing behind
    send(&mut ws, r#"{"type":"recorder","cmd":"start"}"#.into());
    while !next_state(&mut ws).recording {}
    send(&mut ws, action_message(&rel_x(0.001)));
    send(&mut ws, r#"{"type":"recorder","cmd":"discard"}"#.into());
    while next_state(&mut ws).recording {}
    assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 1);
    h.shutdown();
}

#[test]
fn episode_open_at_shutdown_is_closed() {
    let root = tempfile::tempdir().unwrap();
    let h = service::start(&config(root.path(), 30.0), 0).unwrap();
    let mut ws = open(h.addr(), "controller");
    send(&mut ws, r#"{"type":"recorder","cmd":"start"}"#.into());
    while !next_state(&mut ws).recording {}
    send(&mut ws, action_message(&rel_x(0.002)));
    while next_state(&mut ws).episode_frames == 0 {}
    drop(ws);
    h.shutdown();
    let eps = roboshim::environment::list_episodes(root.path());
    assert_eq!(eps.len(), 1);
    assert_eq!(eps[0].frame_count, 1);
}

#[test]
fn port_in_use() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let root = tempfile::tempdir().unwrap();
    match service::start(&config(root.path(), 30.0), port) {
        Err(ServiceError::PortInUse(p)) => assert_eq!(p, port),
        Err(e) => panic!("unexpected {e}"),
        Ok(_) => panic!("bound a taken port"),
    }
}

#[test]
fn stream_rate_over_ten_seconds() {
    let root = tempfile::tempdir().unwrap();
    let cfg = config(root.path(), 30.0);
    let period = 1.0 / cfg.service.state_rate_hz;
    let h = service::start(&cfg, 0).unwrap();
    let mut ws = open(h.addr(), "observer");
    next_state(&mut ws);
    let mut last = Instant::now();
    let end = last + Duration::from_secs(10);
    let mut count = 0;
    while Instant::now() < end {
        next_state(&mut ws);
        let now = Instant::now();
        let gap = (now - last).as_secs_f64();
        assert!(gap >= 0.5 * period && gap <= 2.0 * period, "gap {gap} s");
        last = now;
        count += 1;
    }
    assert!((190..=210).contains(&count), "{count} messages");
    h.shutdown();
}
