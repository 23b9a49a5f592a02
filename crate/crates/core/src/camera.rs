//! Pinhole camera geometry, frames, a ray-cast synthetic camera and a
//! latest-frame threaded wrapper.
//!
//! Camera frame: +x right, +y down, +z far. Pixel `(u, v)` is column `u`,
//! row `v`, with the pixel center at integer coordinates.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};

/// Meters per unit of the 16-bit depth encoding.
pub const DEPTH_SCALE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("camera not started")]
    CameraNotStarted,
    #[error("acquisition loop terminated: {0}")]
    AcquisitionDead(String),
    #[error("point has z = {z} <= 0 (behind the camera)")]
    BehindCamera { z: f64 },
    #[error("invalid depth {depth}")]
    InvalidDepth { depth: f64 },
    #[error("frame is {frame_width}x{frame_height} but intrinsics are {width}x{height}")]
    DimensionMismatch {
        frame_width: u32,
        frame_height: u32,
        width: u32,
        height: u32,
    },
    #[error("depth range near={near} far={far} is empty")]
    BadRange { near: f64, far: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("image codec: {0}")]
    Codec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let i = Self { fx, fy, cx, cy, width, height };
        i.validate()?;
        Ok(i)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(CameraError::InvalidIntrinsics("cx outside [0, width)"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::InvalidIntrinsics("cy outside [0, height)"));
        }
        Ok(())
    }

    /// 3x3 camera matrix K, row-major.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// One acquisition. `depth` is in meters, row-major, 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
    pub timestamp: f64,
    pub seq: u64,
}

impl Frame {
    pub fn rgb_at(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v as usize * self.width as usize + u as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, u: u32, v: u32) -> f32 {
        self.depth[v as usize * self.width as usize + u as usize]
    }

    fn check_dims(&self, i: &Intrinsics) -> Result<(), CameraError> {
        let n = self.width as usize * self.height as usize;
        if self.width != i.width
            || self.height != i.height
            || self.depth.len() != n
            || self.rgb.len() != 3 * n
        {
            return Err(CameraError::DimensionMismatch {
                frame_width: self.width,
                frame_height: self.height,
                width: i.width,
                height: i.height,
            });
        }
        Ok(())
    }
}

pub fn project(i: &Intrinsics, p: Vec3) -> Result<(f64, f64), CameraError> {
    if !(p.z > 0.0) {
        return Err(CameraError::BehindCamera { z: p.z });
    }
    Ok((i.fx * p.x / p.z + i.cx, i.fy * p.y / p.z + i.cy))
}

pub fn deproject(i: &Intrinsics, u: f64, v: f64, depth: f64) -> Result<Vec3, CameraError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(CameraError::InvalidDepth { depth });
    }
    Ok(Vec3::new(
        (u - i.cx) * depth / i.fx,
        (v - i.cy) * depth / i.fy,
        depth,
    ))
}

/// One point per valid-depth pixel, in the camera frame, with its color.
pub fn point_cloud(f: &Frame, i: &Intrinsics) -> Result<Vec<(Vec3, [u8; 3])>, CameraError> {
    f.check_dims(i)?;
    let mut out = Vec::new();
    for v in 0..f.height {
        for u in 0..f.width {
            let d = f.depth_at(u, v);
            if d > 0.0 {
                let p = deproject(i, u as f64, v as f64, d as f64)?;
                out.push((p, f.rgb_at(u, v)));
            }
        }
    }
    Ok(out)
}

/// Maps `[near, far]` linearly onto `[0, 255]`, clamped, rounding half to
/// even. Invalid (0) depth maps to 0.
pub fn normalize_depth(depth: &[f32], near: f64, far: f64) -> Result<Vec<u8>, CameraError> {
    if !(near.is_finite() && far.is_finite() && near < far) {
        return Err(CameraError::BadRange { near, far });
    }
    Ok(depth
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                return 0;
            }
            let x = (d as f64 - near) / (far - near) * 255.0;
            x.clamp(0.0, 255.0).round_ties_even() as u8
        })
        .collect())
}

/// Depth in meters recovered from the 16-bit millimeter encoding.
pub fn depth_from_mm(mm: u16) -> f32 {
    (mm as f64 * DEPTH_SCALE) as f32
}

/// 16-bit millimeter code for a depth in meters; 0 if invalid or out of range.
pub fn depth_to_mm(d: f32) -> u16 {
    let mm = (d as f64 / DEPTH_SCALE).round();
    if d > 0.0 && mm >= 1.0 && mm <= u16::MAX as f64 {
        mm as u16
    } else {
        0
    }
}

fn png_err(e: impl std::fmt::Display) -> CameraError {
    CameraError::Codec(e.to_string())
}

fn encode_png(
    width: u32,
    height: u32,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<Vec<u8>, CameraError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width, height);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
    }
    Ok(buf)
}

fn decode_png(bytes: &[u8]) -> Result<(png::OutputInfo, Vec<u8>), CameraError> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

pub fn encode_rgb_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>, CameraError> {
    encode_png(width, height, png::ColorType::Rgb, png::BitDepth::Eight, rgb)
}

pub fn encode_gray_png(width: u32, height: u32, gray: &[u8]) -> Result<Vec<u8>, CameraError> {
    encode_png(width, height, png::ColorType::Grayscale, png::BitDepth::Eight, gray)
}

/// 16-bit grayscale PNG of depth in millimeters.
pub fn encode_depth_png(width: u32, height: u32, depth: &[f32]) -> Result<Vec<u8>, CameraError> {
    let data: Vec<u8> = depth
        .iter()
        .flat_map(|&d| depth_to_mm(d).to_be_bytes())
        .collect();
    encode_png(width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), CameraError> {
    let (info, buf) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(CameraError::Codec("expected 8-bit RGB PNG".into()));
    }
    Ok((info.width, info.height, buf))
}

pub fn decode_gray_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), CameraError> {
    let (info, buf) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(CameraError::Codec("expected 8-bit grayscale PNG".into()));
    }
    Ok((info.width, info.height, buf))
}

pub fn decode_depth_png(bytes: &[u8]) -> Result<(u32, u32, Vec<f32>), CameraError> {
    let (info, buf) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(CameraError::Codec("expected 16-bit grayscale PNG".into()));
    }
    let depth = buf
        .chunks_exact(2)
        .map(|c| depth_from_mm(u16::from_be_bytes([c[0], c[1]])))
        .collect();
    Ok((info.width, info.height, depth))
}

pub trait Camera: Send {
    fn start(&mut self) -> Result<(), CameraError>;
    fn stop(&mut self);
    fn is_started(&self) -> bool;
    fn get_image(&mut self) -> Result<Frame, CameraError>;
    fn intrinsics(&self) -> Intrinsics;
    /// Native acquisition rate.
    fn fps(&self) -> f64;
    /// Pose of the camera in the world frame, for backends that render from
    /// it. Hardware cameras ignore it.
    fn set_pose(&mut self, _pose: &Pose) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Plane {
        point: Vec3,
        normal: Vec3,
        color: [u8; 3],
    },
    Sphere {
        center: Vec3,
        radius: f64,
        color: [u8; 3],
    },
    /// Infinite plane with alternating squares of side `square` aligned with
    /// `u_axis` (projected onto the plane).
    Checkerboard {
        point: Vec3,
        normal: Vec3,
        u_axis: Vec3,
        square: f64,
        colors: [[u8; 3]; 2],
    },
}

impl Primitive {
    /// Smallest ray parameter `t > 0` where `origin + t * dir` hits the
    /// primitive.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        match self {
            Primitive::Plane { point, normal, .. } | Primitive::Checkerboard { point, normal, .. } => {
                let denom = dir.dot(*normal);
                if denom == 0.0 {
                    return None;
                }
                let t = (*point - origin).dot(*normal) / denom;
                (t > 0.0).then_some(t)
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - *center;
                let a = dir.dot(dir);
                let half_b = oc.dot(dir);
                let c = oc.dot(oc) - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // numerically stable root pair
                let q = -half_b - sq.copysign(half_b);
                let (mut t0, mut t1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    fn color_at(&self, hit: Vec3) -> [u8; 3] {
        match self {
            Primitive::Plane { color, .. } | Primitive::Sphere { color, .. } => *color,
            Primitive::Checkerboard {
                point,
                normal,
                u_axis,
                square,
                colors,
            } => {
                let n = normal.normalized().unwrap_or(Vec3::Z);
                let u = (*u_axis - n * u_axis.dot(n)).normalized().unwrap_or(Vec3::X);
                let v = n.cross(u);
                let rel = hit - *point;
                let a = (rel.dot(u) / square).floor() as i64;
                let b = (rel.dot(v) / square).floor() as i64;
                colors[(a + b).rem_euclid(2) as usize]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: [u8; 3],
}

impl Default for Scene {
    /// Checkerboard table at z = 0 with a red ball on it.
    fn default() -> Self {
        Self {
            primitives: vec![
                Primitive::Checkerboard {
                    point: Vec3::ZERO,
                    normal: Vec3::Z,
                    u_axis: Vec3::X,
                    square: 0.05,
                    colors: [[200, 200, 200], [60, 60, 60]],
                },
                Primitive::Sphere {
                    center: Vec3::new(0.45, 0.05, 0.03),
                    radius: 0.03,
                    color: [220, 40, 40],
                },
            ],
            background: [0, 0, 0],
        }
    }
}

impl Scene {
    /// Nearest hit along a world-frame ray: `(t, color)`.
    pub fn cast(&self, origin: Vec3, dir: Vec3) -> Option<(f64, [u8; 3])> {
        let mut best: Option<(f64, &Primitive)> = None;
        for p in &self.primitives {
            if let Some(t) = p.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, p));
                }
            }
        }
        best.map(|(t, p)| (t, p.color_at(origin + dir * t)))
    }
}

/// Deterministic ray-casting camera. Pixels depend only on scene, pose and
/// intrinsics; timestamps are `seq / fps`.
#[derive(Debug, Clone)]
pub struct SyntheticCamera {
    intrinsics: Intrinsics,
    scene: Arc<Scene>,
    pose: Pose,
    fps: f64,
    /// Round depth to whole millimeters so the 16-bit storage is lossless.
    quantize_depth: bool,
    started: bool,
    seq: u64,
}

impl SyntheticCamera {
    pub fn new(intrinsics: Intrinsics, scene: Arc<Scene>, pose: Pose) -> Result<Self, CameraError> {
        intrinsics.validate()?;
        Ok(Self {
            intrinsics,
            scene,
            pose,
            fps: 30.0,
            quantize_depth: true,
            started: false,
            seq: 0,
        })
    }

    pub fn with_fps(mut self, fps: f64) -> Self {
        assert!(fps > 0.0, "fps must be positive");
        self.fps = fps;
        self
    }

    pub fn with_quantized_depth(mut self, quantize: bool) -> Self {
        self.quantize_depth = quantize;
        self
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn render(&self, seq: u64) -> Frame {
        let i = &self.intrinsics;
        let n = i.pixel_count();
        let mut rgb = Vec::with_capacity(3 * n);
        let mut depth = Vec::with_capacity(n);
        let origin = self.pose.position;
        let q = self.pose.orientation;
        for v in 0..i.height {
            for u in 0..i.width {
                // camera-frame ray with unit z, so t equals depth
                let ray = Vec3::new((u as f64 - i.cx) / i.fx, (v as f64 - i.cy) / i.fy, 1.0);
                match self.scene.cast(origin, q.rotate(ray)) {
                    Some((t, color)) => {
                        let d = if self.quantize_depth {
                            depth_from_mm(depth_to_mm(t as f32))
                        } else {
                            t as f32
                        };
                        depth.push(d);
                        rgb.extend_from_slice(&color);
                    }
                    None => {
                        depth.push(0.0);
                        rgb.extend_from_slice(&self.scene.background);
                    }
                }
            }
        }
        Frame {
            width: i.width,
            height: i.height,
            rgb,
            depth,
            timestamp: seq as f64 / self.fps,
            seq,
        }
    }
}

impl Camera for SyntheticCamera {
    fn start(&mut self) -> Result<(), CameraError> {
        self.started = true;
        Ok(())
    }

    fn stop(&mut self) {
        self.started = false;
    }

    fn is_started(&self) -> bool {
        self.started
    }

    fn get_image(&mut self) -> Result<Frame, CameraError> {
        if !self.started {
            return Err(CameraError::CameraNotStarted);
        }
        self.seq += 1;
        Ok(self.render(self.seq))
    }

    fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn set_pose(&mut self, pose: &Pose) {
        self.pose = *pose;
    }
}

#[derive(Debug, Clone)]
struct Stamped {
    frame: Arc<Frame>,
    acquired: Instant,
}

#[derive(Debug, Default)]
struct Shared {
    latest: RwLock<Option<Stamped>>,
    running: AtomicBool,
    dead: Mutex<Option<String>>,
    pose: Mutex<Option<Pose>>,
}

/// Polls a camera on a background thread at its native rate and keeps only
/// the most recent frame.
pub struct ThreadedCamera {
    camera: Mutex<Option<Box<dyn Camera>>>,
    intrinsics: Intrinsics,
    shared: Arc<Shared>,
    worker: Option<JoinHandle<Box<dyn Camera>>>,
}

impl ThreadedCamera {
    pub fn new(camera: Box<dyn Camera>) -> Self {
        Self {
            intrinsics: camera.intrinsics(),
            camera: Mutex::new(Some(camera)),
            shared: Arc::new(Shared::default()),
            worker: None,
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn is_started(&self) -> bool {
        self.worker.is_some()
    }

    /// Starts acquisition; the first frame is grabbed before returning.
    pub fn start(&mut self) -> Result<(), CameraError> {
        if self.worker.is_some() {
            return Ok(());
        }
        let mut cam = self
            .camera
            .get_mut()
            .unwrap()
            .take()
            .expect("camera present while stopped");
        if let Err(e) = cam.start().and_then(|_| cam.get_image()).map(|f| {
            *self.shared.latest.write().unwrap() = Some(Stamped {
                frame: Arc::new(f),
                acquired: Instant::now(),
            });
        }) {
            cam.stop();
            *self.camera.get_mut().unwrap() = Some(cam);
            return Err(e);
        }
        *self.shared.dead.lock().unwrap() = None;
        self.shared.running.store(true, Ordering::SeqCst);
        let shared = Arc::clone(&self.shared);
        let period = Duration::from_secs_f64(1.0 / cam.fps());
        self.worker = Some(std::thread::spawn(move || acquire_loop(cam, shared, period)));
        Ok(())
    }

    pub fn stop(&mut self) {
        self.shared.running.store(false, Ordering::SeqCst);
        if let Some(worker) = self.worker.take() {
            match worker.join() {
                Ok(mut cam) => {
                    cam.stop();
                    *self.camera.get_mut().unwrap() = Some(cam);
                }
                Err(_) => {
                    *self.shared.dead.lock().unwrap() = Some("acquisition thread panicked".into());
                }
            }
        }
        *self.shared.latest.write().unwrap() = None;
    }

    /// Most recent complete frame. Never waits for acquisition.
    pub fn latest(&self) -> Result<Arc<Frame>, CameraError> {
        self.latest_with_age().map(|(f, _)| f)
    }

    /// Most recent frame and the wall time since it was acquired.
    pub fn latest_with_age(&self) -> Result<(Arc<Frame>, Duration), CameraError> {
        if let Some(reason) = self.shared.dead.lock().unwrap().clone() {
            return Err(CameraError::AcquisitionDead(reason));
        }
        if self.worker.is_none() {
            return Err(CameraError::CameraNotStarted);
        }
        let guard = self.shared.latest.read().unwrap();
        let s = guard.as_ref().ok_or(CameraError::CameraNotStarted)?;
        Ok((Arc::clone(&s.frame), s.acquired.elapsed()))
    }

    /// Pose applied before the next acquisition.
    pub fn set_pose(&self, pose: &Pose) {
        *self.shared.pose.lock().unwrap() = Some(*pose);
    }
}

impl Drop for ThreadedCamera {
    fn drop(&mut self) {
        self.stop();
    }
}

fn acquire_loop(mut cam: Box<dyn Camera>, shared: Arc<Shared>, period: Duration) -> Box<dyn Camera> {
    let mut next = Instant::now() + period;
    while shared.running.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < next {
            std::thread::sleep((next - now).min(Duration::from_millis(5)));
            continue;
        }
        next += period;
        if next < now {
            next = now + period;
        }
        if let Some(pose) = shared.pose.lock().unwrap().take() {
            cam.set_pose(&pose);
        }
        match cam.get_image() {
            Ok(frame) => {
                *shared.latest.write().unwrap() = Some(Stamped {
                    frame: Arc::new(frame),
                    acquired: Instant::now(),
                });
            }
            Err(e) => {
                *shared.dead.lock().unwrap() = Some(e.to_string());
                break;
            }
        }
    }
    cam
}
