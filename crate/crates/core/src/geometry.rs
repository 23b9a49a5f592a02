//! Rigid-body math.
//!
//! Conventions used throughout the crate:
//!
//! - right-handed frames, distances in meters;
//! - quaternions stored and serialized as `(x, y, z, w)`;
//! - transforms compose from the left: `t2.compose(&t1)` applies `t1` first;
//! - camera (and simulated TCP) frames: `+x` right, `+y` down, `+z` forward.
//!
//! On the wire a [`Vec3`] is `[x, y, z]`, a [`Quat`] is `[x, y, z, w]` and a
//! [`Pose`] is `{"pos": [..], "orn": [..]}`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted deviation of a quaternion norm from one.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Below this deviation of the squared norm a quaternion is kept bit-for-bit.
const RENORMALIZE_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("quaternion norm {norm} deviates from 1 by more than {UNIT_NORM_TOLERANCE}")]
    NonUnitQuaternion { norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the same direction, or `None` for a zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    /// Scales the vector down so that its norm does not exceed `max_norm`.
    pub fn clamp_norm(self, max_norm: f64) -> Vec3 {
        let n = self.norm();
        if n > max_norm {
            self * (max_norm / n)
        } else {
            self
        }
    }

    pub fn component_min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn component_max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("axis index {axis} out of range"),
        }
    }

    pub fn set(&mut self, axis: usize, value: f64) {
        match axis {
            0 => self.x = value,
            1 => self.y = value,
            2 => self.z = value,
            _ => panic!("axis index {axis} out of range"),
        }
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::from_array(a)
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x, self.y, self.z)
    }
}

/// 3x3 rotation matrix, row-major.
pub type Mat3 = [[f64; 3]; 3];

/// Unit quaternion in `(x, y, z, w)` order.
///
/// Construction validates the norm: inputs further than
/// [`UNIT_NORM_TOLERANCE`] from one are rejected, smaller deviations are
/// renormalized. Values that are already unit to within float precision are
/// stored unchanged so that serialization round trips are bit-exact.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    x: f64,
    y: f64,
    z: f64,
    w: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        w: 1.0,
    };

    pub fn new(x: f64, y: f64, z: f64, w: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && w.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let n2 = x * x + y * y + z * z + w * w;
        let norm = n2.sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        Ok(Self::renormalized(x, y, z, w))
    }

    /// Normalizes an arbitrary non-zero quaternion.
    pub fn normalize(x: f64, y: f64, z: f64, w: f64) -> Result<Self, GeometryError> {
        let norm = (x * x + y * y + z * z + w * w).sqrt();
        if !norm.is_finite() {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        if norm < 1e-300 {
            return Err(GeometryError::NonUnitQuaternion { norm });
        }
        Ok(Quat {
            x: x / norm,
            y: y / norm,
            z: z / norm,
            w: w / norm,
        })
    }

    // Callers guarantee the input is close to unit norm.
    fn renormalized(x: f64, y: f64, z: f64, w: f64) -> Self {
        let n2 = x * x + y * y + z * z + w * w;
        if (n2 - 1.0).abs() <= RENORMALIZE_THRESHOLD {
            Quat { x, y, z, w }
        } else {
            let n = n2.sqrt();
            Quat {
                x: x / n,
                y: y / n,
                z: z / n,
                w: w / n,
            }
        }
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.w]
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Vector part `(x, y, z)`.
    pub fn imag(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    /// A zero axis yields the identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        match axis.normalized() {
            Some(a) => {
                let (s, c) = (angle * 0.5).sin_cos();
                Self::renormalized(a.x * s, a.y * s, a.z * s, c)
            }
            None => Self::IDENTITY,
        }
    }

    pub fn from_rotation_z(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::Z, angle)
    }

    /// Exponential map: rotation vector (axis * angle) to quaternion.
    pub fn from_rotation_vector(v: Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            // second-order expansion keeps tiny rotations accurate
            Self::renormalized(v.x * 0.5, v.y * 0.5, v.z * 0.5, 1.0 - angle * angle / 8.0)
        } else {
            Self::from_axis_angle(v, angle)
        }
    }

    /// Logarithm map: quaternion to rotation vector with angle in `[0, pi]`.
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = self.canonical();
        let v = q.imag();
        let s = v.norm();
        if s < 1e-300 {
            return Vec3::ZERO;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    /// Representative with non-negative `w`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn conjugate(self) -> Self {
        Quat {
            x: -self.x,
            y: -self.y,
            z: -self.z,
            w: self.w,
        }
    }

    pub fn inverse(self) -> Self {
        self.conjugate()
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z + self.w * o.w
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(self) -> f64 {
        2.0 * self.imag().norm().atan2(self.w.abs())
    }

    /// Geodesic distance in `[0, pi]` between the two rotations.
    pub fn angle_to(self, o: Quat) -> f64 {
        (self.conjugate() * o).angle()
    }

    pub fn rotate(self, p: Vec3) -> Vec3 {
        // p + 2w(u x p) + 2 u x (u x p)
        let u = self.imag();
        let t = u.cross(p) * 2.0;
        p + t * self.w + u.cross(t)
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(self, other: Quat, s: f64) -> Quat {
        let mut cos = self.dot(other);
        let mut end = other;
        if cos < 0.0 {
            cos = -cos;
            end = -other;
        }
        if s <= 0.0 {
            return self;
        }
        if s >= 1.0 {
            return end;
        }
        if cos > 1.0 - 1e-12 {
            let lerp = |a: f64, b: f64| a + (b - a) * s;
            return Quat::renormalized(
                lerp(self.x, end.x),
                lerp(self.y, end.y),
                lerp(self.z, end.z),
                lerp(self.w, end.w),
            );
        }
        // relative rotation scaled by s keeps the result unit-norm
        let delta = self.conjugate() * end;
        let step = Quat::from_rotation_vector(delta.to_rotation_vector() * s);
        self * step
    }

    pub fn to_rotation_matrix(self) -> Mat3 {
        let Quat { x, y, z, w } = self;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    }

    /// Converts an orthonormal rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Mat3) -> Result<Self, GeometryError> {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let (x, y, z, w);
        if trace > m[0][0] && trace > m[1][1] && trace > m[2][2] {
            let s = (1.0 + trace).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[2][1] - m[1][2]) / s;
            y = (m[0][2] - m[2][0]) / s;
            z = (m[1][0] - m[0][1]) / s;
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            w = (m[2][1] - m[1][2]) / s;
            x = 0.25 * s;
            y = (m[0][1] + m[1][0]) / s;
            z = (m[0][2] + m[2][0]) / s;
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            w = (m[0][2] - m[2][0]) / s;
            x = (m[0][1] + m[1][0]) / s;
            y = 0.25 * s;
            z = (m[1][2] + m[2][1]) / s;
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            w = (m[1][0] - m[0][1]) / s;
            x = (m[0][2] + m[2][0]) / s;
            y = (m[1][2] + m[2][1]) / s;
            z = 0.25 * s;
        }
        Quat::new(x, y, z, w)
    }
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TryFrom<[f64; 4]> for Quat {
    type Error = GeometryError;
    fn try_from(a: [f64; 4]) -> Result<Self, Self::Error> {
        Quat::from_array(a)
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        q.to_array()
    }
}

impl fmt::Debug for Quat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quat[{}, {}, {}, {}]", self.x, self.y, self.z, self.w)
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat {
            x: -self.x,
            y: -self.y,
            z: -self.z,
            w: -self.w,
        }
    }
}

/// Hamilton product: `(a * b).rotate(p) == a.rotate(b.rotate(p))`.
impl Mul for Quat {
    type Output = Quat;
    fn mul(self, b: Quat) -> Quat {
        let a = self;
        Quat::renormalized(
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        )
    }
}

/// Rigid transform; maps points from its child frame into its parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "pos")]
    pub position: Vec3,
    #[serde(rename = "orn")]
    pub orientation: Quat,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Vec3::ZERO,
        orientation: Quat::IDENTITY,
    };

    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(t, Quat::IDENTITY)
    }

    pub fn from_rotation(q: Quat) -> Self {
        Self::new(Vec3::ZERO, q)
    }

    /// `self ∘ first`: the result applies `first`, then `self`.
    pub fn compose(&self, first: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation.rotate(first.position),
            orientation: self.orientation * first.orientation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let q = self.orientation.conjugate();
        Pose {
            position: -q.rotate(self.position),
            orientation: q,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.position + self.orientation.rotate(p)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
    }

    /// Translation distance and geodesic rotation angle to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            self.position.distance(other.position),
            self.orientation.angle_to(other.orientation),
        )
    }
}

/// Composes two transforms; `compose(t2, t1)` applies `t1` first.
pub fn compose(t2: &Pose, t1: &Pose) -> Pose {
    t2.compose(t1)
}

pub fn invert(t: &Pose) -> Pose {
    t.inverse()
}

pub fn rotate_point(q: Quat, p: Vec3) -> Vec3 {
    q.rotate(p)
}

pub fn slerp(q0: Quat, q1: Quat, s: f64) -> Quat {
    q0.slerp(q1, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn same_rotation(a: Quat, b: Quat, tol: f64) -> bool {
        a.angle_to(b) <= tol
    }

    #[test]
    fn compose_identity_is_neutral() {
        let t = Pose::new(
            Vec3::new(0.3, -0.1, 0.7),
            Quat::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.4),
        );
        assert_eq!(compose(&Pose::IDENTITY, &t), t);
    }

    #[test]
    fn pure_translations_add() {
        let t = compose(
            &Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
            &Pose::from_translation(Vec3::new(0.0, 2.0, 0.0)),
        );
        assert_eq!(t, Pose::from_translation(Vec3::new(1.0, 2.0, 0.0)));
    }

    #[test]
    fn rotation_applied_after_translation() {
        let t = compose(
            &Pose::from_rotation(Quat::from_rotation_z(FRAC_PI_2)),
            &Pose::from_translation(Vec3::X),
        );
        assert!(close(t.apply(Vec3::ZERO), Vec3::Y, 1e-15));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(invert(&Pose::IDENTITY).position, Vec3::ZERO);
        assert!(same_rotation(invert(&Pose::IDENTITY).orientation, Quat::IDENTITY, 0.0));
        let t = invert(&Pose::from_translation(Vec3::new(1.0, 2.0, 3.0)));
        assert_eq!(t.position, Vec3::new(-1.0, -2.0, -3.0));
        let r = invert(&Pose::from_rotation(Quat::from_rotation_z(FRAC_PI_2)));
        assert!(same_rotation(r.orientation, Quat::from_rotation_z(-FRAC_PI_2), 1e-15));
    }

    #[test]
    fn rotate_point_examples() {
        assert!(close(
            rotate_point(Quat::from_rotation_z(FRAC_PI_2), Vec3::X),
            Vec3::Y,
            1e-15
        ));
        let p = Vec3::new(0.25, -3.0, 7.5);
        assert_eq!(rotate_point(Quat::IDENTITY, p), p);
    }

    #[test]
    fn slerp_examples() {
        let q = Quat::from_axis_angle(Vec3::new(0.2, 1.0, -0.5), 1.1);
        assert!(same_rotation(slerp(q, q, 0.5), q, 1e-12));
        let half = slerp(Quat::IDENTITY, Quat::from_rotation_z(FRAC_PI_2), 0.5);
        assert!(same_rotation(half, Quat::from_rotation_z(FRAC_PI_4), 1e-12));
    }

    #[test]
    fn slerp_quarter_of_120_degrees_is_30_degrees() {
        let q0 = Quat::from_axis_angle(Vec3::new(1.0, -1.0, 0.5), 0.3);
        let q1 = q0 * Quat::from_axis_angle(Vec3::new(0.0, 1.0, 1.0), 120f64.to_radians());
        let s = slerp(q0, q1, 0.25);
        // geodesic angle via the dot product, independent of the log map
        let dot = q0.dot(s).abs().min(1.0);
        let angle = 2.0 * dot.acos();
        assert!((angle - 30f64.to_radians()).abs() < 1e-9, "{angle}");
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        let q0 = Quat::IDENTITY;
        let q1 = -Quat::from_rotation_z(0.2);
        let mid = slerp(q0, q1, 0.5);
        assert!(same_rotation(mid, Quat::from_rotation_z(0.1), 1e-12));
        assert_eq!(slerp(q0, q1, 0.0), q0);
        assert!(same_rotation(slerp(q0, q1, 1.0), q1, 1e-15));
    }

    #[test]
    fn construction_rejects_and_renormalizes() {
        assert!(matches!(
            Quat::new(0.0, 0.0, 0.0, 0.0),
            Err(GeometryError::NonUnitQuaternion { .. })
        ));
        assert!(matches!(
            Quat::new(0.0, 0.0, 0.0, 1.01),
            Err(GeometryError::NonUnitQuaternion { .. })
        ));
        assert!(matches!(
            Quat::new(f64::NAN, 0.0, 0.0, 1.0),
            Err(GeometryError::NonFinite(_))
        ));
        let q = Quat::new(0.0, 0.0, 0.0, 1.0 + 5e-7).unwrap();
        assert_eq!(q.w(), 1.0);
    }

    #[test]
    fn rotation_vector_round_trip() {
        let v = Vec3::new(0.3, -1.2, 0.8);
        let q = Quat::from_rotation_vector(v);
        assert!(close(q.to_rotation_vector(), v, 1e-14));
        let near_pi = Quat::from_axis_angle(Vec3::Y, PI - 1e-9);
        assert!((near_pi.to_rotation_vector().norm() - (PI - 1e-9)).abs() < 1e-12);
    }

    #[test]
    fn serde_forms() {
        let p = Pose::new(Vec3::new(0.3, 0.0, 0.2), Quat::IDENTITY);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"pos":[0.3,0.0,0.2],"orn":[0.0,0.0,0.0,1.0]}"#);
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Quat>("[0,0,0,0]").is_err());
    }
}
