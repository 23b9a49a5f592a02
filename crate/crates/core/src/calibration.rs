//! Hand-eye calibration (AX = XB) for wrist and static cameras.
//!
//! Rotation is solved first by aligning the rotation vectors of the gripper
//! motions with those of the marker motions (orthogonal Procrustes via SVD),
//! then translation by linear least squares on `(R_A - I) t_X = R_X t_B - t_A`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Quat, Vec3};

/// Rotations smaller than this carry no usable axis information (rad).
pub const MIN_MOTION_ANGLE: f64 = 1.0 * std::f64::consts::PI / 180.0;
/// Two usable rotation axes must differ by more than this (rad).
pub const MIN_AXIS_SEPARATION: f64 = 1.0 * std::f64::consts::PI / 180.0;
/// Largest observation count accepted in all-pairs mode.
pub const ALL_PAIRS_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least {min} observations, got {n}")]
    TooFewObservations { n: usize, min: usize },
    #[error("motions are degenerate: rotation axes are parallel within 1 degree or rotations are below 1 degree")]
    DegenerateMotions,
    #[error("all-pairs mode supports at most {ALL_PAIRS_LIMIT} observations, got {n}")]
    TooManyForAllPairs { n: usize },
    #[error("observation {index} contains a non-finite pose")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseObservation {
    #[serde(default)]
    pub t: f64,
    pub gripper_in_base: Pose,
    pub marker_in_camera: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEyeResult {
    #[serde(rename = "X")]
    pub x: Pose,
    /// RMS, rad
    pub rotation_residual: f64,
    /// RMS, m
    pub translation_residual: f64,
    pub n_motions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPair {
    pub a: Pose,
    pub b: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    #[default]
    Consecutive,
    AllPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HandEyeMode {
    /// Camera on the wrist; X is the camera pose in the TCP frame.
    EyeInHand,
    /// Static camera, marker on the gripper; X is the camera pose in the base frame.
    EyeToBase,
}

fn index_pairs(n: usize, pairing: Pairing) -> Result<Vec<(usize, usize)>, CalibrationError> {
    if n < 3 {
        return Err(CalibrationError::TooFewObservations { n, min: 3 });
    }
    match pairing {
        Pairing::Consecutive => Ok((0..n - 1).map(|i| (i, i + 1)).collect()),
        Pairing::AllPairs => {
            if n > ALL_PAIRS_LIMIT {
                return Err(CalibrationError::TooManyForAllPairs { n });
            }
            Ok((0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect())
        }
    }
}

fn check_finite(obs: &[PoseObservation]) -> Result<(), CalibrationError> {
    match obs
        .iter()
        .position(|o| !o.gripper_in_base.is_finite() || !o.marker_in_camera.is_finite())
    {
        Some(index) => Err(CalibrationError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Eye-in-hand motion pairs: `A = G_j^-1 G_i`, `B = M_j M_i^-1`.
pub fn build_motion_pairs(
    obs: &[PoseObservation],
    pairing: Pairing,
) -> Result<Vec<MotionPair>, CalibrationError> {
    check_finite(obs)?;
    Ok(index_pairs(obs.len(), pairing)?
        .into_iter()
        .map(|(i, j)| {
            let (gi, gj) = (&obs[i].gripper_in_base, &obs[j].gripper_in_base);
            let (mi, mj) = (&obs[i].marker_in_camera, &obs[j].marker_in_camera);
            MotionPair {
                a: gj.inverse().compose(gi),
                b: mj.compose(&mi.inverse()),
            }
        })
        .collect())
}

/// Eye-to-base motion pairs: `A = G_j G_i^-1`, `B = M_j M_i^-1`.
pub fn build_eye_to_base_pairs(
    obs: &[PoseObservation],
    pairing: Pairing,
) -> Result<Vec<MotionPair>, CalibrationError> {
    let inverted: Vec<PoseObservation> = obs
        .iter()
        .map(|o| PoseObservation {
            gripper_in_base: o.gripper_in_base.inverse(),
            ..*o
        })
        .collect();
    build_motion_pairs(&inverted, pairing)
}

fn to_na(v: Vec3) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

fn rotation_matrix(q: Quat) -> Matrix3<f64> {
    let m = q.to_rotation_matrix();
    Matrix3::from_fn(|r, c| m[r][c])
}

fn check_degeneracy(pairs: &[MotionPair]) -> Result<(), CalibrationError> {
    let axes: Vec<Vec3> = pairs
        .iter()
        .filter(|p| p.a.orientation.angle() > MIN_MOTION_ANGLE)
        .filter_map(|p| p.a.orientation.to_rotation_vector().normalized())
        .collect();
    for (k, a) in axes.iter().enumerate() {
        for b in &axes[k + 1..] {
            let sep = a.dot(*b).abs().min(1.0).acos();
            if sep > MIN_AXIS_SEPARATION {
                return Ok(());
            }
        }
    }
    Err(CalibrationError::DegenerateMotions)
}

/// Solves `A X = X B` over the given motion pairs.
pub fn solve_ax_xb(pairs: &[MotionPair]) -> Result<HandEyeResult, CalibrationError> {
    if pairs.len() < 2 {
        return Err(CalibrationError::TooFewObservations {
            n: pairs.len() + 1,
            min: 3,
        });
    }
    check_degeneracy(pairs)?;

    // R_X maps marker-motion axes onto gripper-motion axes
    let mut h = Matrix3::zeros();
    for p in pairs {
        let alpha = to_na(p.a.orientation.to_rotation_vector());
        let beta = to_na(p.b.orientation.to_rotation_vector());
        h += beta * alpha.transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r_x = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let m = r_x.as_slice();
    // nalgebra is column-major
    let rows = [
        [m[0], m[3], m[6]],
        [m[1], m[4], m[7]],
        [m[2], m[5], m[8]],
    ];
    let q_x = Quat::from_rotation_matrix(&rows).expect("SVD yields a proper rotation");
    let r_x = rotation_matrix(q_x);

    let n = pairs.len();
    let mut c = DMatrix::zeros(3 * n, 3);
    let mut rhs = DVector::zeros(3 * n);
    for (k, p) in pairs.iter().enumerate() {
        let r_a = rotation_matrix(p.a.orientation);
        let lhs = r_a - Matrix3::identity();
        let r = r_x * to_na(p.b.position) - to_na(p.a.position);
        c.view_mut((3 * k, 0), (3, 3)).copy_from(&lhs);
        rhs.rows_mut(3 * k, 3).copy_from(&r);
    }
    let t = c
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .expect("SVD solve with both factors");
    let x = Pose::new(Vec3::new(t[0], t[1], t[2]), q_x);
    let (rotation_residual, translation_residual) = residuals(pairs, &x);
    Ok(HandEyeResult {
        x,
        rotation_residual,
        translation_residual,
        n_motions: n,
    })
}

/// RMS rotation (rad) and translation (m) mismatch of `A X` against `X B`.
pub fn residuals(pairs: &[MotionPair], x: &Pose) -> (f64, f64) {
    let r_x = rotation_matrix(x.orientation);
    let t_x = to_na(x.position);
    let (mut rot, mut trans) = (0.0, 0.0);
    for p in pairs {
        let ax = p.a.orientation * x.orientation;
        let xb = x.orientation * p.b.orientation;
        rot += ax.angle_to(xb).powi(2);
        let lhs = rotation_matrix(p.a.orientation) * t_x + to_na(p.a.position);
        let rhs = r_x * to_na(p.b.position) + t_x;
        trans += (lhs - rhs).norm_squared();
    }
    let n = pairs.len() as f64;
    ((rot / n).sqrt(), (trans / n).sqrt())
}

pub fn solve_eye_in_hand(pairs: &[MotionPair]) -> Result<HandEyeResult, CalibrationError> {
    solve_ax_xb(pairs)
}

pub fn solve_eye_to_base(
    obs: &[PoseObservation],
    pairing: Pairing,
) -> Result<HandEyeResult, CalibrationError> {
    solve_ax_xb(&build_eye_to_base_pairs(obs, pairing)?)
}

pub fn calibrate(
    obs: &[PoseObservation],
    mode: HandEyeMode,
    pairing: Pairing,
) -> Result<HandEyeResult, CalibrationError> {
    match mode {
        HandEyeMode::EyeInHand => solve_eye_in_hand(&build_motion_pairs(obs, pairing)?),
        HandEyeMode::EyeToBase => solve_eye_to_base(obs, pairing),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(g: Pose, m: Pose) -> PoseObservation {
        PoseObservation {
            t: 0.0,
            gripper_in_base: g,
            marker_in_camera: m,
        }
    }

    #[test]
    fn identical_observations_give_identity_pairs() {
        let p = Pose::new(Vec3::new(0.1, 0.2, 0.3), Quat::from_rotation_z(0.4));
        let o = obs(p, p.inverse());
        let pairs = build_motion_pairs(&[o, o, o], Pairing::Consecutive).unwrap();
        assert_eq!(pairs.len(), 2);
        for pair in pairs {
            let (da, ra) = pair.a.distance_to(&Pose::IDENTITY);
            let (db, rb) = pair.b.distance_to(&Pose::IDENTITY);
            assert!(da < 1e-15 && ra < 1e-7 && db < 1e-15 && rb < 1e-7);
        }
    }

    #[test]
    fn too_few_and_too_many() {
        let o = obs(Pose::IDENTITY, Pose::IDENTITY);
        assert_eq!(
            build_motion_pairs(&[o, o], Pairing::Consecutive),
            Err(CalibrationError::TooFewObservations { n: 2, min: 3 })
        );
        assert_eq!(
            build_motion_pairs(&[o; 21], Pairing::AllPairs),
            Err(CalibrationError::TooManyForAllPairs { n: 21 })
        );
        assert_eq!(build_motion_pairs(&[o; 5], Pairing::AllPairs).unwrap().len(), 10);
    }

    #[test]
    fn single_axis_motions_are_degenerate() {
        let marker = Pose::from_translation(Vec3::new(0.5, 0.0, 0.0));
        let o: Vec<_> = (0..5)
            .map(|k| {
                let g = Pose::new(Vec3::new(0.0, 0.0, 0.1 * k as f64), Quat::from_rotation_z(0.3 * k as f64));
                obs(g, g.inverse().compose(&marker))
            })
            .collect();
        assert_eq!(
            calibrate(&o, HandEyeMode::EyeInHand, Pairing::Consecutive),
            Err(CalibrationError::DegenerateMotions)
        );
    }
}
