//! Rig calibration, correspondence and pose types, and the rotation
//! parameterizations used by the solvers.
//!
//! Conventions: a pose `(R, t)` maps coordinates expressed in the rig frame at
//! time `k` into the rig frame at time `k+1`, `X' = R X + t`. A camera's
//! extrinsics `(R_i, t_i)` map camera coordinates into the rig frame,
//! `X_rig = R_i X_cam + t_i`. The Y axis of the rig frame is the vertical /
//! planar rotation axis.

use nalgebra::{Matrix2, Matrix3, Vector3};
use thiserror::Error;

/// Orthonormality / determinant tolerance for calibrated rotations.
pub const ROTATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("camera rig must contain at least one camera")]
    EmptyRig,
    #[error("camera {index}: rotation is not orthonormal with det +1 (deviation {deviation:e})")]
    NotARotation { index: usize, deviation: f64 },
    #[error("camera index {index} out of range for a rig with {cameras} cameras")]
    CameraIndex { index: usize, cameras: usize },
    #[error("affine correspondence contains non-finite values")]
    NonFinite,
    #[error("rotation angle {angle_deg:.3} deg is too close to 180 deg for the Cayley parameterization")]
    NearHalfTurn { angle_deg: f64 },
    #[error("observation has a zero-length direction")]
    ZeroDirection,
}

/// Skew-symmetric cross-product matrix, `[v]x w = v x w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Largest absolute deviation of `RᵀR` from identity, combined with `|det R − 1|`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Nearest rotation in the Frobenius sense (polar decomposition via SVD).
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rotation about the X axis by `angle` (right-handed).
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the Y axis by `angle` (right-handed).
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the Z axis by `angle` (right-handed).
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation angle of `r` in radians, in `[0, π]`.
///
/// Equals `arccos((tr r − 1)/2)` but takes the sine from the skew part, so
/// angles near zero keep full precision.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let sin2 = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin2.atan2(r.trace() - 1.0)
}

/// Cayley rotation for the homogeneous quaternion `[1, qx, qy, qz]`.
pub fn cayley_to_rotation(q: &Vector3<f64>) -> Matrix3<f64> {
    let (x, y, z) = (q.x, q.y, q.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let scale = 1.0 / (1.0 + xx + yy + zz);
    Matrix3::new(
        1.0 + xx - yy - zz,
        2.0 * x * y - 2.0 * z,
        2.0 * y + 2.0 * x * z,
        2.0 * x * y + 2.0 * z,
        1.0 - xx + yy - zz,
        2.0 * y * z - 2.0 * x,
        2.0 * x * z - 2.0 * y,
        2.0 * x + 2.0 * y * z,
        1.0 - xx - yy + zz,
    ) * scale
}

/// Inverse of [`cayley_to_rotation`].
///
/// Rejects rotations whose angle exceeds `max_angle` (radians); the Cayley
/// vector diverges as the angle approaches π.
pub fn rotation_to_cayley(r: &Matrix3<f64>, max_angle: f64) -> Result<Vector3<f64>, GeometryError> {
    let angle = rotation_angle(r);
    if angle > max_angle {
        return Err(GeometryError::NearHalfTurn {
            angle_deg: angle.to_degrees(),
        });
    }
    // R = (I + [q]x)(I - [q]x)^-1, hence (R - I)(R + I)^-1 = [q]x.
    let id = Matrix3::identity();
    let sum = r + id;
    let inv = sum.try_inverse().ok_or(GeometryError::NearHalfTurn {
        angle_deg: angle.to_degrees(),
    })?;
    let s = (r - id) * inv;
    Ok(Vector3::new(
        0.5 * (s[(2, 1)] - s[(1, 2)]),
        0.5 * (s[(0, 2)] - s[(2, 0)]),
        0.5 * (s[(1, 0)] - s[(0, 1)]),
    ))
}

/// Planar-motion rotation about the vertical axis, parameterized by
/// `q_y = tan(θ/2)`:
/// `(1/(1+q²))·[[1−q², 0, −2q], [0, 1+q², 0], [2q, 0, 1−q²]]`.
///
/// Note the sign of the off-diagonal terms: this equals
/// `cayley_to_rotation((0, −q_y, 0))`.
pub fn rotation_y_from_qy(q_y: f64) -> Matrix3<f64> {
    let qq = q_y * q_y;
    let s = 1.0 / (1.0 + qq);
    Matrix3::new(
        (1.0 - qq) * s,
        0.0,
        -2.0 * q_y * s,
        0.0,
        1.0,
        0.0,
        2.0 * q_y * s,
        0.0,
        (1.0 - qq) * s,
    )
}

/// Extracts `q_y` from a rotation produced by [`rotation_y_from_qy`].
pub fn qy_from_rotation_y(r: &Matrix3<f64>) -> f64 {
    // sin θ = r20, cos θ = r00, q = tan(θ/2) = sin/(1+cos)
    let theta = r[(2, 0)].atan2(r[(0, 0)]);
    (0.5 * theta).tan()
}

/// A calibrated camera of the rig: maps camera coordinates into the rig frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Optical center in the rig frame.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }
}

/// Extrinsics of every camera, expressed in the multi-camera reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self, GeometryError> {
        if cameras.is_empty() {
            return Err(GeometryError::EmptyRig);
        }
        for (index, cam) in cameras.iter().enumerate() {
            let deviation = rotation_deviation(&cam.rotation);
            if !(deviation <= ROTATION_TOL) {
                return Err(GeometryError::NotARotation { index, deviation });
            }
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn camera(&self, index: usize) -> Result<&Camera, GeometryError> {
        self.cameras.get(index).ok_or(GeometryError::CameraIndex {
            index,
            cameras: self.cameras.len(),
        })
    }

    /// Checks that both camera indices of `ac` exist in this rig.
    pub fn check(&self, ac: &AffineCorrespondence) -> Result<(), GeometryError> {
        self.camera(ac.camera_k)?;
        self.camera(ac.camera_k1)?;
        Ok(())
    }
}

/// A point correspondence between frames `k` and `k+1` augmented with the
/// local affine transformation relating the two image patches.
///
/// Image points are normalized (intrinsics removed). The observation at
/// frame `k` is seen by camera `camera_k`, the one at frame `k+1` by
/// `camera_k1`; these coincide for ordinary intra-camera matches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineCorrespondence {
    pub camera_k: usize,
    pub camera_k1: usize,
    pub x: Vector3<f64>,
    pub x_prime: Vector3<f64>,
    pub affine: Matrix2<f64>,
}

impl AffineCorrespondence {
    /// Builds a correspondence from inhomogeneous normalized coordinates.
    pub fn new(
        camera_k: usize,
        camera_k1: usize,
        x: [f64; 2],
        x_prime: [f64; 2],
        affine: Matrix2<f64>,
    ) -> Result<Self, GeometryError> {
        let finite = x.iter().chain(x_prime.iter()).all(|v| v.is_finite())
            && affine.iter().all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            camera_k,
            camera_k1,
            x: Vector3::new(x[0], x[1], 1.0),
            x_prime: Vector3::new(x_prime[0], x_prime[1], 1.0),
            affine,
        })
    }

    /// Intra-camera correspondence.
    pub fn in_camera(
        camera: usize,
        x: [f64; 2],
        x_prime: [f64; 2],
        affine: Matrix2<f64>,
    ) -> Result<Self, GeometryError> {
        Self::new(camera, camera, x, x_prime, affine)
    }

    /// `Â = [A 0; 0 0]`.
    pub fn affine_hat(&self) -> Matrix3<f64> {
        let a = &self.affine;
        Matrix3::new(
            a[(0, 0)],
            a[(0, 1)],
            0.0,
            a[(1, 0)],
            a[(1, 1)],
            0.0,
            0.0,
            0.0,
            0.0,
        )
    }
}

/// A ray as a Plücker line: unit direction and moment `c × u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlueckerLine {
    pub direction: Vector3<f64>,
    pub moment: Vector3<f64>,
}

impl PlueckerLine {
    pub fn from_point_direction(point: &Vector3<f64>, direction: &Vector3<f64>) -> Self {
        let u = direction.normalize();
        Self {
            direction: u,
            moment: point.cross(&u),
        }
    }

    /// Applies a rotation to both parts of the line.
    pub fn rotated(&self, r: &Matrix3<f64>) -> Self {
        Self {
            direction: r * self.direction,
            moment: r * self.moment,
        }
    }
}

/// Ray of a normalized observation `x` of camera `camera_index`, expressed
/// in the rig frame.
pub fn plucker_from_observation(
    rig: &CameraRig,
    camera_index: usize,
    x: &Vector3<f64>,
) -> Result<PlueckerLine, GeometryError> {
    let cam = rig.camera(camera_index)?;
    let p = cam.rotation * x;
    let norm = p.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(GeometryError::ZeroDirection);
    }
    let u = p / norm;
    Ok(PlueckerLine {
        direction: u,
        moment: cam.translation.cross(&u),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoseKind {
    General,
    Planar,
    VerticalAligned,
}

/// Relative rig motion `X' = R X + t` between frames `k` and `k+1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub kind: PoseKind,
}

impl PoseHypothesis {
    pub fn identity() -> Self {
        Self::general(Matrix3::identity(), Vector3::zeros())
    }

    pub fn general(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            kind: PoseKind::General,
        }
    }

    /// Planar pose from the Y-rotation parameter and the in-plane translation.
    pub fn planar(q_y: f64, t_x: f64, t_z: f64) -> Self {
        Self {
            rotation: rotation_y_from_qy(q_y),
            translation: Vector3::new(t_x, 0.0, t_z),
            kind: PoseKind::Planar,
        }
    }

    /// Planar pose from yaw `θ`, translation direction `φ` and distance `ρ`:
    /// `q_y = tan(θ/2)`, `t_x = ρ sin φ`, `t_z = −ρ cos φ`.
    pub fn planar_from_angles(theta: f64, phi: f64, rho: f64) -> Self {
        Self::planar((0.5 * theta).tan(), rho * phi.sin(), -rho * phi.cos())
    }

    /// Checks the orthonormality and (for planar poses) the structural
    /// invariants within `tol`.
    pub fn satisfies_invariants(&self, tol: f64) -> bool {
        if rotation_deviation(&self.rotation) > tol {
            return false;
        }
        if self.kind == PoseKind::Planar {
            let r = &self.rotation;
            let off = [r[(0, 1)], r[(1, 0)], r[(1, 2)], r[(2, 1)]];
            if self.translation.y != 0.0
                || off.iter().any(|v| v.abs() > tol)
                || (r[(1, 1)] - 1.0).abs() > tol
            {
                return false;
            }
        }
        true
    }

    /// Maps a point from frame `k` into frame `k+1`.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Roll and pitch of one rig frame, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuAttitude {
    pub roll: f64,
    pub pitch: f64,
}

impl ImuAttitude {
    pub fn new(roll: f64, pitch: f64) -> Self {
        Self { roll, pitch }
    }

    /// Attitude whose alignment rotation maps `gravity` (rig frame, any
    /// length) onto the +Y axis.
    ///
    /// The gravity direction of an attitude is
    /// `R_imuᵀ e_y = (−sin r cos p, cos r cos p, sin p)`.
    pub fn from_gravity(gravity: &Vector3<f64>) -> Self {
        let g = gravity.normalize();
        Self {
            roll: (-g.x).atan2(g.y),
            pitch: g.z.clamp(-1.0, 1.0).asin(),
        }
    }

    pub fn gravity(&self) -> Vector3<f64> {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        Vector3::new(-sr * cp, cr * cp, sp)
    }

    pub fn is_valid(&self) -> bool {
        let half = std::f64::consts::FRAC_PI_2;
        self.roll.is_finite() && self.pitch.is_finite() && self.roll.abs() < half && self.pitch.abs() < half
    }
}

/// Attitudes of the two frames `k` and `k+1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuAttitudePair {
    pub frame_k: ImuAttitude,
    pub frame_k1: ImuAttitude,
}

impl ImuAttitudePair {
    pub fn new(frame_k: ImuAttitude, frame_k1: ImuAttitude) -> Self {
        Self { frame_k, frame_k1 }
    }
}

/// `R_imu = R_p · R_r`, the rotation aligning a rig frame with gravity.
pub fn imu_alignment_rotation(att: &ImuAttitude) -> Matrix3<f64> {
    let (sp, cp) = att.pitch.sin_cos();
    let (sr, cr) = att.roll.sin_cos();
    let r_p = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, sp, 0.0, -sp, cp);
    let r_r = Matrix3::new(cr, sr, 0.0, -sr, cr, 0.0, 0.0, 0.0, 1.0);
    r_p * r_r
}
