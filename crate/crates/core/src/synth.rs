//! Synthetic two-camera scenes, error metrics and seeded experiment grids.
//!
//! Scenes follow a forward-facing stereo-like rig (baseline along X, the two
//! cameras optionally at different heights) looking at a ground plane and a
//! set of random planes. Affine parts are not computed analytically: each is
//! the differential of a homography estimated from four further noisy
//! projections of the same plane.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector2, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    imu_alignment_rotation, rot_x, rot_y, rot_z, rotation_angle, AffineCorrespondence, Camera, CameraRig,
    ImuAttitude, ImuAttitudePair, PoseHypothesis, PoseKind,
};
use crate::ransac::{preemptive_tol_for_noise, ransac_estimate, HypothesisStats, RansacConfig, SolverKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    InvalidScene(&'static str),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(&'static str),
    #[error("could not place a visible correspondence after {0} attempts")]
    SamplingFailed(usize),
    #[error("unknown grid '{0}'")]
    UnknownGrid(String),
    #[error("io: {0}")]
    Io(String),
}

/// Which camera of each frame observes a correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraPairing {
    /// Same camera in both frames.
    Intra,
    /// Different cameras in the two frames.
    Cross,
    /// Each camera drawn independently.
    #[default]
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Random planes besides the ground plane.
    pub plane_count: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    /// Y coordinate of the ground plane (Y points down).
    pub ground_y: f64,
    pub ac_count: usize,
    /// Correspondences taken from the ground plane.
    pub ground_ac_count: usize,
    pub image_size: (f64, f64),
    pub focal: f64,
    pub principal_point: (f64, f64),
    pub baseline: f64,
    /// Height difference between the two cameras, metres.
    pub height_offset: f64,
    pub translation_norm: f64,
    pub pairing: CameraPairing,
    /// Fraction of correspondences replaced by random matches.
    pub outlier_ratio: f64,
    /// Restrict homography support points to the scene box; otherwise they
    /// may lie anywhere on the visible part of the plane.
    pub support_in_box: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            plane_count: 50,
            x_range: (-5.0, 5.0),
            y_range: (-5.0, 5.0),
            z_range: (10.0, 20.0),
            ground_y: 1.65,
            ac_count: 100,
            ground_ac_count: 50,
            image_size: (640.0, 480.0),
            focal: 400.0,
            principal_point: (320.0, 240.0),
            baseline: 1.0,
            height_offset: 0.3,
            translation_norm: 3.0,
            pairing: CameraPairing::Mixed,
            outlier_ratio: 0.0,
            support_in_box: false,
        }
    }
}

impl SceneConfig {
    /// Both cameras at the same height.
    pub fn equal_heights(mut self) -> Self {
        self.height_offset = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok_range = |r: (f64, f64)| r.0 < r.1;
        if !(ok_range(self.x_range) && ok_range(self.y_range) && ok_range(self.z_range)) {
            return Err(SynthError::InvalidScene("empty scene range"));
        }
        if self.ac_count == 0 || self.ground_ac_count > self.ac_count {
            return Err(SynthError::InvalidScene("correspondence counts"));
        }
        if self.plane_count == 0 && self.ground_ac_count < self.ac_count {
            return Err(SynthError::InvalidScene("no random planes for non-ground correspondences"));
        }
        if !(self.focal > 0.0 && self.image_size.0 > 0.0 && self.image_size.1 > 0.0) {
            return Err(SynthError::InvalidScene("camera intrinsics"));
        }
        if !(0.0..=1.0).contains(&self.outlier_ratio) {
            return Err(SynthError::InvalidScene("outlier ratio outside [0, 1]"));
        }
        Ok(())
    }

    /// Two forward-facing cameras, baseline along X, the second one
    /// `height_offset` lower.
    pub fn rig(&self) -> CameraRig {
        let h = 0.5 * self.baseline;
        CameraRig::new(vec![
            Camera::new(Matrix3::identity(), Vector3::new(-h, 0.0, 0.0)),
            Camera::new(Matrix3::identity(), Vector3::new(h, self.height_offset, 0.0)),
        ])
        .expect("valid rig")
    }

    fn to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (px.x - self.principal_point.0) / self.focal,
            (px.y - self.principal_point.1) / self.focal,
        )
    }

    fn to_pixel(&self, x: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            x.x * self.focal + self.principal_point.0,
            x.y * self.focal + self.principal_point.1,
        )
    }

    fn in_image(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.image_size.0 && px.y < self.image_size.1
    }

    fn in_box(&self, p: &Vector3<f64>) -> bool {
        let within = |v: f64, r: (f64, f64)| v >= r.0 && v <= r.1;
        within(p.x, self.x_range) && within(p.y, self.y_range) && within(p.z, self.z_range)
    }
}

/// Standard deviations of the injected noise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    /// Pixels, applied to every projection.
    pub image_noise_std: f64,
    /// Degrees, applied to the X and Z rotation and to the elevation of the
    /// translation of planar motions.
    pub nonplanar_noise: f64,
    /// Degrees, added to the roll of both frames.
    pub imu_roll_noise: f64,
    /// Degrees, added to the pitch of both frames.
    pub imu_pitch_noise: f64,
}

impl NoiseConfig {
    pub fn image(std_px: f64) -> Self {
        Self {
            image_noise_std: std_px,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let all = [self.image_noise_std, self.nonplanar_noise, self.imu_roll_noise, self.imu_pitch_noise];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(SynthError::InvalidNoise("noise levels must be finite and non-negative"))
        }
    }
}

/// Translation direction of vertical-case motions. `Random` draws a uniform
/// heading and an elevation within the rotation bound, so the ground plane
/// stays below the rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TranslationDirection {
    Forward,
    Sideways,
    #[default]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionSpec {
    /// Yaw and translation heading uniform in `±max_angle_deg`.
    Planar { max_angle_deg: f64 },
    /// Rotation `R_x R_y R_z` with each angle uniform in `±max_angle_deg`;
    /// frame `k` itself tilted by roll and pitch uniform in `±tilt_deg`.
    Vertical {
        max_angle_deg: f64,
        direction: TranslationDirection,
        tilt_deg: f64,
    },
}

impl MotionSpec {
    pub fn planar() -> Self {
        MotionSpec::Planar { max_angle_deg: 10.0 }
    }

    pub fn vertical() -> Self {
        MotionSpec::Vertical {
            max_angle_deg: 10.0,
            direction: TranslationDirection::Random,
            tilt_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub rig: CameraRig,
    pub pose: PoseHypothesis,
    /// Measured attitudes (with IMU noise).
    pub attitudes: ImuAttitudePair,
    pub true_attitudes: ImuAttitudePair,
    pub acs: Vec<AffineCorrespondence>,
    /// `true` for correspondences generated from the scene, `false` for outliers.
    pub inlier: Vec<bool>,
}

/// Plane `n·X = d` in the rig frame `k`.
#[derive(Debug, Clone, Copy)]
struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

fn uniform(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    rng.random_range(r.0..r.1)
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..half_width)
    } else {
        0.0
    }
}

/// Always consumes one normal draw, so instances generated from the same
/// seed at different noise levels share their geometry.
fn gaussian(rng: &mut impl Rng, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    std * z
}

fn random_plane(rng: &mut impl Rng, scene: &SceneConfig) -> Plane {
    let p = Vector3::new(uniform(rng, scene.x_range), uniform(rng, scene.y_range), uniform(rng, scene.z_range));
    // normal within 60° of the viewing axis
    let normal = loop {
        let v = Vector3::<f64>::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n2 = v.norm_squared();
        if n2 > 1e-6 && n2 <= 1.0 {
            let v = v / n2.sqrt();
            if v.z.abs() >= 0.5 {
                break v * v.z.signum();
            }
        }
    };
    Plane {
        normal,
        offset: normal.dot(&p),
    }
}

struct PlanePoint {
    /// Pixel projections in frame k (camera_k) and frame k+1 (camera_k1).
    px: Vector2<f64>,
    px_prime: Vector2<f64>,
}

fn project(cam: &Camera, p: &Vector3<f64>) -> Option<Vector2<f64>> {
    let c = cam.rotation.transpose() * (p - cam.translation);
    (c.z > 0.5).then(|| Vector2::new(c.x / c.z, c.y / c.z))
}

/// Random pixel of `camera_k` back-projected onto the plane, kept if it is
/// visible from `camera_k1` after the motion and lies in the scene box
/// (`in_box`) or merely within twice the far depth otherwise.
#[allow(clippy::too_many_arguments)]
fn sample_plane_point(
    rng: &mut impl Rng,
    scene: &SceneConfig,
    rig: &CameraRig,
    pose: &PoseHypothesis,
    plane: &Plane,
    camera_k: usize,
    camera_k1: usize,
    in_box: bool,
) -> Option<PlanePoint> {
    let ci = &rig.cameras()[camera_k];
    let cj = &rig.cameras()[camera_k1];
    let px = Vector2::new(uniform(rng, (0.0, scene.image_size.0)), uniform(rng, (0.0, scene.image_size.1)));
    let x = scene.to_normalized(&px);
    let d = ci.rotation * Vector3::new(x.x, x.y, 1.0);
    let denom = plane.normal.dot(&d);
    if denom.abs() < 1e-9 {
        return None;
    }
    let s = (plane.offset - plane.normal.dot(&ci.translation)) / denom;
    if s <= 0.5 {
        return None;
    }
    let point = ci.translation + s * d;
    let far = 2.0 * scene.z_range.1;
    if (in_box && !scene.in_box(&point)) || s > far {
        return None;
    }
    let p_prime = pose.transform(&point);
    if (cj.rotation.transpose() * (p_prime - cj.translation)).z > far {
        return None;
    }
    let xj = project(cj, &p_prime)?;
    let px_prime = scene.to_pixel(&xj);
    scene.in_image(&px_prime).then_some(PlanePoint { px, px_prime })
}

type Mat89 = SMatrix<f64, 8, 9>;

/// Similarity moving the centroid to the origin with mean distance √2.
fn hartley_normalization(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Normalized DLT homography with `x' ~ H x` from four correspondences.
pub fn homography_dlt(src: &[Vector2<f64>; 4], dst: &[Vector2<f64>; 4]) -> Option<Matrix3<f64>> {
    let t = hartley_normalization(src);
    let tp = hartley_normalization(dst);
    let mut a = Mat89::zeros();
    for i in 0..4 {
        let p = t * Vector3::new(src[i].x, src[i].y, 1.0);
        let q = tp * Vector3::new(dst[i].x, dst[i].y, 1.0);
        let (x, y, w) = (p.x, p.y, p.z);
        let (u, v, z) = (q.x, q.y, q.z);
        let r0 = [0.0, 0.0, 0.0, -z * x, -z * y, -z * w, v * x, v * y, v * w];
        let r1 = [z * x, z * y, z * w, 0.0, 0.0, 0.0, -u * x, -u * y, -u * w];
        for k in 0..9 {
            a[(2 * i, k)] = r0[k];
            a[(2 * i + 1, k)] = r1[k];
        }
    }
    // pad to square so the SVD yields the full right singular basis
    let mut sq = SMatrix::<f64, 9, 9>::zeros();
    sq.fixed_view_mut::<8, 9>(0, 0).copy_from(&a);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t?;
    let (imin, _) = svd.singular_values.argmin();
    let h = v_t.row(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let hm = tp.try_inverse()? * hn * t;
    hm.iter().all(|v| v.is_finite()).then_some(hm)
}

/// First-order approximation of `x ↦ π(H x)` at `x`:
/// `(H₀₀..₁₁ − x'·H₂,₀..₁) / (H₂·x)`.
pub fn homography_differential(h: &Matrix3<f64>, x: &Vector2<f64>) -> Matrix2<f64> {
    let p = h * Vector3::new(x.x, x.y, 1.0);
    let w = p.z;
    let xp = Vector2::new(p.x / w, p.y / w);
    let top = h.fixed_view::<2, 2>(0, 0).into_owned();
    let bottom = h.fixed_view::<1, 2>(2, 0).into_owned();
    (top - xp * bottom) / w
}

fn triangle_area(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>) -> f64 {
    0.5 * ((b - a).perp(&(c - a))).abs()
}

/// Four support points whose every triple spans at least this area (px²).
const MIN_SUPPORT_AREA: f64 = 1000.0;
const MAX_ATTEMPTS: usize = 2_000;

fn pick_cameras(rng: &mut impl Rng, pairing: CameraPairing, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let j = match pairing {
        CameraPairing::Intra => i,
        CameraPairing::Cross if n > 1 => (i + rng.random_range(1..n)) % n,
        CameraPairing::Cross => i,
        CameraPairing::Mixed => rng.random_range(0..n),
    };
    (i, j)
}

fn noisy(rng: &mut impl Rng, px: &Vector2<f64>, std: f64) -> Vector2<f64> {
    Vector2::new(px.x + gaussian(rng, std), px.y + gaussian(rng, std))
}

fn sample_inlier_ac(
    rng: &mut impl Rng,
    scene: &SceneConfig,
    rig: &CameraRig,
    pose: &PoseHypothesis,
    plane: &Plane,
    noise_px: f64,
) -> Option<AffineCorrespondence> {
    let (i, j) = pick_cameras(rng, scene.pairing, rig.len());
    let centre = (0..50).find_map(|_| sample_plane_point(rng, scene, rig, pose, plane, i, j, true))?;
    let mut support = Vec::with_capacity(4);
    for _ in 0..400 {
        if support.len() == 4 {
            break;
        }
        if let Some(p) = sample_plane_point(rng, scene, rig, pose, plane, i, j, scene.support_in_box) {
            support.push(p);
        }
    }
    if support.len() < 4 {
        return None;
    }
    let src: Vec<Vector2<f64>> = support.iter().map(|p| p.px).collect();
    let dst: Vec<Vector2<f64>> = support.iter().map(|p| p.px_prime).collect();
    for pts in [&src, &dst] {
        let min_area = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
            .iter()
            .map(|&(a, b, c)| triangle_area(&pts[a], &pts[b], &pts[c]))
            .fold(f64::INFINITY, f64::min);
        if min_area < MIN_SUPPORT_AREA {
            return None;
        }
    }
    let norm = |p: Vector2<f64>| scene.to_normalized(&p);
    let src_n: [Vector2<f64>; 4] = std::array::from_fn(|k| norm(noisy(rng, &src[k], noise_px)));
    let dst_n: [Vector2<f64>; 4] = std::array::from_fn(|k| norm(noisy(rng, &dst[k], noise_px)));
    let h = homography_dlt(&src_n, &dst_n)?;
    let x = norm(noisy(rng, &centre.px, noise_px));
    let xp = norm(noisy(rng, &centre.px_prime, noise_px));
    let affine = homography_differential(&h, &x);
    AffineCorrespondence::new(i, j, [x.x, x.y], [xp.x, xp.y], affine).ok()
}

fn sample_outlier_ac(rng: &mut impl Rng, scene: &SceneConfig, n_cams: usize) -> AffineCorrespondence {
    let (i, j) = pick_cameras(rng, scene.pairing, n_cams);
    let mut rand_px = || {
        let px = Vector2::new(
            rng.random_range(0.0..scene.image_size.0),
            rng.random_range(0.0..scene.image_size.1),
        );
        scene.to_normalized(&px)
    };
    let x = rand_px();
    let xp = rand_px();
    let affine = Matrix2::from_fn(|r, c| {
        let base = if r == c { 1.0 } else { 0.0 };
        base + rng.random_range(-0.5..0.5)
    });
    AffineCorrespondence::new(i, j, [x.x, x.y], [xp.x, xp.y], affine).expect("finite")
}

fn sample_motion(rng: &mut impl Rng, motion: &MotionSpec, noise: &NoiseConfig, rho: f64) -> (PoseHypothesis, ImuAttitude) {
    match *motion {
        MotionSpec::Planar { max_angle_deg } => {
            let theta = symmetric(rng, max_angle_deg).to_radians();
            let phi = symmetric(rng, max_angle_deg).to_radians();
            let planar = PoseHypothesis::planar_from_angles(theta, phi, rho);
            if noise.nonplanar_noise > 0.0 {
                let std = noise.nonplanar_noise.to_radians();
                let ax = gaussian(rng, std);
                let az = gaussian(rng, std);
                let elev = gaussian(rng, std);
                let rotation = rot_x(ax) * planar.rotation * rot_z(az);
                let translation = rot_x(elev) * planar.translation;
                (PoseHypothesis::general(rotation, translation), ImuAttitude::default())
            } else {
                (planar, ImuAttitude::default())
            }
        }
        MotionSpec::Vertical {
            max_angle_deg,
            direction,
            tilt_deg,
        } => {
            let a = max_angle_deg.to_radians();
            let (ax, ay, az) = (symmetric(rng, a), symmetric(rng, a), symmetric(rng, a));
            let rotation = rot_x(ax) * rot_y(ay) * rot_z(az);
            let dir = match direction {
                TranslationDirection::Forward => Vector3::new(0.0, 0.0, -1.0),
                TranslationDirection::Sideways => Vector3::new(1.0, 0.0, 0.0),
                TranslationDirection::Random => {
                    let heading = rng.random_range(0.0..std::f64::consts::TAU);
                    let elevation = symmetric(rng, a);
                    Vector3::new(
                        elevation.cos() * heading.sin(),
                        elevation.sin(),
                        -elevation.cos() * heading.cos(),
                    )
                }
            };
            let tilt = tilt_deg.to_radians();
            let att_k = ImuAttitude::new(symmetric(rng, tilt), symmetric(rng, tilt));
            (
                PoseHypothesis {
                    rotation,
                    translation: dir * rho,
                    kind: PoseKind::General,
                },
                att_k,
            )
        }
    }
}

/// A seeded random instance: rig, ground-truth motion, attitudes and
/// correspondences with inlier labels.
pub fn generate_instance(
    scene: &SceneConfig,
    motion: &MotionSpec,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Instance, SynthError> {
    generate_instance_with_rng(scene, motion, noise, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_instance_with_rng(
    scene: &SceneConfig,
    motion: &MotionSpec,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Instance, SynthError> {
    scene.validate()?;
    noise.validate()?;
    let rig = scene.rig();
    let (pose, att_k) = sample_motion(rng, motion, noise, scene.translation_norm);

    let true_attitudes = match motion {
        MotionSpec::Planar { .. } => ImuAttitudePair::default(),
        MotionSpec::Vertical { .. } => {
            // gravity of frame k carried into frame k+1
            let g_k1 = pose.rotation * att_k.gravity();
            ImuAttitudePair::new(att_k, ImuAttitude::from_gravity(&g_k1))
        }
    };
    let perturb = |rng: &mut ChaCha8Rng, a: &ImuAttitude| {
        ImuAttitude::new(
            a.roll + gaussian(rng, noise.imu_roll_noise.to_radians()),
            a.pitch + gaussian(rng, noise.imu_pitch_noise.to_radians()),
        )
    };
    let attitudes = ImuAttitudePair::new(
        perturb(rng, &true_attitudes.frame_k),
        perturb(rng, &true_attitudes.frame_k1),
    );

    // the ground plane, expressed in the gravity-aligned frame k
    let up = imu_alignment_rotation(&true_attitudes.frame_k).transpose() * Vector3::y();
    let ground = Plane {
        normal: up,
        offset: scene.ground_y,
    };
    let planes: Vec<Plane> = (0..scene.plane_count).map(|_| random_plane(rng, scene)).collect();

    let n_out = (scene.outlier_ratio * scene.ac_count as f64).round() as usize;
    let mut acs = Vec::with_capacity(scene.ac_count);
    let mut inlier = Vec::with_capacity(scene.ac_count);
    for k in 0..scene.ac_count {
        let mut attempts = 0;
        let ac = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(SynthError::SamplingFailed(MAX_ATTEMPTS));
            }
            let plane = if k < scene.ground_ac_count {
                ground
            } else {
                planes[rng.random_range(0..planes.len())]
            };
            if let Some(ac) = sample_inlier_ac(rng, scene, &rig, &pose, &plane, noise.image_noise_std) {
                break ac;
            }
        };
        acs.push(ac);
        inlier.push(true);
    }
    // replace a random subset by outliers
    let out_idx = rand::seq::index::sample(rng, scene.ac_count, n_out.min(scene.ac_count));
    for i in out_idx.iter() {
        acs[i] = sample_outlier_ac(rng, scene, rig.len());
        inlier[i] = false;
    }

    Ok(Instance {
        rig,
        pose,
        attitudes,
        true_attitudes,
        acs,
        inlier,
    })
}

/// `arccos((tr(R_gt Rᵀ) − 1)/2)` in degrees.
pub fn rotation_error(r_gt: &Matrix3<f64>, r: &Matrix3<f64>) -> f64 {
    rotation_angle(&(r_gt * r.transpose())).to_degrees()
}

/// `2‖t_gt − t‖ / (‖t_gt‖ + ‖t‖)`, 0 when both vanish.
pub fn translation_error(t_gt: &Vector3<f64>, t: &Vector3<f64>) -> f64 {
    let denom = t_gt.norm() + t.norm();
    if denom == 0.0 {
        0.0
    } else {
        2.0 * (t_gt - t).norm() / denom
    }
}

/// Angle between the two translations in degrees; `None` if either vanishes.
pub fn translation_direction_error(t_gt: &Vector3<f64>, t: &Vector3<f64>) -> Option<f64> {
    if t_gt.norm() == 0.0 || t.norm() == 0.0 {
        return None;
    }
    Some(t_gt.cross(t).norm().atan2(t_gt.dot(t)).to_degrees())
}

/// Median of the finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Image,
    NonPlanar,
    ImuRoll,
    ImuPitch,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Image => "image",
            NoiseKind::NonPlanar => "nonplanar",
            NoiseKind::ImuRoll => "imu-roll",
            NoiseKind::ImuPitch => "imu-pitch",
        }
    }

    /// `base` with this kind of noise set to `level`.
    pub fn apply(self, base: &NoiseConfig, level: f64) -> NoiseConfig {
        let mut n = *base;
        match self {
            NoiseKind::Image => n.image_noise_std = level,
            NoiseKind::NonPlanar => n.nonplanar_noise = level,
            NoiseKind::ImuRoll => n.imu_roll_noise = level,
            NoiseKind::ImuPitch => n.imu_pitch_noise = level,
        }
        n
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Noise sweep over a set of solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub name: String,
    pub solvers: Vec<SolverKind>,
    pub noise_kind: NoiseKind,
    pub levels: Vec<f64>,
    pub trials: usize,
    pub scene: SceneConfig,
    pub motion: MotionSpec,
    /// Noise not being swept.
    pub base_noise: NoiseConfig,
    /// Template; the solver and seed are set per trial.
    pub ransac: RansacConfig,
    /// Derive the preemptive tolerance from each cell's image noise.
    pub preemptive_tol_from_noise: bool,
    pub master_seed: u64,
}

pub const GRID_NAMES: [&str; 5] = [
    "imagenoise-planar",
    "nonplanar-planar",
    "imagenoise-vertical",
    "imu-pitch-vertical",
    "imu-roll-vertical",
];

pub const DEFAULT_TRIALS: usize = 200;

fn steps(max: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| max * i as f64 / count as f64).collect()
}

impl GridSpec {
    pub fn named(name: &str) -> Result<Self, SynthError> {
        let planar = vec![SolverKind::Planar1Ac, SolverKind::Planar2Ac];
        let (solvers, noise_kind, levels, motion, base_noise) = match name {
            "imagenoise-planar" => (planar, NoiseKind::Image, steps(2.0, 8), MotionSpec::planar(), NoiseConfig::default()),
            "nonplanar-planar" => (planar, NoiseKind::NonPlanar, steps(1.0, 10), MotionSpec::planar(), NoiseConfig::image(1.0)),
            "imagenoise-vertical" => (
                vec![SolverKind::Vertical2Ac],
                NoiseKind::Image,
                steps(2.0, 8),
                MotionSpec::vertical(),
                NoiseConfig::default(),
            ),
            "imu-pitch-vertical" => (
                vec![SolverKind::Vertical2Ac],
                NoiseKind::ImuPitch,
                steps(1.0, 10),
                MotionSpec::vertical(),
                NoiseConfig::image(1.0),
            ),
            "imu-roll-vertical" => (
                vec![SolverKind::Vertical2Ac],
                NoiseKind::ImuRoll,
                steps(1.0, 10),
                MotionSpec::vertical(),
                NoiseConfig::image(1.0),
            ),
            other => return Err(SynthError::UnknownGrid(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            solvers,
            noise_kind,
            levels,
            trials: DEFAULT_TRIALS,
            scene: SceneConfig::default(),
            motion,
            base_noise,
            ransac: RansacConfig::default(),
            preemptive_tol_from_noise: true,
            master_seed: 0,
        })
    }
}

/// Outcome of one generate-and-estimate trial. Errors are NaN on failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialResult {
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub dir_err_deg: f64,
    pub iterations: usize,
    pub stats: HypothesisStats,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub solver: SolverKind,
    pub noise_kind: NoiseKind,
    pub noise_level: f64,
    pub trials: usize,
    pub median_rot_err_deg: f64,
    pub median_trans_err: f64,
    pub median_dir_err_deg: f64,
    pub fail_rate: f64,
    pub mean_ransac_iters: f64,
}

/// Seed of one trial from (master seed, cell index, trial index).
pub fn trial_rng(master: u64, cell: u64, trial: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&cell.to_le_bytes());
    seed[16..24].copy_from_slice(&trial.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Generates one instance and estimates its pose.
pub fn run_trial(
    scene: &SceneConfig,
    motion: &MotionSpec,
    noise: &NoiseConfig,
    ransac: &RansacConfig,
    rng: &mut ChaCha8Rng,
) -> TrialResult {
    let failed = TrialResult {
        rot_err_deg: f64::NAN,
        trans_err: f64::NAN,
        dir_err_deg: f64::NAN,
        iterations: 0,
        stats: HypothesisStats::default(),
        failed: true,
    };
    let Ok(inst) = generate_instance_with_rng(scene, motion, noise, rng) else {
        return failed;
    };
    let mut cfg = ransac.clone();
    cfg.seed = rng.next_u64();
    let att = cfg.solver.needs_attitudes().then_some(&inst.attitudes);
    match ransac_estimate(&inst.rig, &inst.acs, &cfg, att) {
        Ok(res) => TrialResult {
            rot_err_deg: rotation_error(&inst.pose.rotation, &res.pose.rotation),
            trans_err: translation_error(&inst.pose.translation, &res.pose.translation),
            dir_err_deg: translation_direction_error(&inst.pose.translation, &res.pose.translation).unwrap_or(f64::NAN),
            iterations: res.iterations,
            stats: res.stats,
            failed: false,
        },
        Err(_) => TrialResult {
            stats: HypothesisStats::default(),
            ..failed
        },
    }
}

/// Runs every trial of one cell in parallel; results are in trial order.
pub fn run_cell_trials(spec: &GridSpec, solver: SolverKind, level: f64, cell: u64) -> Vec<TrialResult> {
    let noise = spec.noise_kind.apply(&spec.base_noise, level);
    let mut ransac = spec.ransac.clone();
    ransac.solver = solver;
    if spec.preemptive_tol_from_noise {
        ransac.preemptive_residual_tol = preemptive_tol_for_noise(noise.image_noise_std);
    }
    (0..spec.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(spec.master_seed, cell, trial);
            run_trial(&spec.scene, &spec.motion, &noise, &ransac, &mut rng)
        })
        .collect()
}

pub fn summarize(solver: SolverKind, kind: NoiseKind, level: f64, trials: &[TrialResult]) -> CellResult {
    let ok: Vec<&TrialResult> = trials.iter().filter(|t| !t.failed).collect();
    let col = |f: fn(&TrialResult) -> f64| median(&ok.iter().map(|t| f(t)).collect::<Vec<_>>());
    CellResult {
        solver,
        noise_kind: kind,
        noise_level: level,
        trials: trials.len(),
        median_rot_err_deg: col(|t| t.rot_err_deg),
        median_trans_err: col(|t| t.trans_err),
        median_dir_err_deg: col(|t| t.dir_err_deg),
        fail_rate: if trials.is_empty() {
            0.0
        } else {
            (trials.len() - ok.len()) as f64 / trials.len() as f64
        },
        mean_ransac_iters: if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|t| t.iterations as f64).sum::<f64>() / ok.len() as f64
        },
    }
}

/// Median errors for every (solver, noise level) cell, solvers outermost.
pub fn run_experiment_grid(spec: &GridSpec) -> Vec<CellResult> {
    let mut out = Vec::new();
    let mut cell = 0u64;
    for &solver in &spec.solvers {
        for &level in &spec.levels {
            let trials = run_cell_trials(spec, solver, level, cell);
            out.push(summarize(solver, spec.noise_kind, level, &trials));
            cell += 1;
        }
    }
    out
}

pub const CSV_HEADER: &str =
    "solver,noise_kind,noise_level,trials,median_rot_err_deg,median_trans_err,median_dir_err_deg,fail_rate,mean_ransac_iters";

pub fn write_grid_csv<W: Write>(out: &mut W, cells: &[CellResult]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{:.9e},{:.9e},{:.9e},{},{}",
            c.solver, c.noise_kind, c.noise_level, c.trials, c.median_rot_err_deg, c.median_trans_err,
            c.median_dir_err_deg, c.fail_rate, c.mean_ransac_iters
        )?;
    }
    Ok(())
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [NoiseKind::Image, NoiseKind::NonPlanar, NoiseKind::ImuRoll, NoiseKind::ImuPitch]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown noise kind '{s}'"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::stacked_6dof_residuals;

    #[test]
    fn metric_examples() {
        let r = rot_x(0.3) * rot_z(-0.2);
        assert_eq!(rotation_error(&r, &r), 0.0);
        let r5 = r * rot_y(5f64.to_radians());
        assert!((rotation_error(&r, &r5) - 5.0).abs() < 1e-9);
        assert!((rotation_error(&r5, &r) - rotation_error(&r, &r5)).abs() < 1e-12);

        let t = Vector3::new(1.0, -2.0, 0.5);
        assert_eq!(translation_error(&t, &t), 0.0);
        assert!((translation_error(&t, &(-t)) - 2.0).abs() < 1e-15);
        assert!((translation_error(&t, &(2.0 * t)) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(translation_error(&Vector3::zeros(), &Vector3::zeros()), 0.0);
        for lambda in [0.5, 1.0, 2.0] {
            let expect = 2.0 * (1.0f64 - lambda).abs() / (1.0 + lambda);
            assert!((translation_error(&t, &(lambda * t)) - expect).abs() < 1e-15);
        }

        assert!(translation_direction_error(&t, &(3.0 * t)).unwrap().abs() < 1e-6);
        let o = Vector3::new(2.0, 1.0, 0.0);
        assert!((translation_direction_error(&t, &o).unwrap() - 90.0).abs() < 1e-12);
        assert!((translation_direction_error(&t, &(-t)).unwrap() - 180.0).abs() < 1e-12);
        assert_eq!(translation_direction_error(&t, &Vector3::zeros()), None);
    }

    #[test]
    fn median_ignores_nan() {
        assert_eq!(median(&[3.0, f64::NAN, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[f64::NAN]).is_nan());
    }

    #[test]
    fn dlt_recovers_exact_homography() {
        let h = Matrix3::new(1.1, 0.05, 0.02, -0.03, 0.95, -0.01, 0.04, -0.02, 1.0);
        let src = [
            Vector2::new(-0.3, -0.2),
            Vector2::new(0.4, -0.25),
            Vector2::new(0.35, 0.3),
            Vector2::new(-0.2, 0.25),
        ];
        let dst = src.map(|p| {
            let q = h * Vector3::new(p.x, p.y, 1.0);
            Vector2::new(q.x / q.z, q.y / q.z)
        });
        let est = homography_dlt(&src, &dst).unwrap();
        let est = est / est[(2, 2)];
        assert!((est - h).abs().max() < 1e-10);
    }

    #[test]
    fn zero_noise_instance_satisfies_constraints() {
        for (seed, motion) in [(1, MotionSpec::planar()), (2, MotionSpec::vertical())] {
            let inst = generate_instance(&SceneConfig::default(), &motion, &NoiseConfig::default(), seed).unwrap();
            assert_eq!(inst.acs.len(), 100);
            assert!(inst.inlier.iter().all(|&b| b));
            let res = stacked_6dof_residuals(&inst.rig, &inst.acs, &inst.pose).unwrap();
            let worst = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            assert!(worst < 1e-8, "{worst}");
        }
    }

    #[test]
    fn seeded_instances_are_identical() {
        let scene = SceneConfig {
            outlier_ratio: 0.3,
            ..Default::default()
        };
        let a = generate_instance(&scene, &MotionSpec::planar(), &NoiseConfig::image(1.0), 9).unwrap();
        let b = generate_instance(&scene, &MotionSpec::planar(), &NoiseConfig::image(1.0), 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.inlier.iter().filter(|&&b| !b).count(), 30);
    }

    #[test]
    fn attitudes_follow_motion() {
        let motion = MotionSpec::Vertical {
            max_angle_deg: 10.0,
            direction: TranslationDirection::Forward,
            tilt_deg: 5.0,
        };
        let inst = generate_instance(&SceneConfig::default(), &motion, &NoiseConfig::default(), 4).unwrap();
        let g_k = inst.true_attitudes.frame_k.gravity();
        let g_k1 = inst.true_attitudes.frame_k1.gravity();
        assert!((inst.pose.rotation * g_k - g_k1).norm() < 1e-12);
        assert_eq!(inst.attitudes, inst.true_attitudes);
    }

    #[test]
    fn grid_names_resolve() {
        for name in GRID_NAMES {
            let g = GridSpec::named(name).unwrap();
            assert_eq!(g.trials, DEFAULT_TRIALS);
            assert!(!g.levels.is_empty());
        }
        assert!(GridSpec::named("nope").is_err());
    }
}
