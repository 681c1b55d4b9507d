//! Scene oracle shared by the integration tests.
//!
//! Correspondences are built from the plane-induced homography of the camera
//! pair, `H = R_C + t_C n_cᵀ / d_c`, and its analytic Jacobian, without going
//! through the crate's generator or constraint code.

#![allow(dead_code)]

use mcpose::geometry::{rot_x, rot_y, rot_z};
use mcpose::{AffineCorrespondence, Camera, CameraRig, ImuAttitude, ImuAttitudePair, PoseHypothesis};
use nalgebra::{Matrix2, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    rng.random_range(-a..a)
}

/// Rig of `n` cameras fanned out in yaw, each with a small random tilt.
/// With `equal_heights` every optical centre lies at `y = 0`.
pub fn random_rig(rng: &mut ChaCha8Rng, n: usize, equal_heights: bool) -> CameraRig {
    let cams = (0..n)
        .map(|i| {
            let yaw = 0.3 * i as f64 - 0.15 * (n - 1) as f64 + uniform(rng, 0.1);
            let r = rot_y(yaw) * rot_x(uniform(rng, 0.05)) * rot_z(uniform(rng, 0.05));
            let height = if equal_heights { 0.0 } else { 0.4 * i as f64 + uniform(rng, 0.1) };
            let t = Vector3::new(uniform(rng, 1.0), height, uniform(rng, 1.0));
            Camera::new(r, t)
        })
        .collect();
    CameraRig::new(cams).unwrap()
}

/// Planar motion with yaw and heading in ±20°, distance in [0.5, 3].
pub fn random_planar_pose(rng: &mut ChaCha8Rng) -> PoseHypothesis {
    let theta = uniform(rng, 20f64.to_radians());
    let phi = uniform(rng, 20f64.to_radians());
    let rho = rng.random_range(0.5..3.0);
    PoseHypothesis::planar((theta / 2.0).tan(), rho * phi.sin(), -rho * phi.cos())
}

/// General motion with each Euler angle in ±15° and a translation of norm
/// in [0.5, 3].
pub fn random_general_pose(rng: &mut ChaCha8Rng) -> PoseHypothesis {
    let a = 15f64.to_radians();
    let r = rot_x(uniform(rng, a)) * rot_y(uniform(rng, a)) * rot_z(uniform(rng, a));
    let dir = Vector3::new(uniform(rng, 1.0), uniform(rng, 0.3), uniform(rng, 1.0)).normalize();
    PoseHypothesis::general(r, dir * rng.random_range(0.5..3.0))
}

/// Roll and pitch of frame `k` in ±15°, and those of frame `k+1` implied by
/// the motion.
pub fn attitudes_for(rng: &mut ChaCha8Rng, pose: &PoseHypothesis) -> ImuAttitudePair {
    let a = 15f64.to_radians();
    let att_k = ImuAttitude::new(uniform(rng, a), uniform(rng, a));
    let g_k1 = pose.rotation * att_k.gravity();
    ImuAttitudePair::new(att_k, ImuAttitude::from_gravity(&g_k1))
}

/// Correspondence of the scene point `point` (rig frame `k`) lying on the
/// plane with normal `normal`, observed by `camera_k` at frame `k` and
/// `camera_k1` at frame `k+1`. `None` if the point is behind a camera or the
/// plane passes through the first camera.
pub fn oracle_ac(
    rig: &CameraRig,
    pose: &PoseHypothesis,
    camera_k: usize,
    camera_k1: usize,
    point: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> Option<AffineCorrespondence> {
    let ci = rig.cameras()[camera_k];
    let cj = rig.cameras()[camera_k1];
    let xc = ci.rotation.transpose() * (point - ci.translation);
    let n_c = ci.rotation.transpose() * normal;
    let d_c = n_c.dot(&xc);
    if xc.z < 0.5 || d_c.abs() < 0.5 {
        return None;
    }
    let r_c = cj.rotation.transpose() * pose.rotation * ci.rotation;
    let t_c = cj.rotation.transpose() * (pose.rotation * ci.translation + pose.translation - cj.translation);
    let h = r_c + t_c * n_c.transpose() / d_c;
    let x = xc / xc.z;
    let hx = h * x;
    if hx.z < 0.1 {
        return None;
    }
    let xp = hx / hx.z;
    let a = (h.fixed_view::<2, 2>(0, 0) - xp.xy() * h.fixed_view::<1, 2>(2, 0)) / hx.z;
    let direct = cj.rotation.transpose() * (pose.transform(point) - cj.translation);
    assert!((direct / direct.z - xp).norm() < 1e-9);
    if x.xy().amax() > 1.5 || xp.xy().amax() > 1.5 {
        return None;
    }
    AffineCorrespondence::new(camera_k, camera_k1, [x.x, x.y], [xp.x, xp.y], Matrix2::from(a)).ok()
}

/// A correspondence between the given cameras at a random point in front of
/// `camera_k`, on a random plane.
pub fn random_ac(
    rng: &mut ChaCha8Rng,
    rig: &CameraRig,
    pose: &PoseHypothesis,
    camera_k: usize,
    camera_k1: usize,
) -> AffineCorrespondence {
    let ci = rig.cameras()[camera_k];
    for _ in 0..10_000 {
        let xc = Vector3::new(uniform(rng, 0.6), uniform(rng, 0.6), 1.0) * rng.random_range(4.0..20.0);
        let point = ci.rotation * xc + ci.translation;
        let normal = Vector3::new(uniform(rng, 1.0), uniform(rng, 1.0), uniform(rng, 1.0) - 1.5).normalize();
        if let Some(ac) = oracle_ac(rig, pose, camera_k, camera_k1, &point, &normal) {
            return ac;
        }
    }
    panic!("no visible correspondence between cameras {camera_k} and {camera_k1}");
}

/// Two correspondences on distinct camera pairs of a rig of at least two
/// cameras.
pub fn random_ac_pair(
    rng: &mut ChaCha8Rng,
    rig: &CameraRig,
    pose: &PoseHypothesis,
) -> [AffineCorrespondence; 2] {
    let n = rig.len();
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n);
    if b == a {
        b = (a + 1) % n;
    }
    let cross = rng.random_bool(0.3);
    let first = random_ac(rng, rig, pose, a, if cross { b } else { a });
    let second = random_ac(rng, rig, pose, b, b);
    [first, second]
}

/// Angle of `a bᵀ` from the chord `‖a − b‖_F = 2√2 sin(θ/2)`, accurate for
/// small angles.
pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let chord = (a - b).norm() / (2.0 * 2f64.sqrt());
    (2.0 * chord.min(1.0).asin()).to_degrees()
}

/// Hypothesis closest to `truth`, with its rotation error (degrees) and
/// translation error (absolute).
pub fn closest(hyps: &[PoseHypothesis], truth: &PoseHypothesis) -> Option<(usize, f64, f64)> {
    hyps.iter()
        .enumerate()
        .map(|(i, h)| {
            (
                i,
                rotation_error_deg(&truth.rotation, &h.rotation),
                (truth.translation - h.translation).norm(),
            )
        })
        .min_by(|a, b| (a.1 + a.2).total_cmp(&(b.1 + b.2)))
}
