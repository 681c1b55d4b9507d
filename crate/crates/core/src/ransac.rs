//! RANSAC over affine correspondences with angular inlier scoring and
//! preemptive rejection of hypotheses through the constraints a minimal
//! solver left unused.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constraints::ConstraintRow;
use crate::geometry::{AffineCorrespondence, CameraRig, ImuAttitudePair, PoseHypothesis};
use crate::solvers::{
    solve_planar_1ac_with, solve_planar_2ac_with, solve_vertical_2ac_with, SolverError, SolverOptions, SolverOutput,
};

/// Relative preemptive tolerance per pixel of expected image noise.
pub const PREEMPTIVE_TOL_PER_PIXEL: f64 = 0.3;
/// Preemptive tolerance for noise-free data.
pub const NOISE_FREE_PREEMPTIVE_TOL: f64 = 1e-6;
/// Default preemptive tolerance, for one pixel of image noise.
pub const DEFAULT_PREEMPTIVE_TOL: f64 = PREEMPTIVE_TOL_PER_PIXEL;

/// Preemptive tolerance for an expected image noise of `sigma_px` pixels.
/// At one pixel about 95% of samples consistent with the true motion pass.
pub fn preemptive_tol_for_noise(sigma_px: f64) -> f64 {
    (PREEMPTIVE_TOL_PER_PIXEL * sigma_px).max(NOISE_FREE_PREEMPTIVE_TOL)
}
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Planar1Ac,
    Planar2Ac,
    Vertical2Ac,
}

impl SolverKind {
    pub const ALL: [SolverKind; 3] = [SolverKind::Planar1Ac, SolverKind::Planar2Ac, SolverKind::Vertical2Ac];

    pub fn sample_size(self) -> usize {
        match self {
            SolverKind::Planar1Ac => 1,
            SolverKind::Planar2Ac | SolverKind::Vertical2Ac => 2,
        }
    }

    pub fn needs_attitudes(self) -> bool {
        self == SolverKind::Vertical2Ac
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Planar1Ac => "planar-1ac",
            SolverKind::Planar2Ac => "planar-2ac",
            SolverKind::Vertical2Ac => "vertical-2ac",
        }
    }

    /// Runs the minimal solver on `sample` (of length [`Self::sample_size`]).
    pub fn solve(
        self,
        rig: &CameraRig,
        sample: &[AffineCorrespondence],
        attitudes: Option<&ImuAttitudePair>,
        opts: &SolverOptions,
    ) -> Result<SolverOutput, SolverError> {
        match self {
            SolverKind::Planar1Ac => solve_planar_1ac_with(rig, &sample[0], opts),
            SolverKind::Planar2Ac => solve_planar_2ac_with(rig, &sample[0], &sample[1], opts),
            SolverKind::Vertical2Ac => {
                let att = attitudes.copied().unwrap_or_default();
                solve_vertical_2ac_with(rig, &sample[0], &sample[1], &att, opts)
            }
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown solver '{s}' (expected planar-1ac, planar-2ac or vertical-2ac)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub confidence: f64,
    /// Radians.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub solver: SolverKind,
    pub preemptive: bool,
    pub preemptive_residual_tol: f64,
    pub seed: u64,
    pub solver_options: SolverOptions,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            confidence: 0.99,
            inlier_threshold: 0.1f64.to_radians(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            solver: SolverKind::Planar2Ac,
            preemptive: true,
            preemptive_residual_tol: DEFAULT_PREEMPTIVE_TOL,
            seed: 0,
            solver_options: SolverOptions::default(),
        }
    }
}

impl RansacConfig {
    pub fn new(solver: SolverKind) -> Self {
        Self {
            solver,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RansacError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RansacError::InvalidConfig("confidence must lie in (0, 1)"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(RansacError::InvalidConfig("inlier threshold must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(RansacError::InvalidConfig("max_iterations must be positive"));
        }
        if !(self.preemptive_residual_tol >= 0.0) {
            return Err(RansacError::InvalidConfig("preemptive tolerance must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HypothesisStats {
    pub generated: usize,
    pub preemptively_rejected: usize,
    /// Hypotheses whose inliers were counted over all correspondences.
    pub scored: usize,
    /// Hypotheses with unobservable translation scale, never scored.
    pub degenerate: usize,
    /// Samples for which the solver returned an error without hypotheses.
    pub solver_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub pose: PoseHypothesis,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Sum of the angular errors of the inliers, radians.
    pub inlier_error_sum: f64,
    pub iterations: usize,
    pub stats: HypothesisStats,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RansacError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("the vertical solver needs roll/pitch attitudes")]
    MissingAttitudes,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("correspondence {index}: {message}")]
    InvalidCorrespondence { index: usize, message: String },
    #[error("no hypothesis survived after {iterations} iterations")]
    NoModelFound { iterations: usize },
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Maximum angle between each measured ray and the ray from its camera
/// centre to the midpoint triangulation of both rays under `pose`.
///
/// Returns π when the triangulated point lies behind either camera.
pub fn angular_inlier_error(rig: &CameraRig, ac: &AffineCorrespondence, pose: &PoseHypothesis) -> f64 {
    let (Ok(ci), Ok(cj)) = (rig.camera(ac.camera_k), rig.camera(ac.camera_k1)) else {
        return std::f64::consts::PI;
    };
    let rt = pose.rotation.transpose();
    let c1 = ci.translation;
    let d1 = (ci.rotation * ac.x).normalize();
    let c2 = rt * (cj.translation - pose.translation);
    let d2 = (rt * (cj.rotation * ac.x_prime)).normalize();
    if !(d1.iter().chain(d2.iter()).all(|v| v.is_finite())) {
        return std::f64::consts::PI;
    }

    let w = c1 - c2;
    let b = d1.dot(&d2);
    let d = d1.dot(&w);
    let e = d2.dot(&w);
    let denom = 1.0 - b * b;
    if denom < 1e-12 {
        return angle_between(&d1, &d2);
    }
    let s1 = (b * e - d) / denom;
    let s2 = (e - b * d) / denom;
    let p = 0.5 * ((c1 + s1 * d1) + (c2 + s2 * d2));
    let v1 = p - c1;
    let v2 = p - c2;
    if !(v1.dot(&d1) > 0.0 && v2.dot(&d2) > 0.0) {
        return std::f64::consts::PI;
    }
    angle_between(&d1, &v1).max(angle_between(&d2, &v2))
}

/// `true` iff every held-out row is satisfied at `(q_y, t̃)` up to
/// `|row·(t̃,1)| ≤ tol·‖row(q_y)‖·‖(t̃,1)‖`.
pub fn preemptive_check(unused_rows: &[ConstraintRow], q_y: f64, aligned_translation: &Vector3<f64>, tol: f64) -> bool {
    let t = aligned_translation;
    let v_norm = (t.norm_squared() + 1.0).sqrt();
    unused_rows.iter().all(|row| {
        let c = row.coefficients_at(q_y);
        let value = c[0] * t.x + c[1] * t.y + c[2] * t.z + c[3];
        let c_norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        value.abs() <= tol * c_norm * v_norm
    })
}

/// Iterations needed to draw one all-inlier sample with probability
/// `confidence` at inlier ratio `ratio`.
pub fn required_iterations(confidence: f64, ratio: f64, sample_size: usize, cap: usize) -> usize {
    let p = ratio.clamp(0.0, 1.0).powi(sample_size as i32);
    if p >= 1.0 {
        return 1;
    }
    if p <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p).ln();
    if !n.is_finite() || n >= cap as f64 {
        cap
    } else {
        (n.ceil() as usize).max(1)
    }
}

/// Angular errors of all correspondences under `pose`.
pub fn score_pose(rig: &CameraRig, acs: &[AffineCorrespondence], pose: &PoseHypothesis) -> Vec<f64> {
    acs.iter().map(|ac| angular_inlier_error(rig, ac, pose)).collect()
}

struct Best {
    pose: PoseHypothesis,
    count: usize,
    error_sum: f64,
}

pub fn ransac_estimate(
    rig: &CameraRig,
    acs: &[AffineCorrespondence],
    config: &RansacConfig,
    attitudes: Option<&ImuAttitudePair>,
) -> Result<RansacResult, RansacError> {
    config.validate()?;
    let s = config.solver.sample_size();
    if acs.len() < s {
        return Err(RansacError::InsufficientData {
            needed: s,
            got: acs.len(),
        });
    }
    if config.solver.needs_attitudes() && attitudes.is_none() {
        return Err(RansacError::MissingAttitudes);
    }
    for (index, ac) in acs.iter().enumerate() {
        rig.check(ac).map_err(|e| RansacError::InvalidCorrespondence {
            index,
            message: e.to_string(),
        })?;
    }

    let n = acs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stats = HypothesisStats::default();
    let mut best: Option<Best> = None;
    let mut required = config.max_iterations;
    let mut iterations = 0;
    let mut sample = Vec::with_capacity(s);

    while iterations < required {
        iterations += 1;
        sample.clear();
        sample.extend(rand::seq::index::sample(&mut rng, n, s).iter().map(|i| acs[i]));

        let out = match config.solver.solve(rig, &sample, attitudes, &config.solver_options) {
            Ok(out) => out,
            Err(SolverError::DegenerateRig { fallback, .. }) => {
                stats.generated += fallback.len();
                stats.degenerate += fallback.len();
                continue;
            }
            Err(_) => {
                stats.solver_failures += 1;
                continue;
            }
        };

        for (pose, diag) in out.hypotheses.iter().zip(&out.diagnostics) {
            stats.generated += 1;
            if diag.degenerate_flag {
                stats.degenerate += 1;
                continue;
            }
            if config.preemptive
                && !preemptive_check(&out.unused_rows, diag.root, &diag.aligned_translation, config.preemptive_residual_tol)
            {
                stats.preemptively_rejected += 1;
                continue;
            }
            stats.scored += 1;
            let (count, error_sum) = acs.iter().fold((0usize, 0.0), |(c, sum), ac| {
                let e = angular_inlier_error(rig, ac, pose);
                if e < config.inlier_threshold {
                    (c + 1, sum + e)
                } else {
                    (c, sum)
                }
            });
            let better = match &best {
                None => true,
                Some(b) => count > b.count || (count == b.count && error_sum < b.error_sum),
            };
            if better {
                best = Some(Best {
                    pose: *pose,
                    count,
                    error_sum,
                });
                required = required_iterations(config.confidence, count as f64 / n as f64, s, config.max_iterations);
            }
        }
    }

    let best = best.ok_or(RansacError::NoModelFound { iterations })?;
    let inliers: Vec<bool> = score_pose(rig, acs, &best.pose)
        .into_iter()
        .map(|e| e < config.inlier_threshold)
        .collect();
    Ok(RansacResult {
        pose: best.pose,
        inlier_count: best.count,
        inlier_error_sum: best.error_sum,
        inliers,
        iterations,
        stats,
    })
}
