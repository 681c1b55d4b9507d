//! Minimal solvers: 1AC and 2AC planar motion, 2AC with known vertical
//! direction, and the camera-pair degeneracy test of the 1AC case.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::constraints::{
    build_planar_system, build_vertical_system, camera_pair_motion, ConstraintError, ConstraintRow, RowRef,
    StackedSystem,
};
use crate::geometry::{
    rotation_y_from_qy, AffineCorrespondence, CameraRig, GeometryError, ImuAttitudePair, PoseHypothesis, PoseKind,
};
use crate::poly::{det_poly, quotient_by_q2_plus_1, real_roots, RootMethod, UnivariatePoly};

/// Default height tolerance of [`check_planar_degeneracy`], metres.
pub const DEFAULT_TOL_Y: f64 = 1e-9;
/// A null vector whose homogeneous entry is below this fraction of its norm
/// cannot be normalized.
pub const SINGULAR_TOL: f64 = 1e-10;
/// Relative size below which the determinant polynomial is treated as
/// identically zero.
const VANISHING_DET_TOL: f64 = 1e-12;
/// Relative tolerance on the vertical share of the camera-pair translation.
const SCALE_FREE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisDiagnostics {
    /// The root `q_y` the hypothesis was built from.
    pub root: f64,
    /// Translation in the gravity-aligned frames (equal to the pose
    /// translation for planar solvers).
    pub aligned_translation: Vector3<f64>,
    /// `‖M(q)·v‖ / ‖M(q)‖` for the normalized null vector `v`; the normalized
    /// smallest singular value of the translation block on the degenerate path.
    pub back_substitution_residual: f64,
    /// Set when the translation scale is unobservable.
    pub degenerate_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverOutput {
    pub hypotheses: Vec<PoseHypothesis>,
    pub diagnostics: Vec<HypothesisDiagnostics>,
    /// Constraints of the sample not used to build the system.
    pub unused_rows: Vec<ConstraintRow>,
    /// Relative remainder of the division of `det M` by `q² + 1`.
    pub quotient_remainder: f64,
}

impl SolverOutput {
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    /// Translation scale is unobservable for this camera pair. `fallback`
    /// still carries rotation hypotheses with minimum-norm translations.
    #[error("cameras {camera_k} and {camera_k1} have equal heights: translation scale is unobservable from one correspondence")]
    DegenerateRig {
        camera_k: usize,
        camera_k1: usize,
        fallback: Box<SolverOutput>,
    },
    #[error("the reduced polynomial has no real roots")]
    NoRealRoots,
    #[error("null vector has a vanishing homogeneous entry at every root")]
    SingularBackSubstitution,
    #[error("the coefficient matrix is singular for every rotation")]
    DegenerateSystem,
    /// Both correspondences observe the same camera pair, which leaves the
    /// translation scale free.
    #[error("both correspondences use camera pair ({camera_k}, {camera_k1}): translation scale is unobservable")]
    DegenerateSample { camera_k: usize, camera_k1: usize },
    #[error("attitude outside (-90°, 90°)")]
    InvalidAttitude,
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

impl From<GeometryError> for SolverError {
    fn from(e: GeometryError) -> Self {
        SolverError::Constraint(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub root_method: RootMethod,
    pub tol_y: f64,
    /// Rows of the stacked system; `None` uses the solver's default.
    pub row_selection: Option<Vec<RowRef>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            root_method: RootMethod::default(),
            tol_y: DEFAULT_TOL_Y,
            row_selection: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegeneracyReport {
    pub degenerate: bool,
    /// `t_i.y − t_j.y` of the two optical centres.
    pub height_difference: f64,
    /// With a candidate pose: whether the vertical component of the
    /// camera-pair translation `R t_i + t − t_j` vanishes, leaving its scale free.
    pub scale_free: Option<bool>,
    /// With a candidate pose: `|(R t_i + t − t_j).y| / ‖R t_i + t − t_j‖`.
    pub vertical_share: Option<f64>,
}

/// Whether one correspondence between `camera_k` (frame k) and `camera_k1`
/// (frame k+1) leaves the planar translation scale unobservable.
pub fn check_planar_degeneracy(
    rig: &CameraRig,
    camera_k: usize,
    camera_k1: usize,
    pose: Option<&PoseHypothesis>,
    tol_y: f64,
) -> Result<DegeneracyReport, GeometryError> {
    let ti = rig.camera(camera_k)?.translation;
    let tj = rig.camera(camera_k1)?.translation;
    let height_difference = ti.y - tj.y;
    let mut report = DegeneracyReport {
        degenerate: height_difference.abs() < tol_y,
        height_difference,
        scale_free: None,
        vertical_share: None,
    };
    if let Some(pose) = pose {
        let v = pose.rotation * ti + pose.translation - tj;
        let n = v.norm();
        let share = if n > 0.0 { v.y.abs() / n } else { 0.0 };
        report.vertical_share = Some(share);
        report.scale_free = Some(share < SCALE_FREE_TOL);
    }
    Ok(report)
}

struct Root {
    q: f64,
    solution: DVector<f64>,
    residual: f64,
}

fn smallest_singular(m: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (imin, _) = svd.singular_values.argmin();
    (v_t.row(imin).transpose(), svd.singular_values[imin])
}

fn entry_scale(sys: &StackedSystem) -> f64 {
    let n = sys.matrix.dim();
    (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| sys.matrix.entry(r, c).scale())
        .fold(0.0, f64::max)
}

/// Newton steps on a determinant evaluated from the matrix itself, which
/// avoids the cancellation in the expanded determinant coefficients. A step
/// is kept only if it decreases `|det_at|`.
fn polish_root(det_at: impl Fn(f64) -> f64, q0: f64) -> f64 {
    let mut q = q0;
    let mut f = det_at(q);
    for _ in 0..3 {
        if f == 0.0 {
            break;
        }
        let h = 1e-6 * (1.0 + q.abs());
        let df = (det_at(q + h) - det_at(q - h)) / (2.0 * h);
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let next = q - f / df;
        let f_next = det_at(next);
        if !(f_next.abs() < f.abs()) {
            break;
        }
        q = next;
        f = f_next;
    }
    q
}

/// Determinant, division by `q² + 1`, real roots and null vectors.
fn reduce(sys: &StackedSystem, method: RootMethod) -> Result<(Vec<Root>, f64), SolverError> {
    let n = sys.matrix.dim();
    let det = det_poly(&sys.matrix);
    let scale = entry_scale(sys);
    if !(det.scale() > VANISHING_DET_TOL * scale.powi(n as i32)) {
        return Err(SolverError::DegenerateSystem);
    }
    let quot = quotient_by_q2_plus_1(&det);
    if quot.flagged {
        log::debug!("det M leaves remainder {:.3e} after division by q^2+1", quot.relative_remainder);
    }
    let roots = real_roots(&quot.quotient, method).map_err(|_| SolverError::NoRealRoots)?;
    if roots.is_empty() {
        return Err(SolverError::NoRealRoots);
    }
    let mut out = Vec::with_capacity(roots.len());
    for &q in &roots.roots {
        let q = polish_root(|q| sys.matrix.eval(q).determinant(), q);
        let m = sys.matrix.eval(q);
        let (v, _) = smallest_singular(&m);
        let h = v[n - 1];
        if !(h.abs() >= SINGULAR_TOL * v.norm()) {
            continue;
        }
        let solution = v / h;
        let residual = (&m * &solution).norm() / m.norm().max(f64::MIN_POSITIVE);
        out.push(Root { q, solution, residual });
    }
    if out.is_empty() {
        return Err(SolverError::SingularBackSubstitution);
    }
    Ok((out, quot.relative_remainder))
}

fn planar_output(sys: StackedSystem, roots: Vec<Root>, remainder: f64) -> SolverOutput {
    let mut out = SolverOutput {
        unused_rows: sys.unused,
        quotient_remainder: remainder,
        ..Default::default()
    };
    for r in roots {
        let pose = PoseHypothesis::planar(r.q, r.solution[0], r.solution[1]);
        out.diagnostics.push(HypothesisDiagnostics {
            root: r.q,
            aligned_translation: pose.translation,
            back_substitution_residual: r.residual,
            degenerate_flag: false,
        });
        out.hypotheses.push(pose);
    }
    out
}

pub fn solve_planar_1ac(rig: &CameraRig, ac: &AffineCorrespondence) -> Result<SolverOutput, SolverError> {
    solve_planar_1ac_with(rig, ac, &SolverOptions::default())
}

/// Planar motion from a single correspondence using all three of its
/// constraints.
///
/// When the two cameras of the correspondence sit at the same height the
/// scale is unobservable; the result is then `DegenerateRig` carrying
/// rotation hypotheses (see [`SolverError::DegenerateRig`]).
pub fn solve_planar_1ac_with(
    rig: &CameraRig,
    ac: &AffineCorrespondence,
    opts: &SolverOptions,
) -> Result<SolverOutput, SolverError> {
    let sys = build_planar_system(rig, std::slice::from_ref(ac), opts.row_selection.as_deref())?;
    let report = check_planar_degeneracy(rig, ac.camera_k, ac.camera_k1, None, opts.tol_y)?;
    if report.degenerate {
        return Err(SolverError::DegenerateRig {
            camera_k: ac.camera_k,
            camera_k1: ac.camera_k1,
            fallback: Box::new(degenerate_fallback(&sys, opts.root_method)),
        });
    }
    let (roots, remainder) = reduce(&sys, opts.root_method)?;
    Ok(planar_output(sys, roots, remainder))
}

/// Rotation hypotheses when `(t_x, t_z)` has a free scale: at the true
/// rotation the 3×2 translation block of `M` drops to rank one, so its 2×2
/// minors vanish there.
fn degenerate_fallback(sys: &StackedSystem, method: RootMethod) -> SolverOutput {
    let m = &sys.matrix;
    let minor = |a: usize, b: usize| -> UnivariatePoly {
        &(m.entry(a, 0) * m.entry(b, 1)) - &(m.entry(a, 1) * m.entry(b, 0))
    };
    let (rows, best) = [(0, 1), (0, 2), (1, 2)]
        .into_iter()
        .map(|(a, b)| ((a, b), minor(a, b)))
        .max_by(|a, b| a.1.scale().total_cmp(&b.1.scale()))
        .expect("three minors");
    let minor_at = |q: f64| {
        let e = m.eval(q);
        e[(rows.0, 0)] * e[(rows.1, 1)] - e[(rows.0, 1)] * e[(rows.1, 0)]
    };
    let mut out = SolverOutput {
        unused_rows: sys.unused.clone(),
        ..Default::default()
    };
    let Ok(roots) = real_roots(&best, method) else {
        return out;
    };
    let mut scored: Vec<(f64, PoseHypothesis)> = Vec::new();
    for &q in &roots.roots {
        let q = polish_root(minor_at, q);
        let full = m.eval(q);
        let block = full.columns(0, 2).into_owned();
        let rhs = -full.column(2).into_owned();
        let svd = block.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let score = if smax > 0.0 { svd.singular_values.min() / smax } else { 1.0 };
        let eps = 1e-8 * smax;
        let t = match svd.solve(&rhs, eps) {
            Ok(t) => t,
            Err(_) => continue,
        };
        scored.push((score, PoseHypothesis::planar(q, t[0], t[1])));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (score, pose) in scored {
        out.diagnostics.push(HypothesisDiagnostics {
            root: crate::geometry::qy_from_rotation_y(&pose.rotation),
            aligned_translation: pose.translation,
            back_substitution_residual: score,
            degenerate_flag: true,
        });
        out.hypotheses.push(pose);
    }
    out
}

fn same_pair(a: &AffineCorrespondence, b: &AffineCorrespondence) -> bool {
    a.camera_k == b.camera_k && a.camera_k1 == b.camera_k1
}

pub fn solve_planar_2ac(
    rig: &CameraRig,
    ac1: &AffineCorrespondence,
    ac2: &AffineCorrespondence,
) -> Result<SolverOutput, SolverError> {
    solve_planar_2ac_with(rig, ac1, ac2, &SolverOptions::default())
}

/// Planar motion from two correspondences. The three constraints left out of
/// the system are returned for preemptive hypothesis tests.
pub fn solve_planar_2ac_with(
    rig: &CameraRig,
    ac1: &AffineCorrespondence,
    ac2: &AffineCorrespondence,
    opts: &SolverOptions,
) -> Result<SolverOutput, SolverError> {
    let sys = build_planar_system(rig, &[*ac1, *ac2], opts.row_selection.as_deref())?;
    if same_pair(ac1, ac2) && check_planar_degeneracy(rig, ac1.camera_k, ac1.camera_k1, None, opts.tol_y)?.degenerate {
        return Err(SolverError::DegenerateSample {
            camera_k: ac1.camera_k,
            camera_k1: ac1.camera_k1,
        });
    }
    let (roots, remainder) = reduce(&sys, opts.root_method)?;
    Ok(planar_output(sys, roots, remainder))
}

pub fn solve_vertical_2ac(
    rig: &CameraRig,
    ac1: &AffineCorrespondence,
    ac2: &AffineCorrespondence,
    attitudes: &ImuAttitudePair,
) -> Result<SolverOutput, SolverError> {
    solve_vertical_2ac_with(rig, ac1, ac2, attitudes, &SolverOptions::default())
}

/// 4DOF motion from two correspondences and the roll/pitch of both frames.
/// The two affine constraints of the second correspondence are returned for
/// preemptive hypothesis tests.
pub fn solve_vertical_2ac_with(
    rig: &CameraRig,
    ac1: &AffineCorrespondence,
    ac2: &AffineCorrespondence,
    attitudes: &ImuAttitudePair,
    opts: &SolverOptions,
) -> Result<SolverOutput, SolverError> {
    if !attitudes.frame_k.is_valid() || !attitudes.frame_k1.is_valid() {
        return Err(SolverError::InvalidAttitude);
    }
    let sys = build_vertical_system(rig, &[*ac1, *ac2], attitudes, opts.row_selection.as_deref())?;
    // with an unconstrained vertical translation one camera pair fixes
    // the translation only up to scale
    if same_pair(ac1, ac2) {
        return Err(SolverError::DegenerateSample {
            camera_k: ac1.camera_k,
            camera_k1: ac1.camera_k1,
        });
    }
    let (roots, remainder) = reduce(&sys, opts.root_method)?;
    let mut out = SolverOutput {
        quotient_remainder: remainder,
        ..Default::default()
    };
    for r in roots {
        let t_al = Vector3::new(r.solution[0], r.solution[1], r.solution[2]);
        let (rotation, translation) = sys.alignment.unalign(&rotation_y_from_qy(r.q), &t_al);
        out.hypotheses.push(PoseHypothesis {
            rotation,
            translation,
            kind: PoseKind::VerticalAligned,
        });
        out.diagnostics.push(HypothesisDiagnostics {
            root: r.q,
            aligned_translation: t_al,
            back_substitution_residual: r.residual,
            degenerate_flag: false,
        });
    }
    out.unused_rows = sys.unused;
    Ok(out)
}

/// `R t_i + t − t_j`, the camera-pair translation expressed in the rig frame
/// of `k+1`.
pub fn camera_pair_translation_in_rig(
    rig: &CameraRig,
    camera_k: usize,
    camera_k1: usize,
    pose: &PoseHypothesis,
) -> Result<Vector3<f64>, GeometryError> {
    let (_, t_c) = camera_pair_motion(rig, camera_k, camera_k1, pose)?;
    let r_j: Matrix3<f64> = rig.camera(camera_k1)?.rotation;
    Ok(r_j * t_c)
}
