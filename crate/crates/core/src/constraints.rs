//! Generalized epipolar and affine constraints, and the polynomial
//! coefficient matrices the planar and known-vertical solvers reduce.
//!
//! Every affine correspondence contributes three scalar constraints, in a
//! fixed order: the generalized epipolar constraint of its two rays, then the
//! two rows of `(Eᵀx')₁‚₂ + (ÂᵀEx)₁‚₂ = 0`.
//!
//! For the solvers the rotation is written as `R = R_bᵀ·R_y(q)·R_a`, where
//! `R_a`, `R_b` align the two frames with gravity (identity for planar
//! motion), and the translation as `t = R_bᵀ·t̃`. Each constraint is linear in
//! the matrix `G = (1+q²)·R_y(q) = B0 + q·B1 + q²·B2` and affine in `t̃`, so
//! its coefficients are quadratics in `q` obtained by evaluating closed forms
//! at the three basis matrices. The common factor `1/(1+q²)` is dropped.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{
    imu_alignment_rotation, plucker_from_observation, skew, AffineCorrespondence, CameraRig,
    GeometryError, ImuAttitudePair, PlueckerLine, PoseHypothesis,
};
use crate::poly::{PolynomialMatrix, UnivariatePoly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("expected {expected} affine correspondences, got {got}")]
    WrongAcCount { expected: &'static str, got: usize },
    #[error("row selection must name exactly {expected} rows, got {got}")]
    SelectionLength { expected: usize, got: usize },
    #[error("row selection refers to correspondence {ac}, only {available} given")]
    SelectionOutOfRange { ac: usize, available: usize },
    #[error("row selection repeats a row")]
    SelectionRepeated,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which of the three constraints of a correspondence a row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowKind {
    Epipolar = 0,
    Affine1 = 1,
    Affine2 = 2,
}

impl RowKind {
    pub const ALL: [RowKind; 3] = [RowKind::Epipolar, RowKind::Affine1, RowKind::Affine2];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A row of a stacked system: correspondence index within the sample and row kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowRef {
    pub ac: usize,
    pub kind: RowKind,
}

impl RowRef {
    pub const fn new(ac: usize, kind: RowKind) -> Self {
        Self { ac, kind }
    }
}

/// Default rows of the 1AC planar system: all three constraints.
pub const PLANAR_1AC_ROWS: [RowRef; 3] = [
    RowRef::new(0, RowKind::Epipolar),
    RowRef::new(0, RowKind::Affine1),
    RowRef::new(0, RowKind::Affine2),
];

/// Default rows of the 2AC planar system: two constraints of the first
/// correspondence and the epipolar constraint of the second.
pub const PLANAR_2AC_ROWS: [RowRef; 3] = [
    RowRef::new(0, RowKind::Epipolar),
    RowRef::new(0, RowKind::Affine1),
    RowRef::new(1, RowKind::Epipolar),
];

/// Default rows of the known-vertical system: all constraints of the first
/// correspondence and the epipolar constraint of the second.
pub const VERTICAL_2AC_ROWS: [RowRef; 4] = [
    RowRef::new(0, RowKind::Epipolar),
    RowRef::new(0, RowKind::Affine1),
    RowRef::new(0, RowKind::Affine2),
    RowRef::new(1, RowKind::Epipolar),
];

/// Basis of `(1+q²)·R_y(q)`, indexed by the power of `q`.
fn ry_basis() -> [Matrix3<f64>; 3] {
    [
        Matrix3::identity(),
        Matrix3::new(0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0),
        Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0),
    ]
}

/// One constraint as a function of `q` and `t̃`:
/// `Σ_a translation[a](q)·t̃_a + constant(q)`, each coefficient a quadratic
/// `[c0, c1, c2]` in `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub source: RowRef,
    pub translation: [[f64; 3]; 3],
    pub constant: [f64; 3],
}

fn quad(c: &[f64; 3], q: f64) -> f64 {
    c[0] + q * (c[1] + q * c[2])
}

impl ConstraintRow {
    /// Coefficients `(t̃_x, t̃_y, t̃_z, 1)` at `q`.
    pub fn coefficients_at(&self, q: f64) -> [f64; 4] {
        [
            quad(&self.translation[0], q),
            quad(&self.translation[1], q),
            quad(&self.translation[2], q),
            quad(&self.constant, q),
        ]
    }

    /// Row value at `(q, t̃)`, i.e. `(1+q²)` times the constraint residual.
    pub fn eval(&self, q: f64, t: &Vector3<f64>) -> f64 {
        let c = self.coefficients_at(q);
        c[0] * t.x + c[1] * t.y + c[2] * t.z + c[3]
    }

    fn entry(&self, column: Column) -> UnivariatePoly {
        let c = match column {
            Column::T(a) => self.translation[a],
            Column::One => self.constant,
        };
        UnivariatePoly::new(c.to_vec())
    }
}

#[derive(Clone, Copy)]
enum Column {
    T(usize),
    One,
}

const PLANAR_COLUMNS: [Column; 3] = [Column::T(0), Column::T(2), Column::One];
const VERTICAL_COLUMNS: [Column; 4] = [Column::T(0), Column::T(1), Column::T(2), Column::One];

/// The three constraint rows of one correspondence, in `RowKind` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintTriple {
    pub rows: [ConstraintRow; 3],
}

/// Gravity alignment of the two frames (`R_imu`, `R'_imu`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub frame_k: Matrix3<f64>,
    pub frame_k1: Matrix3<f64>,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            frame_k: Matrix3::identity(),
            frame_k1: Matrix3::identity(),
        }
    }

    pub fn from_attitudes(att: &ImuAttitudePair) -> Self {
        Self {
            frame_k: imu_alignment_rotation(&att.frame_k),
            frame_k1: imu_alignment_rotation(&att.frame_k1),
        }
    }

    /// Rig pose `R = R_bᵀ R_y R_a`, `t = R_bᵀ t̃` for an aligned-frame solution.
    pub fn unalign(&self, r_y: &Matrix3<f64>, t_aligned: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let rb_t = self.frame_k1.transpose();
        (rb_t * r_y * self.frame_k, rb_t * t_aligned)
    }
}

/// Constraint triple of `ac`, index `ac_index` within its sample.
pub fn constraint_triple(
    rig: &CameraRig,
    ac: &AffineCorrespondence,
    ac_index: usize,
    alignment: &Alignment,
) -> Result<ConstraintTriple, ConstraintError> {
    let cam_k = rig.camera(ac.camera_k)?;
    let cam_k1 = rig.camera(ac.camera_k1)?;
    let ra = &alignment.frame_k;
    let rb = &alignment.frame_k1;

    let line = plucker_from_observation(rig, ac.camera_k, &ac.x)?.rotated(ra);
    let line_p = plucker_from_observation(rig, ac.camera_k1, &ac.x_prime)?.rotated(rb);

    // affine-row quantities in the aligned frames
    let q_mat = ra * cam_k.rotation;
    let p_mat = rb * cam_k1.rotation;
    let a_skew = skew(&(ra * cam_k.translation));
    let b_skew = skew(&(rb * cam_k1.translation));
    let y = q_mat * ac.x;
    let y_p = p_mat * ac.x_prime;
    let aff = &ac.affine;

    let mut rows = [[([0.0; 3], [[0.0; 3]; 3]); 3]; 1][0];
    for (power, g) in ry_basis().iter().enumerate() {
        // generalized epipolar: t̃·(G ũ × ũ') + ũ'ᵀ G m̃ + m̃'ᵀ G ũ
        let gu = g * line.direction;
        let t_coef = gu.cross(&line_p.direction);
        let constant = line_p.direction.dot(&(g * line.moment)) + line_p.moment.dot(&gu);
        set_row(&mut rows[0], power, constant, &t_coef);

        // φ(p, v) = pᵀ(G[a]x − [b]x G)v + t̃·(G v × p)
        let h = g * a_skew - b_skew * g;
        let phi = |p: &Vector3<f64>, v: &Vector3<f64>| -> (f64, Vector3<f64>) {
            (p.dot(&(h * v)), (g * v).cross(p))
        };
        let ex: Vec<(f64, Vector3<f64>)> = (0..2).map(|l| phi(&p_mat.column(l).into(), &y)).collect();
        for k in 0..2 {
            let (mut c, mut t) = phi(&y_p, &q_mat.column(k).into());
            for (l, (ec, et)) in ex.iter().enumerate() {
                c += aff[(l, k)] * ec;
                t += aff[(l, k)] * et;
            }
            set_row(&mut rows[k + 1], power, c, &t);
        }
    }

    let make = |i: usize| ConstraintRow {
        source: RowRef::new(ac_index, RowKind::ALL[i]),
        constant: rows[i].0,
        translation: rows[i].1,
    };
    Ok(ConstraintTriple {
        rows: [make(0), make(1), make(2)],
    })
}

fn set_row(row: &mut ([f64; 3], [[f64; 3]; 3]), power: usize, constant: f64, t: &Vector3<f64>) {
    row.0[power] = constant;
    for a in 0..3 {
        row.1[a][power] = t[a];
    }
}

/// A stacked square system plus the rows left out of it.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    /// `M(q)`, columns `(t_x, t_z, 1)` (planar) or `(t̃_x, t̃_y, t̃_z, 1)` (vertical).
    pub matrix: PolynomialMatrix,
    pub rows: Vec<ConstraintRow>,
    /// Constraints of the sample that are not part of `matrix`.
    pub unused: Vec<ConstraintRow>,
    pub alignment: Alignment,
}

fn stack(
    rig: &CameraRig,
    acs: &[AffineCorrespondence],
    selection: &[RowRef],
    alignment: Alignment,
    columns: &[Column],
) -> Result<StackedSystem, ConstraintError> {
    let n = columns.len();
    if selection.len() != n {
        return Err(ConstraintError::SelectionLength {
            expected: n,
            got: selection.len(),
        });
    }
    for (i, r) in selection.iter().enumerate() {
        if r.ac >= acs.len() {
            return Err(ConstraintError::SelectionOutOfRange {
                ac: r.ac,
                available: acs.len(),
            });
        }
        if selection[..i].contains(r) {
            return Err(ConstraintError::SelectionRepeated);
        }
    }
    let triples = acs
        .iter()
        .enumerate()
        .map(|(i, ac)| constraint_triple(rig, ac, i, &alignment))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<ConstraintRow> = selection
        .iter()
        .map(|r| triples[r.ac].rows[r.kind.index()])
        .collect();
    let unused = triples
        .iter()
        .flat_map(|t| t.rows.iter())
        .filter(|row| !selection.contains(&row.source))
        .copied()
        .collect();
    let entries = rows
        .iter()
        .flat_map(|row| columns.iter().map(move |&c| row.entry(c)))
        .collect();
    let matrix = PolynomialMatrix::new(n, entries).expect("dimension checked");
    Ok(StackedSystem {
        matrix,
        rows,
        unused,
        alignment,
    })
}

/// 3×3 planar system `M(q)·(t_x, t_z, 1)ᵀ = 0` from one or two correspondences.
///
/// Without an explicit selection, one correspondence contributes all three
/// rows and two correspondences use [`PLANAR_2AC_ROWS`].
pub fn build_planar_system(
    rig: &CameraRig,
    acs: &[AffineCorrespondence],
    selection: Option<&[RowRef]>,
) -> Result<StackedSystem, ConstraintError> {
    let default: &[RowRef] = match acs.len() {
        1 => &PLANAR_1AC_ROWS,
        2 => &PLANAR_2AC_ROWS,
        got => {
            return Err(ConstraintError::WrongAcCount {
                expected: "1 or 2",
                got,
            })
        }
    };
    stack(rig, acs, selection.unwrap_or(default), Alignment::identity(), &PLANAR_COLUMNS)
}

/// 4×4 known-vertical system `M̃(q)·(t̃_x, t̃_y, t̃_z, 1)ᵀ = 0` from two
/// correspondences in gravity-aligned frames.
pub fn build_vertical_system(
    rig: &CameraRig,
    acs: &[AffineCorrespondence],
    attitudes: &ImuAttitudePair,
    selection: Option<&[RowRef]>,
) -> Result<StackedSystem, ConstraintError> {
    if acs.len() != 2 {
        return Err(ConstraintError::WrongAcCount {
            expected: "2",
            got: acs.len(),
        });
    }
    stack(
        rig,
        acs,
        selection.unwrap_or(&VERTICAL_2AC_ROWS),
        Alignment::from_attitudes(attitudes),
        &VERTICAL_COLUMNS,
    )
}

/// `l'ᵀ·[[ [t]x R, R ], [ R, 0 ]]·l`.
pub fn generalized_epipolar_residual(pose: &PoseHypothesis, l: &PlueckerLine, l_prime: &PlueckerLine) -> f64 {
    let r = pose.rotation;
    let tr = skew(&pose.translation) * r;
    let mut g = Matrix6::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&tr);
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(&r);
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(&r);
    let v = |p: &PlueckerLine| {
        Vector6::new(p.direction.x, p.direction.y, p.direction.z, p.moment.x, p.moment.y, p.moment.z)
    };
    v(l_prime).dot(&(g * v(l)))
}

fn homogeneous(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Relative motion of the camera pair `(camera_k at k, camera_k1 at k+1)`,
/// `T_C = T_{k1}⁻¹·T·T_k`.
pub fn camera_pair_motion(
    rig: &CameraRig,
    camera_k: usize,
    camera_k1: usize,
    pose: &PoseHypothesis,
) -> Result<(Matrix3<f64>, Vector3<f64>), GeometryError> {
    let ci = rig.camera(camera_k)?;
    let cj = rig.camera(camera_k1)?;
    let ti = homogeneous(&ci.rotation, &ci.translation);
    let tj_inv = homogeneous(&cj.rotation.transpose(), &(-(cj.rotation.transpose() * cj.translation)));
    let tc = tj_inv * homogeneous(&pose.rotation, &pose.translation) * ti;
    Ok((tc.fixed_view::<3, 3>(0, 0).into(), tc.fixed_view::<3, 1>(0, 3).into()))
}

/// Essential matrix `[t_C]x R_C` of the camera pair, from the composed motion.
pub fn essential_from_camera_pair(
    rig: &CameraRig,
    camera_k: usize,
    camera_k1: usize,
    pose: &PoseHypothesis,
) -> Result<Matrix3<f64>, GeometryError> {
    let (r_c, t_c) = camera_pair_motion(rig, camera_k, camera_k1, pose)?;
    Ok(skew(&t_c) * r_c)
}

/// The same essential matrix in factored form,
/// `R_jᵀ·(R[t_i]x R ᵀ + [t]x − [t_j]x)·R·R_i`.
pub fn essential_factored(
    rig: &CameraRig,
    camera_k: usize,
    camera_k1: usize,
    pose: &PoseHypothesis,
) -> Result<Matrix3<f64>, GeometryError> {
    let ci = rig.camera(camera_k)?;
    let cj = rig.camera(camera_k1)?;
    let r = pose.rotation;
    let inner = r * skew(&ci.translation) * r.transpose() + skew(&pose.translation) - skew(&cj.translation);
    Ok(cj.rotation.transpose() * inner * r * ci.rotation)
}

/// `(Eᵀx')₁‚₂ + (ÂᵀEx)₁‚₂`, zero for a correspondence consistent with `pose`.
pub fn affine_constraint_rows(
    rig: &CameraRig,
    ac: &AffineCorrespondence,
    pose: &PoseHypothesis,
) -> Result<[f64; 2], GeometryError> {
    let e = essential_from_camera_pair(rig, ac.camera_k, ac.camera_k1, pose)?;
    let n = e.transpose() * ac.x_prime;
    let n_p = ac.affine_hat().transpose() * (e * ac.x);
    Ok([n.x + n_p.x, n.y + n_p.y])
}

/// The three constraint residuals of one correspondence at `pose`.
pub fn ac_residuals(rig: &CameraRig, ac: &AffineCorrespondence, pose: &PoseHypothesis) -> Result<[f64; 3], GeometryError> {
    let l = plucker_from_observation(rig, ac.camera_k, &ac.x)?;
    let lp = plucker_from_observation(rig, ac.camera_k1, &ac.x_prime)?;
    let [a1, a2] = affine_constraint_rows(rig, ac, pose)?;
    Ok([generalized_epipolar_residual(pose, &l, &lp), a1, a2])
}

/// All `3·n` constraint residuals of a set of correspondences at a 6DOF pose.
pub fn stacked_6dof_residuals(
    rig: &CameraRig,
    acs: &[AffineCorrespondence],
    pose: &PoseHypothesis,
) -> Result<Vec<f64>, GeometryError> {
    let mut out = Vec::with_capacity(3 * acs.len());
    for ac in acs {
        out.extend_from_slice(&ac_residuals(rig, ac, pose)?);
    }
    Ok(out)
}
