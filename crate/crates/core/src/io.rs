//! Text formats: datasets, pose estimates, KITTI ground truth and the
//! evaluation table.
//!
//! A dataset is a sequence of whitespace-separated records, one per line.
//! Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! camera <index> <R row-major, 9> <t, 3>
//! pair <id>
//! attitude <roll_k> <pitch_k> <roll_k1> <pitch_k1>     degrees
//! gt <R row-major, 9> <t, 3>
//! ac <camera_k> <camera_k1> <x> <y> <x'> <y'> <a11> <a12> <a21> <a22>
//! ```
//!
//! Cameras come first, numbered from 0. `attitude`, `gt` and `ac` records
//! belong to the most recent `pair`. Image coordinates are normalized.
//! Numbers are written with 17 significant digits, so a saved file loads
//! back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::{Matrix2, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{
    orthonormalize, rotation_deviation, AffineCorrespondence, Camera, CameraRig, ImuAttitude,
    ImuAttitudePair, PoseHypothesis, ROTATION_TOL,
};
use crate::synth::{median, rotation_error, translation_direction_error, translation_error};

/// Rotations further than this from SO(3) are rejected; closer ones are
/// re-orthonormalized with a warning.
pub const ORTHONORMAL_REPAIR_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn record_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Record {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub id: String,
    pub acs: Vec<AffineCorrespondence>,
    pub attitudes: Option<ImuAttitudePair>,
    pub ground_truth: Option<PoseHypothesis>,
}

impl FramePair {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            acs: Vec::new(),
            attitudes: None,
            ground_truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rig: CameraRig,
    pub pairs: Vec<FramePair>,
}

/// Splits `text` into numbered, non-empty, non-comment lines.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split_whitespace().collect()))
        }
    })
}

fn parse_num<T: FromStr>(line: usize, what: &str, tok: &str) -> Result<T, DataError> {
    tok.parse()
        .map_err(|_| record_err(line, format!("invalid {what} '{tok}'")))
}

fn parse_floats(line: usize, toks: &[&str]) -> Result<Vec<f64>, DataError> {
    toks.iter()
        .map(|t| {
            let v: f64 = parse_num(line, "number", t)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(record_err(line, format!("non-finite number '{t}'")))
            }
        })
        .collect()
}

fn expect_fields(line: usize, kind: &str, toks: &[&str], n: usize) -> Result<(), DataError> {
    if toks.len() != n + 1 {
        return Err(record_err(
            line,
            format!("'{kind}' record needs {n} fields, got {}", toks.len() - 1),
        ));
    }
    Ok(())
}

/// Rotation from 9 row-major values, repaired if it is within
/// [`ORTHONORMAL_REPAIR_TOL`] of SO(3).
fn parse_rotation(line: usize, v: &[f64]) -> Result<Matrix3<f64>, DataError> {
    let r = Matrix3::from_row_slice(v);
    let dev = rotation_deviation(&r);
    if dev <= ROTATION_TOL {
        Ok(r)
    } else if dev <= ORTHONORMAL_REPAIR_TOL {
        warn!("line {line}: rotation off by {dev:.3e}, re-orthonormalized");
        Ok(orthonormalize(&r))
    } else {
        Err(record_err(
            line,
            format!("rotation is not orthonormal (deviation {dev:.3e})"),
        ))
    }
}

fn pose_from_values(line: usize, v: &[f64]) -> Result<PoseHypothesis, DataError> {
    let r = parse_rotation(line, &v[..9])?;
    Ok(PoseHypothesis::general(r, Vector3::new(v[9], v[10], v[11])))
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DataError> {
    let mut cameras: Vec<Camera> = Vec::new();
    let mut rig: Option<CameraRig> = None;
    let mut pairs: Vec<FramePair> = Vec::new();

    for (line, toks) in records(text) {
        let kind = toks[0];
        match kind {
            "camera" => {
                if rig.is_some() {
                    return Err(record_err(line, "camera record after the first pair"));
                }
                expect_fields(line, kind, &toks, 13)?;
                let index: usize = parse_num(line, "camera index", toks[1])?;
                if index != cameras.len() {
                    return Err(record_err(
                        line,
                        format!("expected camera {}, got {index}", cameras.len()),
                    ));
                }
                let v = parse_floats(line, &toks[2..])?;
                let r = parse_rotation(line, &v[..9])?;
                cameras.push(Camera::new(r, Vector3::new(v[9], v[10], v[11])));
            }
            "pair" => {
                expect_fields(line, kind, &toks, 1)?;
                if rig.is_none() {
                    rig = Some(
                        CameraRig::new(cameras.clone())
                            .map_err(|e| record_err(line, format!("invalid rig: {e}")))?,
                    );
                }
                let id = toks[1];
                if pairs.iter().any(|p| p.id == id) {
                    return Err(record_err(line, format!("duplicate pair id '{id}'")));
                }
                pairs.push(FramePair::new(id));
            }
            "attitude" | "gt" | "ac" => {
                let Some(pair) = pairs.last_mut() else {
                    return Err(record_err(line, format!("'{kind}' record before any pair")));
                };
                match kind {
                    "attitude" => {
                        expect_fields(line, kind, &toks, 4)?;
                        if pair.attitudes.is_some() {
                            return Err(record_err(line, format!("pair '{}' has two attitude records", pair.id)));
                        }
                        let v = parse_floats(line, &toks[1..])?;
                        let att = ImuAttitudePair::new(
                            ImuAttitude::new(v[0].to_radians(), v[1].to_radians()),
                            ImuAttitude::new(v[2].to_radians(), v[3].to_radians()),
                        );
                        if !att.frame_k.is_valid() || !att.frame_k1.is_valid() {
                            return Err(record_err(line, "roll and pitch must lie in (-90, 90) degrees"));
                        }
                        pair.attitudes = Some(att);
                    }
                    "gt" => {
                        expect_fields(line, kind, &toks, 12)?;
                        if pair.ground_truth.is_some() {
                            return Err(record_err(line, format!("pair '{}' has two gt records", pair.id)));
                        }
                        let v = parse_floats(line, &toks[1..])?;
                        pair.ground_truth = Some(pose_from_values(line, &v)?);
                    }
                    _ => {
                        expect_fields(line, kind, &toks, 10)?;
                        let ck: usize = parse_num(line, "camera index", toks[1])?;
                        let ck1: usize = parse_num(line, "camera index", toks[2])?;
                        let n = rig.as_ref().map_or(0, CameraRig::len);
                        for c in [ck, ck1] {
                            if c >= n {
                                return Err(record_err(
                                    line,
                                    format!("ac record names camera {c}, but the rig has {n} cameras"),
                                ));
                            }
                        }
                        let v = parse_floats(line, &toks[3..])?;
                        let affine = Matrix2::new(v[4], v[5], v[6], v[7]);
                        let ac = AffineCorrespondence::new(ck, ck1, [v[0], v[1]], [v[2], v[3]], affine)
                            .map_err(|e| record_err(line, e.to_string()))?;
                        pair.acs.push(ac);
                    }
                }
            }
            other => return Err(record_err(line, format!("unknown record type '{other}'"))),
        }
    }

    let rig = match rig {
        Some(r) => r,
        None => CameraRig::new(cameras).map_err(|e| DataError::Invalid(format!("invalid rig: {e}")))?,
    };
    Ok(Dataset { rig, pairs })
}

fn read_file(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), DataError> {
    fs::write(path, text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    parse_dataset(&read_file(path.as_ref())?)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), DataError> {
    write_file(path.as_ref(), &format_dataset(dataset))
}

fn push_num(out: &mut String, v: f64) {
    let _ = write!(out, " {v:.16e}");
}

fn push_pose(out: &mut String, r: &Matrix3<f64>, t: &Vector3<f64>) {
    for i in 0..3 {
        for j in 0..3 {
            push_num(out, r[(i, j)]);
        }
    }
    for v in t.iter() {
        push_num(out, *v);
    }
}

/// Degrees value written for an angle of `rad` radians: the smallest-magnitude
/// value that converts back to exactly `rad`, if one lies near the direct
/// conversion.
pub fn degrees_exact(rad: f64) -> f64 {
    let d = rad.to_degrees();
    if d == 0.0 || !d.is_finite() {
        return d;
    }
    let bits = d.to_bits();
    let mut best: Option<f64> = None;
    for k in 0..=16u64 {
        for cand in [bits.wrapping_sub(k), bits.wrapping_add(k)] {
            let c = f64::from_bits(cand);
            if c.to_radians() == rad && best.is_none_or(|b| c.abs() < b.abs()) {
                best = Some(c);
            }
        }
    }
    best.unwrap_or(d)
}

/// Nearest angle whose degrees representation loads back bit-exactly.
pub fn representable_angle(rad: f64) -> f64 {
    degrees_exact(rad).to_radians()
}

pub fn format_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    for (i, cam) in dataset.rig.cameras().iter().enumerate() {
        let _ = write!(out, "camera {i}");
        push_pose(&mut out, &cam.rotation, &cam.translation);
        out.push('\n');
    }
    for pair in &dataset.pairs {
        let _ = writeln!(out, "pair {}", pair.id);
        if let Some(att) = &pair.attitudes {
            out.push_str("attitude");
            for v in [att.frame_k.roll, att.frame_k.pitch, att.frame_k1.roll, att.frame_k1.pitch] {
                push_num(&mut out, degrees_exact(v));
            }
            out.push('\n');
        }
        if let Some(gt) = &pair.ground_truth {
            out.push_str("gt");
            push_pose(&mut out, &gt.rotation, &gt.translation);
            out.push('\n');
        }
        for ac in &pair.acs {
            let _ = write!(out, "ac {} {}", ac.camera_k, ac.camera_k1);
            let a = &ac.affine;
            for v in [ac.x.x, ac.x.y, ac.x_prime.x, ac.x_prime.y, a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]] {
                push_num(&mut out, v);
            }
            out.push('\n');
        }
    }
    out
}

/// Outcome of estimating one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimateOutcome {
    Pose {
        pose: PoseHypothesis,
        inliers: usize,
        total: usize,
        iterations: usize,
    },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub id: String,
    pub outcome: Option<EstimateOutcome>,
    pub ground_truth: Option<PoseHypothesis>,
}

/// Estimates file, one record per line:
///
/// ```text
/// estimate <id> <R, 9> <t, 3> <inliers> <total> <iterations>
/// failed <id> <reason...>
/// gt <id> <R, 9> <t, 3>
/// ```
pub fn format_estimates(records: &[EstimateRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        match &rec.outcome {
            Some(EstimateOutcome::Pose {
                pose,
                inliers,
                total,
                iterations,
            }) => {
                let _ = write!(out, "estimate {}", rec.id);
                push_pose(&mut out, &pose.rotation, &pose.translation);
                let _ = writeln!(out, " {inliers} {total} {iterations}");
            }
            Some(EstimateOutcome::Failed { reason }) => {
                let _ = writeln!(out, "failed {} {}", rec.id, reason.replace('\n', " "));
            }
            None => {}
        }
        if let Some(gt) = &rec.ground_truth {
            let _ = write!(out, "gt {}", rec.id);
            push_pose(&mut out, &gt.rotation, &gt.translation);
            out.push('\n');
        }
    }
    out
}

/// Parses an estimates file. Records sharing an id are merged; the order is
/// that of first appearance.
pub fn parse_estimates(text: &str) -> Result<Vec<EstimateRecord>, DataError> {
    let mut recs: Vec<EstimateRecord> = Vec::new();
    for (line, toks) in records(text) {
        let kind = toks[0];
        if toks.len() < 2 {
            return Err(record_err(line, format!("'{kind}' record without an id")));
        }
        let id = toks[1];
        let idx = match recs.iter().position(|r| r.id == id) {
            Some(i) => i,
            None => {
                recs.push(EstimateRecord {
                    id: id.to_string(),
                    outcome: None,
                    ground_truth: None,
                });
                recs.len() - 1
            }
        };
        let rec = &mut recs[idx];
        match kind {
            "estimate" | "failed" if rec.outcome.is_some() => {
                return Err(record_err(line, format!("pair '{id}' has two results")));
            }
            "estimate" => {
                expect_fields(line, kind, &toks, 16)?;
                let v = parse_floats(line, &toks[2..14])?;
                let pose = pose_from_values(line, &v)?;
                rec.outcome = Some(EstimateOutcome::Pose {
                    pose,
                    inliers: parse_num(line, "inlier count", toks[14])?,
                    total: parse_num(line, "correspondence count", toks[15])?,
                    iterations: parse_num(line, "iteration count", toks[16])?,
                });
            }
            "failed" => {
                rec.outcome = Some(EstimateOutcome::Failed {
                    reason: toks[2..].join(" "),
                });
            }
            "gt" => {
                expect_fields(line, kind, &toks, 13)?;
                if rec.ground_truth.is_some() {
                    return Err(record_err(line, format!("pair '{id}' has two gt records")));
                }
                let v = parse_floats(line, &toks[2..])?;
                rec.ground_truth = Some(pose_from_values(line, &v)?);
            }
            other => return Err(record_err(line, format!("unknown record type '{other}'"))),
        }
    }
    Ok(recs)
}

/// One KITTI pose: camera-to-world `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KittiPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Parses a KITTI pose file (12 row-major values of a 3×4 matrix per line).
/// Values are kept exactly as written.
pub fn parse_kitti_poses(text: &str) -> Result<Vec<KittiPose>, DataError> {
    let mut poses = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 12 {
            return Err(record_err(line, format!("KITTI pose needs 12 values, got {}", toks.len())));
        }
        let v = parse_floats(line, &toks)?;
        poses.push(KittiPose {
            rotation: Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            translation: Vector3::new(v[3], v[7], v[11]),
        });
    }
    Ok(poses)
}

pub fn load_kitti_poses(path: impl AsRef<Path>) -> Result<Vec<KittiPose>, DataError> {
    parse_kitti_poses(&read_file(path.as_ref())?)
}

pub fn format_kitti_poses(poses: &[KittiPose]) -> String {
    let mut out = String::new();
    for p in poses {
        let mut first = true;
        for i in 0..3 {
            for v in [p.rotation[(i, 0)], p.rotation[(i, 1)], p.rotation[(i, 2)], p.translation[i]] {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:.16e}");
            }
        }
        out.push('\n');
    }
    out
}

/// Motion from frame `k` to frame `k+1` in the `X' = R X + t` convention.
pub fn kitti_relative_pose(from: &KittiPose, to: &KittiPose) -> PoseHypothesis {
    let rt = to.rotation.transpose();
    PoseHypothesis::general(rt * from.rotation, rt * (from.translation - to.translation))
}

/// Errors of one estimate against its ground truth; all NaN for failures.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub rot_err_deg: f64,
    pub trans_err: f64,
    pub dir_err_deg: f64,
}

impl EvalRow {
    pub fn new(id: &str, gt: &PoseHypothesis, outcome: &EstimateOutcome) -> Self {
        match outcome {
            EstimateOutcome::Pose { pose, .. } => Self {
                id: id.to_string(),
                rot_err_deg: rotation_error(&gt.rotation, &pose.rotation),
                trans_err: translation_error(&gt.translation, &pose.translation),
                dir_err_deg: translation_direction_error(&gt.translation, &pose.translation)
                    .unwrap_or(f64::NAN),
            },
            EstimateOutcome::Failed { .. } => Self {
                id: id.to_string(),
                rot_err_deg: f64::NAN,
                trans_err: f64::NAN,
                dir_err_deg: f64::NAN,
            },
        }
    }
}

pub const EVAL_CSV_HEADER: &str = "pair,rot_err_deg,trans_err,dir_err_deg";

/// Error table with a trailing `median` row over the finite values.
pub fn format_eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{EVAL_CSV_HEADER}");
    for r in rows {
        let _ = writeln!(out, "{},{:.12e},{:.12e},{:.12e}", r.id, r.rot_err_deg, r.trans_err, r.dir_err_deg);
    }
    let col = |f: fn(&EvalRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>());
    let _ = writeln!(
        out,
        "median,{:.12e},{:.12e},{:.12e}",
        col(|r| r.rot_err_deg),
        col(|r| r.trans_err),
        col(|r| r.dir_err_deg)
    );
    out
}
