mod common;

use common::*;
use mcpose::constraints::{build_planar_system, build_vertical_system, stacked_6dof_residuals};
use mcpose::geometry::{
    cayley_to_rotation, plucker_from_observation, qy_from_rotation_y, rot_y, rotation_to_cayley, rotation_y_from_qy,
};
use mcpose::io::{format_dataset, parse_dataset, Dataset, FramePair};
use mcpose::poly::{det_poly, real_roots, PolynomialMatrix, RootMethod, UnivariatePoly};
use mcpose::solvers::{solve_planar_2ac, solve_vertical_2ac};
use mcpose::synth::{generate_instance, rotation_error, translation_error, MotionSpec, NoiseConfig, SceneConfig};
use mcpose::{Camera, CameraRig, ImuAttitudePair, PoseHypothesis};
use nalgebra::{DVector, Matrix3, Rotation3, Unit, Vector3};
use proptest::prelude::*;

fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z).normalize())
}

fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

fn planar_pose() -> impl Strategy<Value = PoseHypothesis> {
    (-0.4..0.4f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(q, x, z)| PoseHypothesis::planar(q, x, z))
}

/// Rotation about the vertical axis, independent of the crate's own helpers.
fn yaw(angle: f64) -> Matrix3<f64> {
    axis_angle(Vector3::y(), angle)
}

proptest! {
    #[test]
    fn cayley_round_trip(axis in unit_vector(), angle in 0.0..179.0f64) {
        let r = axis_angle(axis, angle.to_radians());
        let q = rotation_to_cayley(&r, 179.5f64.to_radians()).unwrap();
        let back = cayley_to_rotation(&q);
        prop_assert!((back - r).amax() < 1e-10, "{}", (back - r).amax());
    }

    #[test]
    fn cayley_map_is_a_rotation(axis in unit_vector(), angle in 0.0..179.0f64) {
        let q = axis * (angle.to_radians() / 2.0).tan();
        let r = cayley_to_rotation(&q);
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        prop_assert!((r - axis_angle(axis, angle.to_radians())).amax() < 1e-9);
    }

    #[test]
    fn opposite_planar_rotations_cancel(q in -20.0..20.0f64) {
        let p = rotation_y_from_qy(q) * rotation_y_from_qy(-q);
        prop_assert!((p - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((qy_from_rotation_y(&rotation_y_from_qy(q)) - q).abs() < 1e-12 * (1.0 + q * q));
    }

    #[test]
    fn planar_rotation_matches_the_vertical_axis_rotation(theta in -3.0..3.0f64) {
        // the planar parameterization turns by −θ in the right-handed sense
        let r = rotation_y_from_qy((theta / 2.0).tan());
        prop_assert!((r - yaw(-theta)).amax() < 1e-12);
    }

    #[test]
    fn observation_rays_ignore_homogeneous_scale(
        x in -2.0..2.0f64, y in -2.0..2.0f64, s in 0.01..100.0f64, seed in 0u64..1000,
    ) {
        let rig = random_rig(&mut rng(seed), 2, false);
        let p = Vector3::new(x, y, 1.0);
        let a = plucker_from_observation(&rig, 1, &p).unwrap();
        let b = plucker_from_observation(&rig, 1, &(p * s)).unwrap();
        prop_assert!((a.direction - b.direction).amax() < 1e-14);
        prop_assert!((a.moment - b.moment).amax() < 1e-14);
        prop_assert!((a.direction.norm() - 1.0).abs() < 1e-15);
        prop_assert!(a.direction.dot(&a.moment).abs() < 1e-14);
    }

    #[test]
    fn translation_error_is_scale_symmetric(t in unit_vector(), norm in 0.01..100.0f64) {
        let t = t * norm;
        for lambda in [0.5f64, 1.0, 2.0] {
            let expected = 2.0 * (1.0 - lambda).abs() / (1.0 + lambda);
            prop_assert!((translation_error(&t, &(t * lambda)) - expected).abs() < 1e-14);
            prop_assert!((translation_error(&(t * lambda), &t) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn rotation_error_is_symmetric_and_matches_the_relative_angle(
        a in unit_vector(), b in unit_vector(), ang_a in 0.0..3.0f64, ang_b in 0.0..3.0f64,
    ) {
        let (ra, rb) = (axis_angle(a, ang_a), axis_angle(b, ang_b));
        let e = rotation_error(&ra, &rb);
        prop_assert!((e - rotation_error(&rb, &ra)).abs() < 1e-9);
        let expected = Rotation3::from_matrix_unchecked(ra * rb.transpose()).angle().to_degrees();
        prop_assert!((e - expected).abs() < 1e-5, "{e} vs {expected}");
    }

    #[test]
    fn planar_rows_are_scaled_constraint_residuals(seed in 0u64..10_000, pose in planar_pose()) {
        let mut r = rng(seed);
        let rig = random_rig(&mut r, 3, false);
        // correspondences of one motion, evaluated at an unrelated one
        let truth = random_planar_pose(&mut r);
        let acs = random_ac_pair(&mut r, &rig, &truth);
        let sys = build_planar_system(&rig, &acs, None).unwrap();
        let q = qy_from_rotation_y(&pose.rotation);
        let residuals = stacked_6dof_residuals(&rig, &acs, &pose).unwrap();
        let t = pose.translation;
        let scale = 1.0 + q * q;
        for row in sys.rows.iter().chain(&sys.unused) {
            let i = 3 * row.source.ac + row.source.kind.index();
            let value = row.eval(q, &t) / scale;
            let mag = row.coefficients_at(q).iter().map(|c| c.abs()).sum::<f64>() * (1.0 + t.amax()) / scale;
            prop_assert!((value - residuals[i]).abs() < 1e-9 * mag.max(1.0), "row {i}: {value} vs {}", residuals[i]);
        }
    }

    #[test]
    fn planar_system_is_invariant_to_a_vertical_change_of_rig_frame(seed in 0u64..10_000, spin in -3.0..3.0f64) {
        let mut r = rng(seed);
        let rig = random_rig(&mut r, 3, false);
        let pose = random_planar_pose(&mut r);
        let acs = random_ac_pair(&mut r, &rig, &pose);
        let g = yaw(spin);
        let turned = CameraRig::new(
            rig.cameras().iter().map(|c| Camera::new(g * c.rotation, g * c.translation)).collect(),
        ).unwrap();
        let t = g * pose.translation;
        let sys = build_planar_system(&turned, &acs, None).unwrap();
        let m = sys.matrix.eval(qy_from_rotation_y(&pose.rotation));
        let v = DVector::from_vec(vec![t.x, t.z, 1.0]);
        prop_assert!((&m * &v).norm() < 1e-9 * m.norm() * v.norm());
    }

    #[test]
    fn level_attitudes_embed_the_planar_problem(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let rig = random_rig(&mut r, 2, false);
        let pose = random_planar_pose(&mut r);
        let acs = random_ac_pair(&mut r, &rig, &pose);
        let sys = build_vertical_system(&rig, &acs, &ImuAttitudePair::default(), None).unwrap();
        let t = pose.translation;
        let m = sys.matrix.eval(qy_from_rotation_y(&pose.rotation));
        let v = DVector::from_vec(vec![t.x, 0.0, t.z, 1.0]);
        prop_assert!(t.y == 0.0);
        prop_assert!((&m * &v).norm() < 1e-9 * m.norm() * v.norm());
    }

    #[test]
    fn solver_hypotheses_are_bounded_and_valid(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let rig = random_rig(&mut r, 3, false);
        let pose = random_general_pose(&mut r);
        let att = attitudes_for(&mut r, &pose);
        let [a, b] = random_ac_pair(&mut r, &rig, &pose);
        let vertical = solve_vertical_2ac(&rig, &a, &b, &att).unwrap();
        prop_assert!(vertical.len() <= 6);
        let flat = random_planar_pose(&mut r);
        let [a, b] = random_ac_pair(&mut r, &rig, &flat);
        let planar = solve_planar_2ac(&rig, &a, &b).unwrap();
        prop_assert!(planar.len() <= 4);
        for h in vertical.hypotheses.iter().chain(&planar.hypotheses) {
            prop_assert!(h.satisfies_invariants(1e-9));
        }
        for d in vertical.diagnostics.iter().chain(&planar.diagnostics) {
            prop_assert!(d.back_substitution_residual < 1e-6);
        }
    }

    #[test]
    fn generated_scenes_satisfy_the_constraints(seed in 0u64..100_000, vertical in any::<bool>()) {
        let motion = if vertical { MotionSpec::vertical() } else { MotionSpec::planar() };
        let inst = generate_instance(&SceneConfig::default(), &motion, &NoiseConfig::default(), seed).unwrap();
        let res = stacked_6dof_residuals(&inst.rig, &inst.acs, &inst.pose).unwrap();
        prop_assert!(res.iter().all(|v| v.abs() < 1e-8));
    }
}

fn quadratic() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

fn poly_matrix(n: usize) -> impl Strategy<Value = PolynomialMatrix> {
    proptest::collection::vec(proptest::collection::vec(quadratic(), n), n)
        .prop_map(move |rows| PolynomialMatrix::from_quadratics(n, &rows).unwrap())
}

/// Product of row norms, a bound on `|det|` that sets the rounding scale.
fn hadamard(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).product()
}

proptest! {
    #[test]
    fn symbolic_determinant_matches_numeric(m3 in poly_matrix(3), m4 in poly_matrix(4), q in -5.0..5.0f64) {
        for m in [m3, m4] {
            let p = det_poly(&m);
            prop_assert!(p.degree().unwrap_or(0) <= 2 * m.dim());
            let numeric = m.eval(q);
            let bound = hadamard(&numeric);
            prop_assert!((p.eval(q) - numeric.determinant()).abs() <= 1e-10 * bound.max(1e-300), "{} vs {}", p.eval(q), numeric.determinant());
        }
    }

    #[test]
    fn real_roots_are_roots(coeffs in proptest::collection::vec(-10.0..10.0f64, 3..=7), sturm in any::<bool>()) {
        // a leading coefficient of at least 1 keeps every root inside the
        // Cauchy bound of 11; far larger roots cannot meet the residual bound
        // in double precision
        prop_assume!(coeffs.last().unwrap().abs() >= 1.0);
        let p = UnivariatePoly::new(coeffs);
        let method = if sturm { RootMethod::SturmBisection } else { RootMethod::CompanionMatrix };
        let set = real_roots(&p, method).unwrap();
        prop_assert!(set.len() <= p.degree().unwrap());
        prop_assert!(set.roots.windows(2).all(|w| w[0] <= w[1]));
        for r in &set.roots {
            prop_assert!(p.eval(*r).abs() / p.scale() <= 1e-7, "p({r}) = {}", p.eval(*r));
        }
    }
}

/// Polynomial with the given real roots times a factor with the complex
/// roots `re ± i·im` for each pair, scaled by `lead`.
fn with_roots(real: &[f64], complex: &[(f64, f64)], lead: f64) -> UnivariatePoly {
    let mut coeffs = UnivariatePoly::from_roots(real).coeffs().to_vec();
    for (re, im) in complex {
        let factor = [re * re + im * im, -2.0 * re, 1.0];
        let mut next = vec![0.0; coeffs.len() + 2];
        for (i, c) in coeffs.iter().enumerate() {
            for (j, f) in factor.iter().enumerate() {
                next[i + j] += c * f;
            }
        }
        coeffs = next;
    }
    UnivariatePoly::new(coeffs.into_iter().map(|c| c * lead).collect())
}

fn separated_roots(count: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0..3.0f64, count).prop_filter("well separated", |v| {
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).all(|w| w[1] - w[0] > 0.1)
    })
}

fn root_case() -> impl Strategy<Value = (Vec<f64>, Vec<(f64, f64)>, f64)> {
    (prop_oneof![Just(4usize), Just(6usize)], 0usize..=3, 0.1..10.0f64, any::<bool>()).prop_flat_map(
        |(degree, pairs, lead, neg)| {
            let pairs = pairs.min(degree / 2);
            (
                separated_roots(degree - 2 * pairs),
                proptest::collection::vec((-2.0..2.0f64, 0.3..2.0f64), pairs),
                Just(if neg { -lead } else { lead }),
            )
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn root_methods_agree_on_quartics_and_sextics((real, complex, lead) in root_case()) {
        let p = with_roots(&real, &complex, lead);
        let c = real_roots(&p, RootMethod::CompanionMatrix).unwrap();
        let s = real_roots(&p, RootMethod::SturmBisection).unwrap();
        let mut expected = real.clone();
        expected.sort_by(f64::total_cmp);
        prop_assert_eq!(c.len(), expected.len());
        prop_assert_eq!(s.len(), expected.len());
        for ((a, b), e) in c.roots.iter().zip(&s.roots).zip(&expected) {
            prop_assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            prop_assert!((a - e).abs() < 1e-7, "{a} vs {e}");
        }
    }
}

fn dataset_from(seed: u64, pairs: usize) -> Dataset {
    let scene = SceneConfig { outlier_ratio: 0.2, ..SceneConfig::default() };
    let mut out = None::<Dataset>;
    for i in 0..pairs {
        let inst = generate_instance(&scene, &MotionSpec::vertical(), &NoiseConfig::image(1.0), seed + i as u64).unwrap();
        let mut pair = FramePair::new(format!("p{i}"));
        pair.acs = inst.acs;
        pair.ground_truth = Some(inst.pose);
        if i % 2 == 0 {
            let snap = |a: mcpose::ImuAttitude| {
                mcpose::ImuAttitude::new(mcpose::io::representable_angle(a.roll), mcpose::io::representable_angle(a.pitch))
            };
            pair.attitudes = Some(ImuAttitudePair::new(snap(inst.attitudes.frame_k), snap(inst.attitudes.frame_k1)));
        }
        out.get_or_insert_with(|| Dataset { rig: inst.rig, pairs: Vec::new() }).pairs.push(pair);
    }
    out.unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_text_round_trips(seed in 0u64..1_000_000, pairs in 1usize..4) {
        let ds = dataset_from(seed, pairs);
        let text = format_dataset(&ds);
        let parsed = parse_dataset(&text).unwrap();
        prop_assert_eq!(&parsed, &ds);
        prop_assert_eq!(format_dataset(&parsed), text);
    }

    #[test]
    fn loading_rejects_rotations_outside_the_repair_band(seed in 0u64..1_000_000, eps in 1e-5..1e-2f64) {
        let ds = dataset_from(seed, 1);
        let text = format_dataset(&ds);
        let gt = text.lines().find(|l| l.starts_with("gt ")).unwrap();
        let mut fields: Vec<String> = gt.split_whitespace().map(String::from).collect();
        let r00: f64 = fields[1].parse().unwrap();
        fields[1] = format!("{:.16e}", r00 + eps);
        let bad = text.replace(gt, &fields.join(" "));
        prop_assert!(parse_dataset(&bad).is_err());
    }
}

#[test]
fn yaw_of_the_planar_pose_is_the_vertical_axis_rotation() {
    let p = PoseHypothesis::planar_from_angles(0.3, 0.1, 2.0);
    assert!((p.rotation - rot_y(-0.3)).amax() < 1e-15);
    assert!((p.rotation - yaw(-0.3)).amax() < 1e-15);
    assert_eq!(p.translation, Vector3::new(2.0 * 0.1f64.sin(), 0.0, -2.0 * 0.1f64.cos()));
}
