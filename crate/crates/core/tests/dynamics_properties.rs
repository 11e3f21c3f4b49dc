use std::f64::consts::PI;

use nalgebra::Vector2;
use proptest::prelude::*;

mod common;

use common::oracle_mode;
use pushcraft::dynamics::*;

fn params() -> PhysicalParams {
    PhysicalParams::default()
}

fn face() -> impl Strategy<Value = ContactFace> {
    prop::sample::select(ContactFace::ALL.to_vec())
}

/// States clustered around the contact band so every mode shows up.
fn near_contact_state(face: ContactFace) -> impl Strategy<Value = SystemState> {
    (
        -0.3..0.3f64,
        -0.3..0.3f64,
        -PI..PI,
        -0.08..-0.05f64,
        -0.07..0.07f64,
        -0.2..0.2f64,
        -0.2..0.2f64,
    )
        .prop_map(move |(x, y, th, px, py, vn, vt)| {
            let rot = rotation2(face.theta_f());
            SystemState {
                pose: SliderPose::new(x, y, th),
                contact: rot * Vector2::new(px, py),
                velocity: rot * Vector2::new(vn, vt),
            }
        })
}

fn state_on_face() -> impl Strategy<Value = (ContactFace, SystemState)> {
    face().prop_flat_map(|f| near_contact_state(f).prop_map(move |s| (f, s)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn exactly_one_mode_matches_the_decision_list((face, state) in state_on_face()) {
        let p = params();
        let mode = classify_mode(&state, face, &p);
        let v = face_frame_velocity(&state, face);
        let q = face_frame_contact(&state, face);
        let separated = v.x <= 0.0
            || q.x.abs() > p.contact_offset() + 1e-4
            || q.y.abs() > p.r_s + 1e-4;
        let cone = motion_cone_bounds(&q, &p).unwrap();
        let up = !separated && v.y > cone.gamma_up * v.x;
        let dn = !separated && !up && v.y < cone.gamma_dn * v.x;
        let stick = !separated && !up && !dn;
        let holds = [stick, up, dn, separated];
        prop_assert_eq!(holds.iter().filter(|h| **h).count(), 1);
        let expected = [
            InteractionMode::Sticking,
            InteractionMode::SlidingUp,
            InteractionMode::SlidingDown,
            InteractionMode::Separation,
        ][holds.iter().position(|h| *h).unwrap()];
        prop_assert_eq!(mode, expected);
        prop_assert_eq!(mode, oracle_mode(&state, face, &p));
    }

    #[test]
    fn cone_is_mirror_symmetric(px in -0.066..0.066f64, py in -0.0601..0.0601f64, mu in 0.0..1.0f64) {
        let p = PhysicalParams { mu_p: mu, ..params() };
        let a = motion_cone_bounds(&Vector2::new(px, py), &p).unwrap();
        let b = motion_cone_bounds(&Vector2::new(px, -py), &p).unwrap();
        prop_assert!((a.gamma_dn + b.gamma_up).abs() <= 1e-10);
        prop_assert!(a.gamma_up >= a.gamma_dn);
    }

    #[test]
    fn separation_leaves_the_slider_in_place(
        (face, mut state) in state_on_face(),
        u in prop::array::uniform2(-1.0..1.0f64),
        steps in 1usize..20,
    ) {
        let p = params();
        // pull away from the face so the pusher stays separated
        let n = rotation2(face.theta_f()) * Vector2::new(-1.0, 0.0);
        state.velocity = n * 0.05;
        let u = ControlInput::new(n.x * u[0].abs(), n.y * u[0].abs());
        let pose = state.pose;
        for _ in 0..steps {
            let (next, mode) = step(&state, &u, face, &p).unwrap();
            prop_assert_eq!(mode, InteractionMode::Separation);
            prop_assert_eq!(next.pose, pose);
            state = next;
        }
    }

    #[test]
    fn sticking_keeps_the_contact_point(
        face in face(),
        py in -0.03..0.03f64,
        vn in 0.01..0.1f64,
        frac in -0.9..0.9f64,
        theta in -PI..PI,
    ) {
        let p = params();
        let rot = rotation2(face.theta_f());
        let q = Vector2::new(-p.contact_offset(), py);
        let cone = motion_cone_bounds(&q, &p).unwrap();
        // tangential speed strictly inside the cone
        let mid = 0.5 * (cone.gamma_up + cone.gamma_dn);
        let half = 0.5 * (cone.gamma_up - cone.gamma_dn);
        let vt = (mid + frac * half) * vn;
        let mut state = SystemState {
            pose: SliderPose::new(0.0, 0.0, theta),
            contact: rot * q,
            velocity: rot * Vector2::new(vn, vt),
        };
        let start = face_frame_contact(&state, face);
        for _ in 0..20 {
            let (next, mode) = step(&state, &ControlInput::zero(), face, &p).unwrap();
            if mode != InteractionMode::Sticking {
                break;
            }
            prop_assert!((face_frame_contact(&next, face) - start).norm() <= 1e-9);
            state = next;
        }
    }

    #[test]
    fn rotations_are_orthonormal(a in -50.0..50.0f64) {
        let r = rotation2(a);
        prop_assert!((r.transpose() * r - nalgebra::Matrix2::identity()).norm() <= 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn step_keeps_angle_wrapped((face, state) in state_on_face(), u in prop::array::uniform2(-1.0..1.0f64)) {
        let (next, _) = step(&state, &ControlInput::from(u), face, &params()).unwrap();
        prop_assert!((-PI..=PI).contains(&next.pose.theta));
    }

    #[test]
    fn step_reports_the_classified_mode((face, state) in state_on_face()) {
        let p = params();
        let (_, mode) = step(&state, &ControlInput::zero(), face, &p).unwrap();
        prop_assert_eq!(mode, classify_mode(&state, face, &p));
    }

    #[test]
    fn state_json_round_trips((_, state) in state_on_face()) {
        let json = serde_json::to_string(&state).unwrap();
        let back: SystemState = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, state);
    }
}

/// Mean distance from the center over a uniform square footprint, by
/// midpoint quadrature.
#[test]
fn limit_surface_constant_matches_quadrature() {
    let r_s = 0.06;
    let n = 800;
    let h = 2.0 * r_s / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = -r_s + (i as f64 + 0.5) * h;
            let y = -r_s + (j as f64 + 0.5) * h;
            sum += (x * x + y * y).sqrt();
        }
    }
    let quadrature = sum / (n * n) as f64;
    assert!((params().c - quadrature).abs() < 1e-6, "{} vs {quadrature}", params().c);
    assert!((quadrature - 0.0459).abs() < 5e-5);
}

#[test]
fn head_on_cone_value() {
    // γ_up at p = (-0.065, 0): μ(c² + p_x²)/c²
    let p = params();
    let c2 = p.c * p.c;
    let expected = 0.3 * (c2 + 0.065 * 0.065) / c2;
    let cone = motion_cone_bounds(&Vector2::new(-0.065, 0.0), &p).unwrap();
    assert!((cone.gamma_up - expected).abs() < 1e-12);
    assert!((cone.gamma_up - 0.9016).abs() < 1e-3);
    assert!((cone.gamma_dn + expected).abs() < 1e-12);
}
