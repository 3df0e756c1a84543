use std::sync::OnceLock;

use mixed_junction::geometry::{build_intersection, IntersectionModel, IntersectionSpec, PathGeometry, Turn};
use mixed_junction::kinematics::{
    advance_on_path, step_av, step_hv, unicycle_step, ControlInput, Envelope, VehicleState,
};
use mixed_junction::verify::kinematics_fidelity;
use mixed_junction::Params;
use proptest::prelude::*;

fn path(turn: Turn) -> &'static PathGeometry {
    static MODEL: OnceLock<IntersectionModel> = OnceLock::new();
    let model = MODEL.get_or_init(|| build_intersection(&IntersectionSpec::four_way(), &Params::default()).unwrap());
    model.paths.iter().find(|p| p.turn == turn).unwrap()
}

fn hv_env() -> Envelope {
    let p = Params::default();
    Envelope { v_max: p.v_max, a_min: p.a_min_hv, a_max: p.a_max, rho_min: p.rho_min }
}

#[test]
fn closed_form_matches_rk4() {
    let r = kinematics_fidelity(1000, &Params::default(), 11);
    assert!(r.max_rk4_error < 1e-6, "{r:?}");
    assert!(r.max_continuity_error < 1e-6, "{r:?}");
}

#[test]
fn hv_constant_speed_and_ramp() {
    let p = path(Turn::Straight);
    let start = VehicleState::on_path(p, 0.0, 8.0);
    let (end, samples) = step_hv(p, &start, &[0.0; 10], 0.05, &hv_env()).unwrap();
    assert!((end.s - 4.0).abs() < 1e-12);
    assert_eq!(samples.len(), 10);

    let start = VehicleState::on_path(p, 0.0, 10.0);
    let (end, _) = step_hv(p, &start, &[-4.0; 10], 0.05, &hv_env()).unwrap();
    assert!((end.s - 4.5).abs() < 1e-12);
    assert!((end.v - 8.0).abs() < 1e-12);
}

#[test]
fn hv_rejects_harder_braking_than_allowed() {
    let p = path(Turn::Straight);
    let start = VehicleState::on_path(p, 0.0, 10.0);
    assert!(step_hv(p, &start, &[-6.0; 10], 0.05, &hv_env()).is_err());
    assert!(step_hv(p, &start, &[], 0.05, &hv_env()).is_err());
}

#[test]
fn hv_brakes_to_standstill_mid_step() {
    let p = path(Turn::Straight);
    let start = VehicleState::on_path(p, 10.0, 0.1);
    let (end, _) = step_hv(p, &start, &[-4.0], 0.05, &hv_env()).unwrap();
    assert_eq!(end.v, 0.0);
    assert!((end.s - 10.0 - 0.1 * 0.1 / 8.0).abs() < 1e-15);
}

#[test]
fn heading_change_on_arc() {
    let p = path(Turn::Left);
    let arc = p.segments.iter().enumerate().find(|(_, s)| s.curvature != 0.0).unwrap();
    let start_s: f64 = p.segments[..arc.0].iter().map(|s| s.length).sum();
    let (v, h) = (6.0, 0.5);
    let state = VehicleState::on_path(p, start_s, v);
    let end = advance_on_path(p, &state, v, h);
    let expected = v * h * arc.1.curvature;
    assert!((end.theta - state.theta - expected).abs() < 1e-9);
}

#[test]
fn av_step_examples() {
    let env = Envelope { v_max: 14.0, a_min: -8.0, a_max: 3.0, rho_min: 5.0 };
    let state = VehicleState { x: 0.0, y: 0.0, theta: 0.0, v: 10.0, s: 0.0, v_prev: 10.0, path: 0 };
    let next = step_av(&state, ControlInput { v_cmd: 10.0, omega: 2.0 }, 0.5, &env).unwrap();
    assert!((next.x - 5.0 * 1f64.sin()).abs() < 1e-12);
    assert!((next.y - 10.0 * 0.5f64.sin().powi(2)).abs() < 1e-12);
    assert!(step_av(&state, ControlInput { v_cmd: 10.0, omega: 3.0 }, 0.5, &env).is_err(), "yaw-rate limit");
    assert!(step_av(&state, ControlInput { v_cmd: 12.0, omega: 0.0 }, 0.5, &env).is_err(), "acceleration limit");
}

proptest! {
    #[test]
    fn on_rails_motion_stays_on_centerline(turn in prop_oneof![Just(Turn::Left), Just(Turn::Right), Just(Turn::Straight)],
                                           s0 in 0.0..100.0f64, v in 0.0..14.0f64) {
        let p = path(turn);
        let state = VehicleState::on_path(p, s0, v);
        let end = advance_on_path(p, &state, v, 0.5);
        let on_line = p.point_at(end.s);
        prop_assert!((end.x - on_line.x).hypot(end.y - on_line.y) <= 1e-6);
    }

    #[test]
    fn valid_hv_profiles_keep_speed_in_range(v0 in 0.0..14.0f64, accels in prop::collection::vec(-4.0..3.0f64, 10)) {
        let p = path(Turn::Straight);
        let start = VehicleState::on_path(p, 0.0, v0);
        let env = hv_env();
        // Clip accelerations that would overshoot the speed limit.
        let mut v = v0;
        let accels: Vec<f64> = accels.iter().map(|&a| { let a = a.min((env.v_max - v) / 0.05); v = (v + a * 0.05).max(0.0); a }).collect();
        let (_, samples) = step_hv(p, &start, &accels, 0.05, &env).unwrap();
        for s in samples {
            prop_assert!((0.0..=env.v_max).contains(&s.v));
        }
    }

    #[test]
    fn zero_yaw_rate_limit_is_continuous(v in 0.0..14.0f64, theta in -3.0..3.0f64, w in -1e-9..1e-9f64) {
        let pose = mixed_junction::geometry::Pose { x: 1.0, y: -2.0, theta };
        let a = unicycle_step(pose, v, w, 0.5);
        let b = unicycle_step(pose, v, 0.0, 0.5);
        prop_assert!(a.point().distance(b.point()) < 1e-6);
    }
}
