use std::f64::consts::PI;
use std::sync::Arc;

use dynobj::metrics::{count_direction_changes, rms, DIRECTION_HYSTERESIS};
use dynobj::model::{discretize_rk4, rollout, ControlInput, ModelParams, VehicleState};
use dynobj::path::{wrap_angle, Corridor, Direction, ReferencePath};
use dynobj::sim::corridor_violation;
use dynobj::weights::{build_schedule, ObjectiveMode, WeightConfig};
use proptest::prelude::*;

fn wavy_path() -> ReferencePath {
    let pts: Vec<(f64, f64)> = (0..=30)
        .map(|i| (i as f64, 1.5 * (0.2 * i as f64).sin()))
        .collect();
    ReferencePath::from_waypoints(&pts, Direction::Forward).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn wrapped_angles_stay_in_half_open_interval(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let turns = (a - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn rms_scales_with_the_signal(
        values in prop::collection::vec(-10.0f64..10.0, 1..50),
        c in -5.0f64..5.0,
    ) {
        let base = rms(values.iter().copied());
        let scaled = rms(values.iter().map(|v| c * v));
        prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
    }

    #[test]
    fn direction_changes_ignore_positive_scaling(
        values in prop::collection::vec(-2.0f64..2.0, 0..80),
        c in 1.0f64..10.0,
    ) {
        // Scaling up never hides a sign change that cleared the hysteresis.
        let base = count_direction_changes(values.iter().copied(), DIRECTION_HYSTERESIS);
        let scaled = count_direction_changes(values.iter().map(|v| c * v), DIRECTION_HYSTERESIS);
        prop_assert!(scaled >= base);
        prop_assert_eq!(
            count_direction_changes(values.iter().map(|v| -v), DIRECTION_HYSTERESIS),
            base
        );
    }

    #[test]
    fn projection_recovers_progress_of_offset_points(theta in 1.0f64..28.0, offset in -0.5f64..0.5) {
        let path = wavy_path();
        let r = path.eval(theta);
        let (x, y) = (r.x - offset * r.phi.sin(), r.y + offset * r.phi.cos());
        let p = path.project_in_window(x, y, theta - 1.0, theta + 1.0);
        // Heading and position are interpolated separately, so the normal
        // taken from the heading is only nearly perpendicular to the curve.
        prop_assert!((p.theta - theta).abs() < 1e-3 * offset.abs() + 1e-8, "{} vs {}", p.theta, theta);
    }

    #[test]
    fn violation_is_zero_inside_and_grows_outside(theta in 1.0f64..28.0, offset in -3.0f64..3.0) {
        let path = wavy_path();
        let corridor = Corridor::constant(-1.0, 1.0).unwrap();
        let r = path.eval(theta);
        let (x, y) = (r.x - offset * r.phi.sin(), r.y + offset * r.phi.cos());
        let v = corridor_violation(&path, &corridor, x, y, theta);
        let want = (offset.abs() - 1.0).max(0.0);
        prop_assert!((v - want).abs() < 1e-9, "{} vs {}", v, want);
    }

    #[test]
    fn rollout_respects_bounded_speed_and_steering(
        a in prop::collection::vec(-1.0f64..1.0, 30),
        dd in prop::collection::vec(-0.5f64..0.5, 30),
    ) {
        // Inputs inside their boxes move speed and steering by at most one
        // step's worth per stage.
        let p = ModelParams::default();
        let inputs: Vec<ControlInput> = a.iter().zip(&dd).map(|(&a, &d)| ControlInput::new(a, d, 0.5)).collect();
        let states = rollout(&VehicleState::default(), &inputs, &p);
        for w in states.windows(2) {
            prop_assert!((w[1].v - w[0].v).abs() <= p.dt * 1.0 + 1e-12);
            prop_assert!((w[1].delta - w[0].delta).abs() <= p.dt * 0.5 + 1e-12);
            prop_assert!((w[1].theta - w[0].theta - 0.5 * p.dt).abs() < 1e-12);
        }
        let last = discretize_rk4(&states[29], &inputs[29], &p);
        prop_assert_eq!(last, states[30]);
    }

    #[test]
    fn beyond_goal_schedules_split_at_the_path_end(start in 0.0f64..29.0, rate in 0.0f64..2.0) {
        let path = Arc::new(wavy_path());
        let theta_e = path.theta_end();
        let end = path.eval(theta_e);
        let goal = path
            .project_goal(dynobj::path::Pose::new(end.x + 2.0 * end.phi.cos(), end.y + 2.0 * end.phi.sin(), end.phi))
            .unwrap();
        let thetas: Vec<f64> = (0..70).map(|k| start + rate * 0.1 * k as f64).collect();
        let cfg = WeightConfig::default();
        let s = build_schedule(&thetas, start, &path, Some(&goal), &cfg).unwrap();
        for (w, &theta) in s.stages.iter().zip(&thetas) {
            let cartesian = theta >= theta_e;
            prop_assert_eq!(w.mode == ObjectiveMode::Cartesian, cartesian);
            if cartesian {
                prop_assert!(w.q_l == 0.0 && w.q_c == 0.0 && w.gamma == 0.0 && !w.frenet_active);
            }
        }
    }
}
