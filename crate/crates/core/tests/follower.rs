use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyframe_core::follower::*;
use skyframe_core::geometry::{Disk, Vec3};
use skyframe_core::smoother::{fit_c4_spline, optimize_spline, TrajectorySpline};

const DT: f64 = 0.02;

/// Composite Simpson of the spline speed over the whole parameter range.
fn dense_length(s: &TrajectorySpline, upto: f64, n: usize) -> f64 {
    let h = upto / n as f64;
    let f = |x: f64| s.eval(x, 1).norm();
    let mut acc = f(0.0) + f(upto);
    for k in 1..n {
        acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn circle_spline() -> TrajectorySpline {
    let pts: Vec<Vec3> = (0..9)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 8.0;
            Vec3::new(3.0 * a.cos(), 3.0 * a.sin(), 1.0)
        })
        .collect();
    fit_c4_spline(&pts)
}

#[test]
fn straight_spline_length_is_endpoint_distance() {
    let a = Vec3::new(0.0, 0.0, 1.0);
    let b = Vec3::new(3.0, 4.0, 1.0);
    let pts: Vec<Vec3> = (0..5).map(|k| a + (b - a) * (k as f64 / 4.0)).collect();
    let t = build_arc_table(&fit_c4_spline(&pts), CHORD_TOL);
    assert!((t.length - 5.0).abs() < 1e-4, "{}", t.length);
}

#[test]
fn arc_length_matches_dense_quadrature() {
    let s = circle_spline();
    let t = build_arc_table(&s, CHORD_TOL);
    let oracle = dense_length(&s, s.piece_count() as f64, 200_000);
    assert!((t.length - oracle).abs() < 1e-3, "{} vs {oracle}", t.length);
    for w in t.samples.windows(2) {
        assert!(w[1].u > w[0].u);
    }
}

#[test]
fn table_points_are_within_tolerance_of_true_arc_length() {
    let s = circle_spline();
    let t = build_arc_table(&s, CHORD_TOL);
    // Invert the dense arc length at a few parameters and compare positions.
    for k in 1..16 {
        let param = k as f64 * s.piece_count() as f64 / 16.0;
        let u = dense_length(&s, param, 20_000);
        assert!((t.point(u) - s.eval(param, 0)).norm() < 1e-3, "param {param}");
    }
}

#[test]
fn closest_u_examples() {
    let s = circle_spline();
    let t = build_arc_table(&s, CHORD_TOL);
    let w = 2.0;
    // On the curve at u_prev.
    let u0 = 1.3;
    assert!((closest_u(&t, &t.point(u0), u0, w) - u0).abs() < 1e-9);
    // Ahead on the curve: dense search oracle.
    let target = t.point(2.4) + Vec3::new(0.0, 0.0, 0.05);
    let got = closest_u(&t, &target, u0, w);
    let oracle = (0..=20_000)
        .map(|k| u0 + w * k as f64 / 20_000.0)
        .min_by(|a, b| (t.point(*a) - target).norm().total_cmp(&(t.point(*b) - target).norm()))
        .unwrap();
    assert!((got - oracle).abs() < 2e-3, "{got} vs {oracle}");
    // Behind: clamped to u_prev.
    assert_eq!(closest_u(&t, &t.point(0.5), u0, w), u0);
}

#[test]
fn advance_goal_examples() {
    let s = circle_spline();
    let t = build_arc_table(&s, CHORD_TOL);
    let (u, v, _) = advance_goal(&t, 1.0, 0.0, 0.0, DT, 2.0, 3.0);
    assert_eq!((u, v), (1.0, 0.0));
    let (mut u, mut v) = (0.0, 0.0);
    for _ in 0..200 {
        let r = advance_goal(&t, u, 1e6, v, DT, 2.0, 3.0);
        assert!(r.1 <= 2.0);
        u = r.0;
        v = r.1;
    }
    assert_eq!(v, 2.0);
    let r = advance_goal(&t, t.length - 0.01, 0.0, 2.0, DT, 2.0, 3.0);
    assert_eq!(r.0, t.length);
}

#[test]
fn static_goal_is_a_fixed_point() {
    let st = SimDroneState::at(Vec3::new(1.0, 2.0, 3.0));
    let next = simulate_step(&st, &Goal::fixed(st.position), DT, &Gains::default(), 4.0, 2.0);
    assert_eq!(next, st);
}

#[test]
fn step_response_settles_without_overshoot() {
    let mut st = SimDroneState::at(Vec3::zeros());
    let goal = Goal::fixed(Vec3::new(1.0, 0.0, 0.0));
    let mut peak: f64 = 0.0;
    let mut settle_time = None;
    for k in 1..=500 {
        st = simulate_step(&st, &goal, DT, &Gains::default(), 4.0, 2.0);
        peak = peak.max(st.position.x);
        let inside = (st.position.x - 1.0).abs() <= 0.1;
        match (inside, settle_time) {
            (true, None) => settle_time = Some(k as f64 * DT),
            (false, Some(_)) => settle_time = None,
            _ => {}
        }
    }
    assert!(peak < 1.1, "overshoot {peak}");
    assert!(settle_time.unwrap() <= 2.0, "{settle_time:?}");
    assert!((st.position.x - 1.0).abs() < 1e-6);
}

fn random_optimized_spline(rng: &mut ChaCha8Rng) -> TrajectorySpline {
    let n = rng.gen_range(4..12);
    let mut centers = vec![Vec3::new(0.0, 0.0, 1.5)];
    for _ in 1..n {
        let last = *centers.last().unwrap();
        centers.push(last + Vec3::new(rng.gen_range(0.5..1.5), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3)));
    }
    let mut disks = vec![Disk { center: centers[0], normal: Vec3::x(), radius: 0.0 }];
    for i in 1..n - 1 {
        disks.push(Disk {
            center: centers[i],
            normal: (centers[i + 1] - centers[i - 1]).normalize(),
            radius: rng.gen_range(0.1..0.6),
        });
    }
    disks.push(Disk { center: centers[n - 1], normal: Vec3::x(), radius: 0.0 });
    optimize_spline(&fit_c4_spline(&centers), &disks).spline
}

#[test]
fn user_mode_tracking_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let s = random_optimized_spline(&mut rng);
        let mut f = Follower::new(&s, FollowMode::User, 2.0, 4.0, DT);
        f.set_command(1e3);
        assert_eq!(f.command, 4.0);
        let mut st = SimDroneState::at(s.start());
        let mut prev_goal: Option<Vec3> = None;
        let mut prev_u = 0.0;
        for _ in 0..3000 {
            let (next, rep) = f.step(&st, DT);
            assert!(rep.u >= prev_u);
            assert!(next.velocity.norm() <= 2.0 + 1e-9);
            assert!(next.acceleration.norm() <= 4.0 + 1e-9);
            assert!(rep.tracking_error < 0.4, "err {} u {} L {} kappa {}", rep.tracking_error, rep.u, f.table.length, f.table.derivatives(rep.u).2.norm());
            if let Some(g) = prev_goal {
                assert!((rep.goal - g).norm() <= 2.0 * DT + CHORD_TOL, "{} u {} ug {} err {}", (rep.goal - g).norm(), rep.u, f.u_goal, rep.tracking_error);
            }
            prev_goal = Some(rep.goal);
            prev_u = rep.u;
            st = next;
        }
        assert!(f.finished());
        assert!((st.position - s.end()).norm() < 1e-2);
    }
}

#[test]
fn curvature_profile_is_flat_on_lines_and_brake_consistent() {
    let pts: Vec<Vec3> = (0..5).map(|k| Vec3::new(k as f64, 0.0, 1.0)).collect();
    let line = build_arc_table(&fit_c4_spline(&pts), CHORD_TOL);
    assert!(curvature_speed_profile(&line, 0.01, 2.0, 2.0, 2.0).iter().all(|&v| v == 2.0));

    let t = build_arc_table(&circle_spline(), CHORD_TOL);
    let h = 0.01;
    let v = curvature_speed_profile(&t, h, 5.0, 2.0, 1.0);
    assert_eq!(v.len(), (t.length / h).ceil() as usize + 1);
    for k in 0..v.len() {
        let u = (k as f64 * h).min(t.length);
        // Curvature is not defined where the spline parameter speed vanishes.
        if u > 0.05 && u < t.length - 0.05 {
            assert!(v[k] * v[k] * t.derivatives(u).2.norm() <= 2.0 + 1e-9);
        }
        if k + 1 < v.len() {
            let du = (((k + 1) as f64) * h).min(t.length) - u;
            assert!(v[k] * v[k] <= v[k + 1] * v[k + 1] + 2.0 * du + 1e-9);
        }
    }
}

#[test]
fn followers_keep_lateral_acceleration_in_budget() {
    let s = circle_spline();
    let a_lat = LATERAL_SHARE * 4.0;
    let f = Follower::new(&s, FollowMode::Timed, 10.0, 4.0, DT);
    for k in 0..2000 {
        let (u, speed, _) = f.timing.sample(k as f64 * DT);
        if u < 0.05 || u > f.table.length - 0.05 {
            continue;
        }
        let kappa = f.table.derivatives(u).2.norm();
        // Limits are taken at table rows; allow for curvature between them.
        assert!(speed * speed * kappa <= a_lat * 1.01, "u {u} speed {speed} kappa {kappa}");
    }
    let mut f = Follower::new(&s, FollowMode::User, 10.0, 4.0, DT);
    f.set_command(4.0);
    let mut st = SimDroneState::at(s.start());
    let mut peak: f64 = 0.0;
    for _ in 0..400 {
        let (next, _) = f.step(&st, DT);
        st = next;
        peak = peak.max(f.speed);
        let u = f.u_goal;
        if u > 0.05 && u < f.table.length - 0.05 {
            let kappa = f.table.derivatives(u).2.norm();
            assert!(f.speed * f.speed * kappa <= a_lat * 1.01, "u {u} speed {} kappa {kappa}", f.speed);
        }
    }
    assert!(peak > 1.0);
}

#[test]
fn timing_on_a_line_is_the_trapezoid() {
    let pts: Vec<Vec3> = (0..5).map(|k| Vec3::new(2.0 * k as f64, 0.0, 1.0)).collect();
    let t = build_arc_table(&fit_c4_spline(&pts), CHORD_TOL);
    let timing = Timing::build(&t, 0.01, 2.0, 3.0, 1.5);
    for k in 0..400 {
        let time = k as f64 * DT;
        let (u, v, _) = timing.sample(time);
        let (u_ref, v_ref, _) = timed_profile(t.length, time, 2.0, 3.0);
        assert!((u - u_ref).abs() < 2e-3 && (v - v_ref).abs() < 2e-2, "t {time}: {u} {v} vs {u_ref} {v_ref}");
    }
    let total = timed_profile(t.length, 1e9, 2.0, 3.0);
    assert_eq!(timing.sample(1e9).0, total.0);
}

#[test]
fn timed_mode_respects_limits_by_finite_differences() {
    let s = circle_spline();
    let t = build_arc_table(&s, CHORD_TOL);
    assert_eq!(follow_timed(&t, 0.0, 2.0, 3.0).position, s.start());
    assert!((follow_timed(&t, 1e3, 2.0, 3.0).position - s.end()).norm() < 1e-9);
    let u = |k: usize| timed_profile(t.length, k as f64 * DT, 2.0, 3.0).0;
    for k in 1..1000 {
        let v = (u(k + 1) - u(k)) / DT;
        let a = (u(k + 1) - 2.0 * u(k) + u(k - 1)) / (DT * DT);
        assert!(v <= 2.0 + 1e-9);
        assert!(a.abs() <= 3.0 + 1e-6);
    }
}

proptest! {
    #[test]
    fn length_is_at_least_the_endpoint_distance(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..8);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..3.0)))
            .collect();
        let s = fit_c4_spline(&pts);
        let t = build_arc_table(&s, CHORD_TOL);
        prop_assert!(t.length >= (s.end() - s.start()).norm() - 1e-9);
    }

    #[test]
    fn closest_u_is_monotone(seed in 0u64..200, u_prev in 0.0f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = build_arc_table(&circle_spline(), CHORD_TOL);
        let p = Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(0.0..2.0));
        let u = closest_u(&t, &p, u_prev, 0.8);
        prop_assert!(u >= u_prev.min(t.length) && u <= u_prev + 0.8);
    }
}
