use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyframe_core::camera::{project, CameraFrame, CameraIntrinsics, DroneConfig, Screen};
use skyframe_core::dts::{build_surface, camera_region, CameraRegion, DtsSurface, SurfaceType, Target};
use skyframe_core::geometry::{Aabb, Obstacle, Sphere};
use skyframe_core::manipulators::*;
use skyframe_core::orientation::initial_orientation;
use skyframe_core::Vec3;

fn level_pair(rng: &mut ChaCha8Rng) -> (Target, Target) {
    let a = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.2);
    let yaw: f64 = rng.gen_range(-3.0..3.0);
    let d: f64 = rng.gen_range(1.0..3.0);
    let b = a + Vec3::new(yaw.cos() * d, yaw.sin() * d, 0.0);
    (Target::new(a), Target::new(b))
}

/// Screen positions produced by the look-at orientation, which has zero roll.
fn current_framing(surface: &DtsSurface, chart: (f64, f64), intr: &CameraIntrinsics) -> [Screen; 2] {
    let w = surface.dts_to_world(chart.0, chart.1);
    let ta = surface.target_a.position;
    let tb = surface.target_b.unwrap().position;
    let (yaw, tilt, _) = initial_orientation(&w, &[ta, tb]).unwrap();
    let c = DroneConfig::looking(w, yaw, tilt);
    [
        project(&c, intr, &ta).unwrap().screen,
        project(&c, intr, &tb).unwrap().screen,
    ]
}

fn random_chart(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let theta: f64 = rng.gen_range(0.05..0.95) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    (rng.gen_range(-0.8..0.8), theta)
}

/// Chart point on the torus part of the surface, where the subtended angle
/// equals alpha and a framing can be realized exactly.
fn torus_chart(s: &DtsSurface, rng: &mut ChaCha8Rng) -> Option<(f64, f64)> {
    let seams = s.seam_thetas();
    if seams.len() < 2 {
        return None;
    }
    let (lo, hi) = (seams[0] + 0.02, seams[1] - 0.02);
    let theta: f64 = rng.gen_range(lo..hi) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    Some((rng.gen_range(-0.8..0.8), theta))
}

#[test]
fn current_framing_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ctx = ManipContext::default();
    for _ in 0..50 {
        let (a, b) = level_pair(&mut rng);
        let s = build_surface(&a, Some(&b), rng.gen_range(0.3..1.2), 0.5).unwrap();
        let Some(start) = torus_chart(&s, &mut rng) else { continue };
        let f0 = current_framing(&s, start, &ctx.intrinsics);
        let r = manipulate_position(&s, start, &f0, &ctx).unwrap();
        let (phi, theta) = r.chart.unwrap();
        assert!((phi - start.0).abs() < 1e-3 && (theta - start.1).abs() < 1e-3, "{start:?} -> {phi},{theta}");
        assert!(r.roll < 1e-6);
    }
}

#[test]
fn position_manipulation_is_reversible_and_region_confined() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ctx = ManipContext {
        floor: Some(0.0),
        ceiling: Some(4.0),
        ..Default::default()
    };
    let mut failures = 0;
    for _ in 0..200 {
        let (a, b) = level_pair(&mut rng);
        let s = build_surface(&a, Some(&b), rng.gen_range(0.4..1.0), 0.5).unwrap();
        let Some(start) = torus_chart(&s, &mut rng) else { continue };
        let f0 = current_framing(&s, start, &ctx.intrinsics);
        let f1 = [
            f0[0] + Screen::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
            f0[1] + Screen::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
        ];
        let fwd = manipulate_position(&s, start, &f1, &ctx).unwrap();
        let region = camera_region(start.1);
        assert_eq!(camera_region(fwd.chart.unwrap().1), region);
        let back = manipulate_position(fwd.surface.as_ref().unwrap(), fwd.chart.unwrap(), &f0, &ctx).unwrap();
        let (phi, theta) = back.chart.unwrap();
        if (phi - start.0).abs() > 1e-3 || (theta - start.1).abs() > 1e-3 {
            failures += 1;
            eprintln!("start {start:?} fwd {:?} back ({phi}, {theta}) roll {}", fwd.chart, back.roll);
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn solution_roll_beats_dense_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ctx = ManipContext::default();
    for _ in 0..10 {
        let (a, b) = level_pair(&mut rng);
        let s = build_surface(&a, Some(&b), 0.7, 0.5).unwrap();
        let start = random_chart(&mut rng);
        let f0 = current_framing(&s, start, &ctx.intrinsics);
        let f1 = [f0[0] + Screen::new(0.05, -0.04), f0[1] + Screen::new(-0.03, 0.06)];
        let r = manipulate_position(&s, start, &f1, &ctx).unwrap();
        let target = r.surface.clone().unwrap();
        let ts = [a.position, b.position];
        let curve = build_search_curve(camera_region(start.1), start, None, None);
        let n = 10_000 / curve.segments.len();
        let oracle = curve
            .sample(n)
            .into_iter()
            .map(|p| {
                let w = target.dts_to_world(p.0, p.1);
                roll_for_viewpoint(&w, &f1, &ts, &ctx.intrinsics).unwrap().abs()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.roll <= oracle + 1e-4, "{} vs {}", r.roll, oracle);
    }
}

#[test]
fn roll_matches_free_rotation_oracle() {
    // Oracle: for a position on the surface implied by the framing, fit a
    // full rotation (yaw, tilt, roll) by Gauss-Newton and read its roll.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let intr = CameraIntrinsics::default();
    for _ in 0..100 {
        let (a, b) = level_pair(&mut rng);
        let screens = [
            Screen::new(rng.gen_range(-0.8..-0.1), rng.gen_range(-0.6..0.6)),
            Screen::new(rng.gen_range(0.1..0.8), rng.gen_range(-0.6..0.6)),
        ];
        let alpha = framing_alpha(&intr, &screens);
        let s = build_surface(&a, Some(&b), alpha, 0.3).unwrap();
        let Some((phi, theta)) = torus_chart(&s, &mut rng) else { continue };
        let w = s.dts_to_world(phi, theta);
        let ts = [a.position, b.position];
        let roll = roll_for_viewpoint(&w, &screens, &ts, &intr).unwrap();

        let err = |p: &[f64; 3]| -> Vec<f64> {
            let f = CameraFrame::from_angles(p[0], p[1], p[2]);
            let mut r = Vec::new();
            for (t, sc) in ts.iter().zip(&screens) {
                let pr = skyframe_core::camera::project_with_frame(&w, &f, &intr, t).unwrap();
                r.push(pr.screen.x - sc.x);
                r.push(pr.screen.y - sc.y);
                r.push(if pr.behind { 10.0 } else { 0.0 });
            }
            r
        };
        let cost = |p: &[f64; 3]| -> f64 { err(p).iter().map(|v| v * v).sum() };
        let (y0, t0, _) = initial_orientation(&w, &ts).unwrap();
        let mut best = ([y0, t0, 0.0], f64::INFINITY);
        for k0 in 0..12 {
            let mut p = [y0, t0, -3.0 + 0.5 * k0 as f64];
            let mut f = cost(&p);
            let mut mu = 1e-3;
            for _ in 0..300 {
                let r = err(&p);
                let mut jm = nalgebra::DMatrix::zeros(6, 3);
                for k in 0..3 {
                    let mut q = p;
                    q[k] += 1e-7;
                    let rq = err(&q);
                    for i in 0..6 {
                        jm[(i, k)] = (rq[i] - r[i]) / 1e-7;
                    }
                }
                let rv = nalgebra::DVector::from_vec(r);
                let jtj = jm.transpose() * &jm;
                let g = jm.transpose() * rv;
                let mut accepted = false;
                for _ in 0..20 {
                    let damped = &jtj + nalgebra::DMatrix::identity(3, 3) * mu;
                    let step = damped.lu().solve(&(-&g)).unwrap();
                    let q = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
                    let fq = cost(&q);
                    if fq < f {
                        p = q;
                        f = fq;
                        mu = (mu * 0.3).max(1e-15);
                        accepted = true;
                        break;
                    }
                    mu *= 10.0;
                }
                if !accepted || f < 1e-26 {
                    break;
                }
            }
            if f < best.1 {
                best = (p, f);
            }
        }
        assert!(best.1 < 1e-14, "oracle did not converge {}", best.1);
        let got = CameraFrame::from_angles(best.0[0], best.0[1], best.0[2]).roll();
        assert!((roll - got).abs() < 1e-3, "{roll} vs {got}");
    }
}

#[test]
fn orbit_is_reversible_and_uses_plane_cap_for_type1() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ctx = ManipContext::default();
    let (a, b) = level_pair(&mut rng);
    let s = build_surface(&a, Some(&b), 0.4, 0.3).unwrap();
    assert_eq!(s.kind, SurfaceType::Type1);
    let framing = [Screen::new(-0.3, 0.0), Screen::new(0.3, 0.0)];
    let same = manipulate_view_angle(&s, (0.2, 0.4), (0.0, 0.0), &framing, &ctx).unwrap();
    assert_eq!(same.chart, Some((0.2, 0.4)));
    for _ in 0..100 {
        let start = random_chart(&mut rng);
        let d = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        let fwd = manipulate_view_angle(&s, start, d, &framing, &ctx).unwrap();
        if fwd.clamped {
            continue;
        }
        let back = manipulate_view_angle(&s, fwd.chart.unwrap(), (-d.0, -d.1), &framing, &ctx).unwrap();
        let (p, t) = back.chart.unwrap();
        assert!((p - start.0).abs() < 1e-6 && (t - start.1).abs() < 1e-6);
    }
    let end = manipulate_view_angle(&s, (0.0, 0.9), (0.0, 0.2), &framing, &ctx).unwrap();
    assert!(end.clamped);
    let surf = end.surface.unwrap();
    assert_eq!(surf.kind, SurfaceType::Type3);
    // The plane cap sits at -(r - AB/2) along the axis behind A.
    let near_end = surf.dts_to_world(0.0, 0.99);
    let axis = (b.position - a.position).normalize();
    let x = (near_end - a.position).dot(&axis);
    assert_relative_eq!(x, -(surf.toric_radius - surf.distance_ab().unwrap() / 2.0), epsilon = 1e-9);
}

#[test]
fn ceiling_hugging_start_skirts_the_ellipse() {
    let a = Target::new(Vec3::new(0.0, 0.0, 1.5));
    let b = Target::new(Vec3::new(2.0, 0.0, 1.5));
    let s = build_surface(&a, Some(&b), 0.6, 0.5).unwrap();
    let ceiling = plane_ellipse(&s, 2.5, false).unwrap();
    // Start just outside the ceiling ellipse, straight under its center.
    let start = (1.0 - ceiling.semi_phi * 1.001, 0.5);
    assert!(ceiling.level(start.0, start.1) > 1.0);
    let curve = build_search_curve(CameraRegion::Apex, start, None, Some(ceiling));
    for p in curve.sample(500) {
        assert!(ceiling.level(p.0, p.1) >= 1.0 - 1e-9);
    }
}

#[test]
fn world_moves_invert() {
    let c = DroneConfig::looking(Vec3::new(1.0, 2.0, 3.0), 0.3, 0.1);
    for kind in [WorldMove::Truck, WorldMove::Pedestal, WorldMove::Forward, WorldMove::Pan, WorldMove::Tilt] {
        let there = world_manipulator(&c, kind, 0.25, (-1.0, 1.0));
        let back = world_manipulator(&there, kind, -0.25, (-1.0, 1.0));
        assert_relative_eq!(back.position, c.position, epsilon = 1e-12);
        assert_relative_eq!(back.yaw, c.yaw, epsilon = 1e-12);
        assert_relative_eq!(back.tilt, c.tilt, epsilon = 1e-12);
    }
    let clamped = world_manipulator(&c, WorldMove::Tilt, 5.0, (-1.0, 1.0));
    assert_eq!(clamped.tilt, 1.0);
}

#[test]
fn dolly_round_trip() {
    let c = DroneConfig::at(Vec3::new(3.0, 1.0, 2.0));
    let t = Vec3::new(0.0, 0.0, 1.0);
    let fwd = manipulate_dolly(&c, &t, 1.0, 0.5).unwrap();
    assert_relative_eq!((fwd.config.position - t).norm(), (c.position - t).norm() + 1.0, epsilon = 1e-12);
    let back = manipulate_dolly(&fwd.config, &t, -1.0, 0.5).unwrap();
    assert_relative_eq!(back.config.position, c.position, epsilon = 1e-12);
}

#[test]
fn collision_cases() {
    let bounds = Aabb::new(Vec3::new(-10.0, -10.0, 0.0), Vec3::new(10.0, 10.0, 5.0));
    let anchor = Vec3::new(0.0, 0.0, 1.0);
    let desired = Vec3::new(4.0, 0.0, 1.0);
    let prev = Vec3::new(3.0, 0.5, 1.0);
    assert_eq!(
        avoid_collision(&desired, &anchor, &[], &bounds, &prev, 0.5).unwrap(),
        CollisionOutcome::Free(desired)
    );
    // Obstacle covering [3, 5] on the half line; previous position is on the
    // near side, so the drone is pulled to t = 3.
    let obs = [Obstacle::Sphere(Sphere::new(desired, 1.0))];
    let out = avoid_collision(&desired, &anchor, &obs, &bounds, &prev, 0.5).unwrap();
    let p = out.position().unwrap();
    assert_relative_eq!(p.x, 3.0 - 1e-6, epsilon = 1e-9);
    assert!(!obs[0].contains(&p));
    // Previous position beyond the obstacle: pushed to its far side.
    let far_prev = Vec3::new(5.0, 0.8, 1.0);
    let p = avoid_collision(&desired, &anchor, &obs, &bounds, &far_prev, 0.5).unwrap().position().unwrap();
    assert_relative_eq!(p.x, 5.0 + 1e-6, epsilon = 1e-9);
    // Everything blocked.
    let wall = [Obstacle::Box(Aabb::new(Vec3::new(0.2, -1.0, 0.0), Vec3::new(11.0, 1.0, 5.0)))];
    assert_eq!(
        avoid_collision(&desired, &anchor, &wall, &bounds, &prev, 0.5).unwrap(),
        CollisionOutcome::Hold
    );
}
