use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skyframe_core::camera::{CameraIntrinsics, DroneConfig, Frustum};
use skyframe_core::dts::Target;
use skyframe_core::geometry::{Aabb, Obstacle, Sphere};
use skyframe_core::planner::*;
use skyframe_core::roadmap::*;
use skyframe_core::{Error, Vec3};

fn random_instance(seed: u64) -> (Roadmap, FramingQuery, Vec3, Vec3) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Aabb::new(Vec3::zeros(), Vec3::new(6.0, 6.0, 3.0));
    let obstacles: Vec<Obstacle> = (0..rng.gen_range(0..4))
        .map(|_| {
            let c = Vec3::new(rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0), rng.gen_range(0.5..2.5));
            let h = Vec3::new(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.5));
            Obstacle::Box(Aabb::from_center(c, h))
        })
        .collect();
    let scene = SceneModel::new(bounds, obstacles);
    let params = RoadmapParams {
        min_radius: 1.0,
        max_radius: 1.5,
        max_spheres: 200,
        inflation: 0.1,
    };
    let mut rm = build_roadmap(&scene, &params).unwrap();
    precompute_visibility(&mut rm, 8);
    let pick = |rng: &mut ChaCha8Rng| {
        let s = rm.graph.spheres[rng.gen_range(0..rm.graph.spheres.len())];
        s.center + Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)) * s.radius
    };
    let n_targets = rng.gen_range(1..=2);
    let targets: Vec<Target> = (0..n_targets).map(|_| Target::new(pick(&mut rng))).collect();
    let query = FramingQuery::new(targets, 0.3, 0.0, 3.0, rng.gen_range(0.0..=1.0));
    let a = pick(&mut rng);
    let b = pick(&mut rng);
    (rm, query, a, b)
}

/// Plain Dijkstra without heuristic, over the same search graph.
fn dijkstra(fg: &mut FramingGraph) -> Option<f64> {
    let n = fg.goal_id() + 1;
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[fg.start_id()] = 0.0;
    loop {
        let u = (0..n).filter(|&i| !done[i] && dist[i].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
        if u == fg.goal_id() {
            return Some(dist[u]);
        }
        done[u] = true;
        for (v, s) in fg.neighbors(u) {
            let c = fg.cost(u, v, s);
            if dist[u] + c < dist[v] {
                dist[v] = dist[u] + c;
            }
        }
    }
}

#[test]
fn astar_matches_dijkstra_on_random_instances() {
    let mut checked = 0;
    for seed in 0..100 {
        let (rm, query, a, b) = random_instance(seed);
        assert!(rm.graph.node_count() <= 200, "{} nodes", rm.graph.node_count());
        let snap = rm.snapshot();
        let planned = plan_framing_path(&a, &b, &snap, &query);
        let oracle = match FramingGraph::new(&snap, &query, a, b) {
            Ok(mut fg) => dijkstra(&mut fg),
            Err(_) => None,
        };
        match (planned, oracle) {
            (Ok(p), Some(c)) => {
                assert!((p.cost - c).abs() <= 1e-12 * c.max(1.0), "seed {seed}: {} vs {c}", p.cost);
                checked += 1;
            }
            (Err(_), None) => {}
            (p, o) => panic!("seed {seed}: planner {p:?} oracle {o:?}"),
        }
    }
    assert!(checked >= 80, "only {checked} solvable instances");
}

#[test]
fn identical_endpoints_give_single_node() {
    let (rm, query, a, _) = random_instance(1);
    let p = plan_framing_path(&a, &a, &rm.snapshot(), &query).unwrap();
    assert_eq!(p.nodes, vec![PathNode::Point { position: a }]);
    assert_eq!(p.cost, 0.0);
}

#[test]
fn path_is_connected_through_shared_spheres() {
    let (rm, query, a, b) = random_instance(7);
    let g = &rm.graph;
    let p = plan_framing_path(&a, &b, &rm.snapshot(), &query).unwrap();
    let spheres_of = |n: &PathNode| -> BTreeSet<usize> {
        match *n {
            PathNode::Point { position } => g.spheres_containing(&position).into_iter().collect(),
            PathNode::Portal { id } => g.portals[id].spheres.iter().map(|&s| s as usize).collect(),
        }
    };
    for w in p.nodes.windows(2) {
        assert!(!spheres_of(&w[0]).is_disjoint(&spheres_of(&w[1])));
    }
}

/// Two chains of spheres from a start sphere to a goal sphere, both on one
/// side of a target so the chart has no seam between them: a straight chain
/// near the target and an arched chain farther out, which is shorter in tau
/// because its target distance varies less. `walled` hides the arch.
fn two_corridors(walled: bool) -> (Roadmap, Vec<Target>) {
    let z = 1.0;
    let mut spheres = Vec::new();
    for k in 0..=8 {
        spheres.push(Sphere::new(Vec3::new(-2.0 + 0.5 * k as f64, 2.0, z), 0.4));
    }
    for k in 1..12 {
        let t = k as f64 * std::f64::consts::PI / 12.0;
        spheres.push(Sphere::new(Vec3::new(-2.0 * t.cos(), 2.0 + 1.5 * t.sin(), z), 0.4));
    }
    spheres.push(Sphere::new(Vec3::new(0.0, 0.0, z), 0.5));
    let walls = if walled {
        vec![Obstacle::Box(Aabb::new(Vec3::new(-1.0, 2.7, -1.0), Vec3::new(1.0, 2.8, 3.0)))]
    } else {
        vec![]
    };
    let scene = SceneModel::new(Aabb::new(Vec3::new(-5.0, -5.0, -1.0), Vec3::new(5.0, 5.0, 3.0)), walls);
    let rm = Roadmap::from_spheres(&scene, &RoadmapParams::default(), spheres);
    (rm, vec![Target::new(Vec3::new(0.0, 0.0, z))])
}

#[test]
fn occlusion_weight_selects_visible_corridor() {
    let (a, b) = (Vec3::new(-2.0, 2.0, 1.0), Vec3::new(2.0, 2.0, 1.0));
    let arched = |rm: &Roadmap, p: &NodePath| p.positions(&rm.graph).iter().any(|q| q.y > 2.9);
    let (open, targets) = two_corridors(false);
    let q0 = FramingQuery::new(targets.clone(), 0.5, 0.0, 3.0, 0.0);
    assert!(arched(&open, &plan_framing_path(&a, &b, &open.snapshot(), &q0).unwrap()));

    let (mut rm, _) = two_corridors(true);
    precompute_visibility(&mut rm, 64);
    let snap = rm.snapshot();
    let p0 = plan_framing_path(&a, &b, &snap, &q0).unwrap();
    assert!(arched(&rm, &p0));

    let q1 = FramingQuery::new(targets, 0.5, 0.0, 3.0, 1.0);
    let p1 = plan_framing_path(&a, &b, &snap, &q1).unwrap();
    assert!(!arched(&rm, &p1));
    assert!(p1.cost > p0.cost);
}

#[test]
fn blocked_endpoint_and_unreachable() {
    let (rm, targets) = two_corridors(true);
    let q = FramingQuery::new(targets, 0.5, 0.0, 3.0, 0.0);
    let snap = rm.snapshot();
    let inside_wall = Vec3::new(0.0, 2.75, 1.0);
    assert!(matches!(
        plan_framing_path(&inside_wall, &Vec3::new(2.0, 2.0, 1.0), &snap, &q),
        Err(Error::BlockedEndpoint)
    ));
    // The sphere around the target is isolated from both corridors.
    let near_target = Vec3::new(0.0, 0.2, 1.3);
    assert!(matches!(
        plan_framing_path(&Vec3::new(-2.0, 2.0, 1.0), &near_target, &snap, &q),
        Err(Error::BlockedEndpoint) | Err(Error::Unreachable)
    ));
    let q_far = FramingQuery::new(vec![Target::new(Vec3::new(0.0, 0.0, 1.0))], 0.1, 0.0, 3.0, 0.0);
    let far_target_sphere = Vec3::new(0.3, 0.0, 1.0);
    assert!(matches!(
        plan_framing_path(&Vec3::new(-2.0, 2.0, 1.0), &far_target_sphere, &snap, &q_far),
        Err(Error::Unreachable)
    ));
}

fn open_room() -> Roadmap {
    let scene = SceneModel::new(Aabb::new(Vec3::zeros(), Vec3::new(8.0, 8.0, 3.0)), vec![]);
    build_roadmap(
        &scene,
        &RoadmapParams {
            min_radius: 0.6,
            max_radius: 1.0,
            max_spheres: 2000,
            inflation: 0.0,
        },
    )
    .unwrap()
}

#[test]
fn sketch_tracing_a_node_polyline_returns_it() {
    let rm = open_room();
    let g = &rm.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let mut walk = vec![rng.gen_range(0..g.node_count())];
        while walk.len() < 12 {
            let cur = *walk.last().unwrap();
            // Later nodes share no sphere with earlier ones except the
            // previous node, so no shortcut can skip a sketch point.
            let used: BTreeSet<u32> = walk[..walk.len() - 1].iter().flat_map(|&k| g.portals[k].spheres).collect();
            let options: Vec<usize> = g
                .neighbors(cur)
                .iter()
                .map(|&(k, _)| k as usize)
                .filter(|&k| !walk.contains(&k) && g.portals[k].spheres.iter().all(|s| !used.contains(s)))
                .collect();
            if options.is_empty() {
                break;
            }
            walk.push(options[rng.gen_range(0..options.len())]);
        }
        let sketch: Vec<Vec3> = walk.iter().map(|&k| g.portals[k].center).collect();
        let p = plan_sketch_path(&sketch, walk[0], &rm.snapshot(), &SketchParams::default()).unwrap();
        let ids: Vec<usize> = p.portal_ids().collect();
        assert_eq!(ids, walk);
        assert_eq!(p.cost, 0.0);
    }
}

/// Two rings of spheres touching at a hub portal at the origin.
fn figure_eight() -> (Roadmap, usize, Vec<Vec3>) {
    let z = 1.0;
    let mut spheres = vec![Sphere::new(Vec3::new(0.0, -0.3, z), 0.45), Sphere::new(Vec3::new(0.0, 0.3, z), 0.45)];
    let n = 17;
    for side in [1.0, -1.0] {
        for k in 1..n {
            let t = std::f64::consts::PI + k as f64 * std::f64::consts::TAU / n as f64;
            spheres.push(Sphere::new(Vec3::new(side * (2.0 + 2.0 * t.cos()), 2.0 * t.sin(), z), 0.6));
        }
    }
    let scene = SceneModel::new(Aabb::new(Vec3::new(-5.0, -3.0, 0.0), Vec3::new(5.0, 3.0, 2.0)), vec![]);
    let rm = Roadmap::from_spheres(&scene, &RoadmapParams::default(), spheres);
    let hub = rm
        .graph
        .portals
        .iter()
        .position(|p| p.spheres == [0, 1])
        .expect("hub portal exists");

    // Up through the origin, clockwise round the right ring back to the
    // origin, up again, counter-clockwise round the left ring.
    let step = 0.2;
    let mut sketch = vec![Vec3::new(0.0, -0.2, z), Vec3::new(0.0, 0.0, z)];
    for side in [1.0, -1.0] {
        let count = (std::f64::consts::TAU * 2.0 / step).round() as usize;
        // The left loop stops short of the origin, so the hub is crossed
        // exactly twice.
        let end = if side > 0.0 { count } else { count * 9 / 10 };
        for i in 1..=end {
            let t = std::f64::consts::PI - side * 0.0 - i as f64 * std::f64::consts::TAU / count as f64;
            sketch.push(Vec3::new(side * (2.0 + 2.0 * t.cos()), 2.0 * t.sin() * 1.0, z));
        }
    }
    (rm, hub, sketch)
}

#[test]
fn sketch_loops_through_hub_twice() {
    let (rm, hub, sketch) = figure_eight();
    let start = rm.graph.nearest_node(&sketch[0]).unwrap();
    let params = SketchParams {
        window: 5,
        ..SketchParams::default()
    };
    let p = plan_sketch_path(&sketch, start, &rm.snapshot(), &params).unwrap();
    let hits = p.portal_ids().filter(|&k| k == hub).count();
    assert_eq!(hits, 2, "path {:?}", p.portal_ids().collect::<Vec<_>>());
}

fn chain() -> (Roadmap, Vec<Vec3>) {
    let spheres: Vec<Sphere> = (0..14).map(|i| Sphere::new(Vec3::new(i as f64 * 0.8, 0.0, 1.0), 0.5)).collect();
    let scene = SceneModel::new(Aabb::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(12.0, 1.0, 2.0)), vec![]);
    let rm = Roadmap::from_spheres(&scene, &RoadmapParams::default(), spheres);
    let first = rm.graph.portals[0].center;
    let last = rm.graph.portals[rm.graph.node_count() - 1].center;
    let m = ((last - first).norm() / 0.1).round() as usize;
    let sketch = (0..=m).map(|i| first + (last - first) * (i as f64 / m as f64)).collect();
    (rm, sketch)
}

#[test]
fn narrow_window_fails_where_default_succeeds() {
    let (rm, sketch) = chain();
    let snap = rm.snapshot();
    let tight = SketchParams {
        window: 1,
        ..SketchParams::default()
    };
    assert!(matches!(plan_sketch_path(&sketch, 0, &snap, &tight), Err(Error::SketchFailure)));
    let p = plan_sketch_path(&sketch, 0, &snap, &SketchParams::default()).unwrap();
    let ids: Vec<usize> = p.portal_ids().collect();
    assert_eq!(ids, (0..rm.graph.node_count()).collect::<Vec<_>>());
}

#[test]
fn validate_path_reports_first_blocked_node() {
    let (mut rm, sketch) = chain();
    let p = plan_sketch_path(&sketch, 0, &rm.snapshot(), &SketchParams::default()).unwrap();
    assert_eq!(validate_path(&p, &rm.snapshot()), None);

    let k = 5;
    let c = rm.graph.portals[k].center;
    rm.update_dynamic(&[Obstacle::Sphere(Sphere::new(c, 0.1))], &[]);
    assert_eq!(validate_path(&p, &rm.snapshot()), Some(k));

    rm.update_dynamic(&[], &[]);
    let cam = DroneConfig::looking(c - Vec3::new(0.0, 3.0, 0.0), 0.0, 0.0);
    let f = Frustum::new(&cam, CameraIntrinsics::from_diagonal(0.05, 1.0), 0.1, 10.0);
    rm.update_dynamic(&[], &[f]);
    assert_eq!(validate_path(&p, &rm.snapshot()), Some(k));
}

proptest! {
    #[test]
    fn tau_metric_axioms(a in prop::array::uniform4(-3.0f64..3.0), b in prop::array::uniform4(-3.0f64..3.0),
                         c in prop::array::uniform4(-3.0f64..3.0)) {
        let t = |v: [f64; 4]| TauCoord { alpha: v[0], phi: v[1], theta: v[2], z: v[3] };
        let (x, y, w) = (t(a), t(b), t(c));
        let d = |p: &TauCoord, q: &TauCoord| tau_distance(p, q, -3.0, 3.0).unwrap();
        prop_assert!(d(&x, &y) >= 0.0);
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert!(d(&x, &w) <= d(&x, &y) + d(&y, &w) + 1e-9);
    }

    #[test]
    fn arc_cost_bounds_tau_distance(d in 0.0f64..5.0, w in 0.0f64..=1.0, o in 0.0f64..=1.0) {
        let c = arc_cost(d, w, o);
        prop_assert!(c >= d && c <= 2.0 * d + 1e-12);
    }
}
