mod common;

use common::load;
use skyframe_core::coordinator::DroneView;
use skyframe_core::dts::Target;
use skyframe_core::geometry::Vec3;
use skyframe_sim::metrics::{framing_errors, tick_rows, MetricsWriter, CONFLICT_COLUMNS, PLAN_COLUMNS, TICK_COLUMNS};
use skyframe_sim::protocol::DroneMode;
use skyframe_sim::sim::derive_spec;
use skyframe_sim::telemetry::DroneRecord;
use skyframe_sim::trace::{Trace, TraceWriter};
use skyframe_sim::Sim;

fn record(position: Vec3, targets: &[Target], sim: &Sim) -> DroneRecord {
    let pts: Vec<Vec3> = targets.iter().map(|t| t.position).collect();
    let view = DroneView::aimed(position, &pts);
    let ids: Vec<usize> = (0..targets.len()).collect();
    DroneRecord {
        id: 0,
        mode: DroneMode::Auto,
        position,
        velocity: Vec3::zeros(),
        acceleration: Vec3::zeros(),
        yaw: view.yaw,
        tilt: view.tilt,
        u: 0.0,
        tracking_error: 0.0,
        goal: position,
        framing: None,
        desired: Some(derive_spec(&position, &ids, targets, &sim.intrinsics, None)),
        path_active: false,
    }
}

#[test]
fn errors_vanish_at_the_desired_framing() {
    let sim = Sim::new(load("two_actors.json")).unwrap();
    let targets = vec![Target::new(Vec3::new(5.0, 5.0, 1.7))];
    let r = record(Vec3::new(2.0, 3.0, 2.5), &targets, &sim);
    let e = framing_errors(&r, &targets, &sim.intrinsics).unwrap();
    assert!(e.screen < 1e-9 && e.size < 1e-12 && e.angle < 1e-7, "{e:?}");
}

#[test]
fn two_target_framing_matches_its_own_derivation() {
    let sim = Sim::new(load("two_actors.json")).unwrap();
    let targets = vec![Target::new(Vec3::new(5.0, 5.0, 1.7)), Target::new(Vec3::new(7.0, 5.0, 1.7))];
    let r = record(Vec3::new(6.0, 1.0, 1.7), &targets, &sim);
    let e = framing_errors(&r, &targets, &sim.intrinsics).unwrap();
    assert!(e.screen < 1e-6, "{e:?}");
}

#[test]
fn errors_grow_when_the_drone_moves() {
    let sim = Sim::new(load("two_actors.json")).unwrap();
    let targets = vec![Target::new(Vec3::new(5.0, 5.0, 1.7))];
    let mut r = record(Vec3::new(2.0, 3.0, 2.5), &targets, &sim);
    r.position += Vec3::new(-1.0, 1.0, 0.0);
    let e = framing_errors(&r, &targets, &sim.intrinsics).unwrap();
    assert!(e.screen > 0.01 && e.size > 0.001 && e.angle > 0.1, "{e:?}");
    r.desired = None;
    assert!(framing_errors(&r, &targets, &sim.intrinsics).is_none());
}

#[test]
fn metrics_directory_layout_and_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let sc = load("two_actors.json");
    let mut sim = Sim::new(sc.clone()).unwrap();
    let mut m = MetricsWriter::create(dir.path(), sim.intrinsics).unwrap();
    let mut buf = Vec::new();
    let mut t = TraceWriter::new(&mut buf, &sc, Some(120)).unwrap();
    for _ in 0..120 {
        let r = sim.tick().unwrap();
        m.tick(&r).unwrap();
        m.plans(&sim.plan_log).unwrap();
        sim.plan_log.clear();
        t.telemetry(&r).unwrap();
    }
    m.finish().unwrap();
    t.finish().unwrap();

    let header = |name: &str| -> Vec<String> {
        let mut r = csv::Reader::from_path(dir.path().join(name)).unwrap();
        r.headers().unwrap().iter().map(str::to_string).collect()
    };
    assert_eq!(header("ticks.csv"), TICK_COLUMNS);
    assert_eq!(header("conflicts.csv"), CONFLICT_COLUMNS);
    assert_eq!(header("plans.csv"), PLAN_COLUMNS);
    let plans = csv::Reader::from_path(dir.path().join("plans.csv")).unwrap().records().count();
    assert!(plans >= 3);
    let splines = std::fs::read_to_string(dir.path().join("splines.jsonl")).unwrap();
    for line in splines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let s: skyframe_sim::export::SplineExport = serde_json::from_value(v["spline"].clone()).unwrap();
        s.to_spline().unwrap();
    }

    let written: Vec<Vec<String>> = csv::Reader::from_path(dir.path().join("ticks.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    assert_eq!(written.len(), 120 * 3);
    let trace = Trace::read(buf.as_slice()).unwrap();
    let recomputed: Vec<Vec<String>> = trace.telemetry.iter().flat_map(|r| tick_rows(r, &sim.intrinsics)).collect();
    assert_eq!(written, recomputed);
}
