mod common;

use common::{load, open_room};
use skyframe_core::geometry::Vec3;
use skyframe_core::roadmap::build_roadmap;
use skyframe_sim::protocol::{Command, DroneMode, Manipulation};
use skyframe_sim::scenario::DroneGoal;
use skyframe_sim::sim::{densify_sketch, Submitted};
use skyframe_sim::telemetry::{Event, PlanKind, PlanReason, TickRecord};
use skyframe_sim::Sim;

fn run(sim: &mut Sim, ticks: usize) -> Vec<TickRecord> {
    (0..ticks).map(|_| sim.tick().expect("running")).collect()
}

fn events(records: &[TickRecord]) -> Vec<(u64, Event)> {
    records.iter().flat_map(|r| r.events.iter().map(move |e| (r.tick, e.clone()))).collect()
}

#[test]
fn holding_drone_stays_put() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    let start = sim.state.drones[0].state.position;
    let recs = run(&mut sim, 100);
    assert!(events(&recs).is_empty());
    assert!((sim.state.drones[0].state.position - start).norm() < 1e-12);
    assert_eq!(recs.last().unwrap().tick, 100);
    assert!((recs.last().unwrap().t - 2.0).abs() < 1e-12);
}

#[test]
fn holding_drone_aims_at_the_target() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    run(&mut sim, 1);
    let d = &sim.state.drones[0];
    let to_target = sim.state.targets[0].position - d.state.position;
    let cfg = skyframe_core::camera::DroneConfig::looking(d.state.position, d.state.yaw, d.state.tilt);
    let p = skyframe_core::camera::project(&cfg, &sim.intrinsics, &sim.state.targets[0].position).unwrap();
    assert!(!p.behind && p.screen.norm() < 1e-3, "{:?}", p.screen);
    assert!(to_target.z < 0.0 && d.state.tilt < 0.0);
}

#[test]
fn position_goal_is_reached() {
    let goal = Vec3::new(9.0, 8.0, 2.5);
    let mut sim = Sim::new(open_room(Some(DroneGoal::Position { position: goal }))).unwrap();
    let recs = run(&mut sim, 400);
    let ev = events(&recs);
    assert!(matches!(ev[0].1, Event::Plan { kind: PlanKind::Position, reason: PlanReason::Initial, ok: true, .. }));
    assert!(ev.iter().any(|(_, e)| matches!(e, Event::PathFinished { drone: 0 })));
    assert!((sim.state.drones[0].state.position - goal).norm() < 0.05);
}

#[test]
fn set_accel_is_clamped_to_amax() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    assert_eq!(sim.submit(Some(1), Command::SetAccel { drone: 0, accel: 99.0 }).unwrap(), Submitted::Queued);
    let r = sim.tick().unwrap();
    assert_eq!(sim.state.drones[0].accel, sim.scenario.params.amax);
    assert!(matches!(&r.events[0], Event::CommandApplied { id: Some(1), command } if command == "set_accel"));
    sim.submit(None, Command::SetAccel { drone: 0, accel: -99.0 }).unwrap();
    sim.tick();
    assert_eq!(sim.state.drones[0].accel, -sim.scenario.params.amax);
}

#[test]
fn invalid_commands_never_enter_the_queue() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    assert!(sim.submit(Some(1), Command::SetAccel { drone: 5, accel: 1.0 }).is_err());
    assert!(sim.state.pending.is_empty());
}

#[test]
fn paused_commands_wait_for_a_step() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    run(&mut sim, 3);
    assert_eq!(sim.submit(Some(1), Command::Pause).unwrap(), Submitted::Applied);
    sim.submit(Some(2), Command::Manipulate { drone: 0, manipulation: Manipulation::Dolly { dz: 0.5 } })
        .unwrap();
    assert!(sim.tick().is_none());
    assert_eq!(sim.state.tick, 3);
    assert_eq!(sim.snapshot().pending_commands, 1);
    assert!(sim.state.drones[0].manual.is_none());
    sim.submit(Some(3), Command::Step { ticks: 1 }).unwrap();
    let r = sim.tick().unwrap();
    assert_eq!(r.tick, 4);
    assert!(r.events.iter().any(|e| matches!(e, Event::CommandApplied { id: Some(1), .. })));
    assert!(r.events.iter().any(|e| matches!(e, Event::CommandApplied { id: Some(2), .. })));
    assert!(r.events.iter().any(|e| matches!(e, Event::Plan { reason: PlanReason::Command, .. })));
    assert!(sim.state.drones[0].manual.is_some());
    assert!(sim.tick().is_none());
    sim.submit(None, Command::Resume).unwrap();
    assert!(sim.tick().is_some());
}

#[test]
fn runs_are_deterministic() {
    let go = || {
        let mut sim = Sim::new(load("two_actors.json")).unwrap();
        serde_json::to_string(&run(&mut sim, 250)).unwrap()
    };
    assert_eq!(go(), go());
}

#[test]
fn position_noise_follows_the_seed() {
    let go = |seed| {
        let mut s = open_room(Some(DroneGoal::Position { position: Vec3::new(9.0, 8.0, 2.5) }));
        s.params.position_noise = 0.02;
        s.params.seed = seed;
        let mut sim = Sim::new(s).unwrap();
        run(&mut sim, 60);
        sim.state.drones[0].state.position
    };
    assert_eq!(go(1), go(1));
    assert_ne!(go(1), go(2));
}

#[test]
fn sketch_flies_a_lead_in_first() {
    let mut sim = Sim::new(load("sketch_pillars.json")).unwrap();
    let recs = run(&mut sim, 1);
    let ev = events(&recs);
    assert!(ev.iter().any(|(_, e)| matches!(e, Event::Plan { drone: 0, kind: PlanKind::Sketch, ok: true, .. })));
    let d = &sim.state.drones[0];
    assert_eq!(d.active.as_ref().unwrap().kind, PlanKind::LeadIn);
    assert_eq!(d.queued.as_ref().unwrap().kind, PlanKind::Sketch);
    let snap = sim.snapshot();
    let view = &snap.paths[0];
    let sketch = view.sketch.as_ref().unwrap();
    assert_eq!(sketch[0], Vec3::new(3.0, 2.0, 2.0));
    let lead = view.lead_in.as_ref().unwrap();
    assert!((lead[0] - d.state.position).norm() < 0.1);
    assert!((lead.last().unwrap() - view.planned.as_ref().unwrap()[0]).norm() < 1e-9);
    let recs = run(&mut sim, 600);
    let finished: Vec<u64> = events(&recs)
        .into_iter()
        .filter_map(|(t, e)| matches!(e, Event::PathFinished { drone: 0 }).then_some(t))
        .collect();
    assert!(!finished.is_empty(), "lead-in never finished");
    assert!(sim.state.drones[0].active.as_ref().is_none_or(|a| a.kind == PlanKind::Sketch));
}

#[test]
fn densified_sketch_keeps_the_corners() {
    let pts = [Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(2.0, 1.2, 0.0)];
    let d = densify_sketch(&pts, 0.5);
    assert_eq!(d.len(), 4 + 3 + 1);
    assert!(d.windows(2).all(|w| (w[1] - w[0]).norm() <= 0.5 + 1e-12));
    for p in pts {
        assert!(d.contains(&p));
    }
}

#[test]
fn set_accel_drives_the_sketch_follower() {
    let mut sim = Sim::new(load("sketch_pillars.json")).unwrap();
    run(&mut sim, 1);
    sim.submit(None, Command::SetAccel { drone: 0, accel: -0.3 }).unwrap();
    run(&mut sim, 1);
    let q = sim.state.drones[0].queued.as_ref().unwrap();
    assert_eq!(q.follower.command, -0.3);
}

#[test]
fn view_angle_manipulation_reverses() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    run(&mut sim, 1);
    let start = sim.state.drones[0].state.position;
    let m = |dx| Command::Manipulate { drone: 0, manipulation: Manipulation::ViewAngle { dx, dy: 0.05 } };
    sim.submit(None, m(0.2)).unwrap();
    run(&mut sim, 1);
    let mid = sim.state.drones[0].manual.as_ref().unwrap().config.position;
    assert!((mid - start).norm() > 0.1);
    assert_eq!(sim.state.drones[0].mode, DroneMode::Manual);
    sim.submit(None, Command::Manipulate { drone: 0, manipulation: Manipulation::ViewAngle { dx: -0.2, dy: -0.05 } }).unwrap();
    run(&mut sim, 1);
    let back = sim.state.drones[0].manual.as_ref().unwrap().config.position;
    assert!((back - start).norm() < 1e-3, "{back:?} vs {start:?}");
}

#[test]
fn dolly_moves_along_the_view_and_respects_safety() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    run(&mut sim, 1);
    sim.submit(None, Command::Manipulate { drone: 0, manipulation: Manipulation::Dolly { dz: -10.0 } }).unwrap();
    let r = sim.tick().unwrap();
    let goal = sim.state.drones[0].manual.as_ref().map(|m| m.config.position);
    let target = sim.state.targets[0].position;
    match goal {
        Some(g) => assert!((g - target).norm() >= sim.scenario.params.d_s - 1e-9),
        None => assert!(r.events.iter().any(|e| matches!(e, Event::CommandRejected { .. }))),
    }
}

#[test]
fn world_manipulation_locks_the_camera() {
    let mut sim = Sim::new(open_room(None)).unwrap();
    run(&mut sim, 1);
    let yaw = sim.state.drones[0].state.yaw;
    sim.submit(None, Command::Manipulate { drone: 0, manipulation: Manipulation::World { axis: skyframe_core::manipulators::WorldMove::Pan, delta: 0.5 } }).unwrap();
    run(&mut sim, 30);
    let d = &sim.state.drones[0];
    assert!(d.desired.is_none());
    assert!((d.state.yaw - (yaw + 0.5)).abs() < 1e-9);
}

#[test]
fn unknown_framing_is_rejected_with_its_id() {
    let mut sim = Sim::new(load("two_actors.json")).unwrap();
    sim.submit(Some(9), Command::AssignFraming { drone: 1, framing: "dutch".into() }).unwrap();
    let r = sim.tick().unwrap();
    assert!(r.events.iter().any(|e| matches!(e, Event::CommandRejected { id: Some(9), message, .. } if message.contains("dutch"))));
}

#[test]
fn assigned_framing_is_pinned() {
    let mut sim = Sim::new(load("two_actors.json")).unwrap();
    run(&mut sim, 5);
    sim.submit(None, Command::AssignFraming { drone: 1, framing: "apex_high".into() }).unwrap();
    run(&mut sim, 200);
    let d = &sim.state.drones[1];
    assert_eq!(d.mode, DroneMode::Framing);
    assert_eq!(sim.catalog[d.framing.unwrap()].name, "apex_high");
}

#[test]
fn master_switch_is_reported() {
    let mut sim = Sim::new(load("two_actors.json")).unwrap();
    run(&mut sim, 5);
    sim.submit(None, Command::SwitchMaster { drone: 2 }).unwrap();
    let r = sim.tick().unwrap();
    assert_eq!(r.master, 2);
    assert!(r.events.iter().any(|e| matches!(e, Event::MasterSwitched { from: 0, to: 2 })));
    let (members, _) = sim.assignment().unwrap();
    assert_eq!(members, &[0, 1, 2]);
}

#[test]
fn set_mode_manual_stops_coordination_for_that_drone() {
    let mut sim = Sim::new(load("two_actors.json")).unwrap();
    run(&mut sim, 5);
    sim.submit(None, Command::SetMode { drone: 1, mode: DroneMode::Manual }).unwrap();
    run(&mut sim, 2);
    let (members, _) = sim.assignment().unwrap();
    assert_eq!(members, &[0, 2]);
    assert!(sim.state.drones[1].active.is_none());
}

#[test]
fn safety_limits_hold_every_tick() {
    for name in ["two_actors.json", "sketch_pillars.json", "moving_obstacle.json"] {
        let mut sim = Sim::new(load(name)).unwrap();
        let d_s = sim.scenario.params.d_s;
        let bounds = sim.scenario.scene.bounds;
        for r in run(&mut sim, 500) {
            for d in &r.drones {
                assert!(d.position.iter().all(|x| x.is_finite()), "{name}");
                assert!(bounds.contains(&d.position), "{name} tick {}", r.tick);
                for t in &r.targets {
                    assert!((d.position - t.position).norm() >= d_s - 1e-9, "{name} tick {}", r.tick);
                }
                let tilt = sim.scenario.params.tilt_range;
                assert!(d.tilt >= tilt.0 - 1e-9 && d.tilt <= tilt.1 + 1e-9, "{name}");
            }
        }
    }
}

#[test]
fn foreign_roadmaps_are_refused() {
    let a = open_room(None);
    let b = load("two_actors.json");
    let rm = build_roadmap(&b.scene, &b.roadmap_params()).unwrap();
    assert!(Sim::with_roadmap(a, rm).is_err());
}
