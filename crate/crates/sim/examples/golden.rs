//! Writes the dynamic replanning scenarios under scenarios/golden/.
//!
//! Each scene is a room split by a wall with two doorways. A single drone
//! flies a position goal across the wall; once its initial path is known,
//! an obstacle is scripted to appear in the doorway that path uses.

use std::path::PathBuf;

use skyframe_core::geometry::{Aabb, Obstacle, Sphere, Vec3};
use skyframe_core::roadmap::SceneModel;
use skyframe_sim::scenario::{DroneGoal, DroneSpec, DynamicObstacle, Role, Scenario, SimParams, TargetSpec, Waypoint, SCHEMA_VERSION};
use skyframe_sim::Sim;

const WALL_X: f64 = 8.0;
const DOOR_HALF: f64 = 0.8;
const DOOR_HEIGHT: f64 = 2.6;
const PARKED: Vec3 = Vec3::new(-50.0, -50.0, -50.0);

fn wall(doors: [f64; 2], depth: f64, height: f64) -> Vec<Obstacle> {
    let (x0, x1) = (WALL_X - 0.15, WALL_X + 0.15);
    let mut cuts = vec![0.0];
    for d in doors {
        cuts.push(d - DOOR_HALF);
        cuts.push(d + DOOR_HALF);
    }
    cuts.push(depth);
    let mut out = Vec::new();
    for pair in cuts.chunks(2) {
        out.push(Obstacle::Box(Aabb::new(Vec3::new(x0, pair[0], 0.0), Vec3::new(x1, pair[1], height))));
    }
    for d in doors {
        // Lintel above each doorway.
        out.push(Obstacle::Box(Aabb::new(
            Vec3::new(x0, d - DOOR_HALF, DOOR_HEIGHT),
            Vec3::new(x1, d + DOOR_HALF, height),
        )));
    }
    out
}

fn scenario(i: usize) -> Scenario {
    let depth = 10.0 + (i % 3) as f64;
    let height = 4.0;
    let doors = [2.5 + 0.2 * (i % 4) as f64, depth - 2.5 - 0.15 * (i % 5) as f64];
    let start = Vec3::new(2.0 + 0.1 * i as f64, depth / 2.0 + 0.3 * ((i % 3) as f64 - 1.0), 1.4 + 0.05 * i as f64);
    let goal = Vec3::new(14.0 - 0.1 * i as f64, depth / 2.0 - 0.4 * ((i % 2) as f64), 1.6);
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: format!("golden_doorway_{i:02}"),
        scene: SceneModel::new(Aabb::new(Vec3::zeros(), Vec3::new(16.0, depth, height)), wall(doors, depth, height)),
        dynamic_obstacles: Vec::new(),
        targets: vec![TargetSpec {
            position: Vec3::new(13.0, depth - 1.5, 1.7),
            yaw: 0.0,
            radius: 0.3,
            script: Vec::new(),
        }],
        drones: vec![DroneSpec {
            position: start,
            yaw: 0.0,
            tilt: 0.0,
            role: Role::Master,
            goal: Some(DroneGoal::Position { position: goal }),
        }],
        params: SimParams {
            seed: 100 + i as u64,
            ..SimParams::default()
        },
        catalog: None,
    }
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/golden");
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..10 {
        let mut sc = scenario(i);
        let mut sim = Sim::new(sc.clone()).unwrap();
        sim.tick().unwrap();
        let path = sim.state.drones[0].active.as_ref().expect("initial plan");
        let pts = path.path.positions(&sim.roadmap.graph);
        let crossing = pts
            .iter()
            .min_by(|a, b| (a.x - WALL_X).abs().total_cmp(&(b.x - WALL_X).abs()))
            .unwrap();
        let door = sc.scene.obstacles.len();
        let doors: Vec<f64> = sc.scene.obstacles[door - 2..]
            .iter()
            .map(|o| o.center().y)
            .collect();
        let used = doors
            .iter()
            .copied()
            .min_by(|a, b| (a - crossing.y).abs().total_cmp(&(b - crossing.y).abs()))
            .unwrap();
        let dt = sc.params.dt;
        let appear_tick = 40 + 5 * i as u64;
        let t0 = appear_tick as f64 * dt;
        let block = Vec3::new(WALL_X, used, 1.3);
        sc.dynamic_obstacles.push(DynamicObstacle {
            shape: Obstacle::Sphere(Sphere::new(PARKED, 1.0)),
            script: vec![
                Waypoint { t: 0.0, position: PARKED, yaw: None },
                Waypoint { t: t0, position: PARKED, yaw: None },
                Waypoint { t: t0 + dt, position: block, yaw: None },
            ],
        });
        let file = dir.join(format!("{}.json", sc.name));
        std::fs::write(&file, sc.to_json()).unwrap();
        println!("{} door y={used:.2} appears at tick {}", file.display(), appear_tick + 1);
    }
}
