#![allow(dead_code)]

use std::path::PathBuf;

use skyframe_core::geometry::{Aabb, Vec3};
use skyframe_core::roadmap::SceneModel;
use skyframe_sim::scenario::{DroneGoal, DroneSpec, Role, Scenario, SimParams, TargetSpec, SCHEMA_VERSION};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap()
}

pub fn golden(i: usize) -> Scenario {
    load(&format!("golden/golden_doorway_{i:02}.json"))
}

/// Empty 12 x 12 x 5 room, one target in the middle, one drone.
pub fn open_room(goal: Option<DroneGoal>) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: "open_room".into(),
        scene: SceneModel::new(Aabb::new(Vec3::zeros(), Vec3::new(12.0, 12.0, 5.0)), Vec::new()),
        dynamic_obstacles: Vec::new(),
        targets: vec![TargetSpec {
            position: Vec3::new(6.0, 6.0, 1.7),
            yaw: 0.0,
            radius: 0.3,
            script: Vec::new(),
        }],
        drones: vec![DroneSpec {
            position: Vec3::new(3.5, 4.0, 2.0),
            yaw: 0.0,
            tilt: 0.0,
            role: Role::Master,
            goal,
        }],
        params: SimParams {
            d_s: 1.0,
            seed: 5,
            ..SimParams::default()
        },
        catalog: None,
    }
}
