//! Scenario files: scene, scripted targets and obstacles, drones and
//! simulation parameters, stored as JSON with a schema version.

use std::path::Path;

use serde::{Deserialize, Serialize};
use skyframe_core::dts::Target;
use skyframe_core::geometry::{Obstacle, Vec3};
use skyframe_core::roadmap::{RoadmapParams, SceneModel};

use crate::error::{SimError, SimResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Timed waypoint of a script. Scripts interpolate linearly and hold the
/// last pose afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub position: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
}

/// Position (and yaw, when scripted) at time `t`.
pub fn sample_script(script: &[Waypoint], t: f64) -> Option<(Vec3, Option<f64>)> {
    let first = script.first()?;
    if t <= first.t {
        return Some((first.position, first.yaw));
    }
    for w in script.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if t <= b.t {
            let f = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 1.0 };
            let yaw = match (a.yaw, b.yaw) {
                (Some(x), Some(y)) => Some(x + (y - x) * f),
                (x, y) => y.or(x),
            };
            return Some((a.position + (b.position - a.position) * f, yaw));
        }
    }
    let last = script.last().unwrap();
    Some((last.position, last.yaw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicObstacle {
    /// Shape at its initial pose.
    pub shape: Obstacle,
    /// Scripted positions of the shape's center.
    #[serde(default)]
    pub script: Vec<Waypoint>,
}

impl DynamicObstacle {
    pub fn at(&self, t: f64) -> Obstacle {
        match sample_script(&self.script, t) {
            Some((p, _)) => self.shape.translated(&(p - self.shape.center())),
            None => self.shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub position: Vec3,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default = "default_target_radius")]
    pub radius: f64,
    #[serde(default)]
    pub script: Vec<Waypoint>,
}

fn default_target_radius() -> f64 {
    0.3
}

impl TargetSpec {
    pub fn at(&self, t: f64) -> Target {
        let (p, yaw) = sample_script(&self.script, t).unwrap_or((self.position, None));
        Target {
            radius: self.radius,
            ..Target::with_yaw(p, yaw.unwrap_or(self.yaw))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Master,
    Slave,
}

/// What a drone does at start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DroneGoal {
    /// Stay at the initial position.
    Hold,
    /// Plan to a fixed position.
    Position { position: Vec3 },
    /// Hold a catalog framing (pins the drone in coordination).
    Framing { framing: String },
    /// Framing chosen by the coordinator.
    Auto,
    /// Fly a sketched polyline (x, y, height) at the commanded speed.
    Sketch {
        points: Vec<Vec3>,
        /// Along-path acceleration command, m/s^2.
        #[serde(default = "default_sketch_accel")]
        accel: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneSpec {
    pub position: Vec3,
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub tilt: f64,
    pub role: Role,
    #[serde(default)]
    pub goal: Option<DroneGoal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Safety distance to targets, meters.
    pub d_s: f64,
    /// Gimbal tilt interval, radians.
    pub tilt_range: (f64, f64),
    /// Diagonal field of view, degrees.
    pub fov_deg: f64,
    #[serde(default = "default_aspect")]
    pub aspect: f64,
    pub vmax: f64,
    pub amax: f64,
    /// Occlusion weight of the framing planner.
    pub w_o: f64,
    /// Sketch search window.
    pub window: usize,
    /// Orientation solver tolerance, radians.
    pub epsilon: f64,
    pub min_drone_distance: f64,
    /// Tick length, seconds.
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub roadmap: Option<RoadmapParams>,
    /// Standard deviation of simulated localization noise, meters.
    #[serde(default)]
    pub position_noise: f64,
    /// Maximum sketch deviation, meters.
    #[serde(default = "default_max_deviation")]
    pub max_deviation: f64,
    /// Destination drift that triggers a replan, meters.
    #[serde(default = "default_replan_drift")]
    pub replan_drift: f64,
}

fn default_sketch_accel() -> f64 {
    1.0
}

fn default_aspect() -> f64 {
    16.0 / 9.0
}

fn default_max_deviation() -> f64 {
    3.0
}

fn default_replan_drift() -> f64 {
    0.5
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            d_s: 0.5,
            tilt_range: (-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_4),
            fov_deg: 92.0,
            aspect: default_aspect(),
            vmax: 2.0,
            amax: 4.0,
            w_o: 1.0,
            window: 8,
            epsilon: 1e-3,
            min_drone_distance: 1.0,
            dt: 0.02,
            seed: 0,
            roadmap: None,
            position_noise: 0.0,
            max_deviation: default_max_deviation(),
            replan_drift: default_replan_drift(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub scene: SceneModel,
    #[serde(default)]
    pub dynamic_obstacles: Vec<DynamicObstacle>,
    pub targets: Vec<TargetSpec>,
    pub drones: Vec<DroneSpec>,
    pub params: SimParams,
    /// Framing catalog override; the built-in catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Vec<skyframe_core::coordinator::Framing>>,
}

impl Scenario {
    pub fn from_json(text: &str) -> SimResult<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::Schema {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(SimError::Invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn roadmap_params(&self) -> RoadmapParams {
        self.params.roadmap.unwrap_or_default()
    }

    pub fn master(&self) -> usize {
        self.drones.iter().position(|d| d.role == Role::Master).unwrap_or(0)
    }

    /// Semantic checks beyond the schema. Returns every problem found.
    pub fn lint(&self) -> Vec<String> {
        let mut out = Vec::new();
        let p = &self.params;
        if let Err(e) = self.scene.validate() {
            out.push(format!("scene: {e}"));
        }
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        check(p.d_s > 0.0, "params.d_s must be positive");
        check(p.tilt_range.0 <= p.tilt_range.1, "params.tilt_range must be ordered");
        check(p.tilt_range.0 >= -std::f64::consts::FRAC_PI_2 && p.tilt_range.1 <= std::f64::consts::FRAC_PI_2, "params.tilt_range must lie in [-pi/2, pi/2]");
        check(p.fov_deg > 0.0 && p.fov_deg < 180.0, "params.fov_deg must be in (0, 180)");
        check(p.aspect > 0.0, "params.aspect must be positive");
        check(p.vmax > 0.0 && p.amax > 0.0, "params.vmax and params.amax must be positive");
        check((0.0..=1.0).contains(&p.w_o), "params.w_o must lie in [0, 1]");
        check(p.window >= 1, "params.window must be at least 1");
        check(p.epsilon > 0.0, "params.epsilon must be positive");
        check(p.min_drone_distance >= 0.0, "params.min_drone_distance must be non-negative");
        check(p.dt > 0.0 && p.dt <= 0.1, "params.dt must be in (0, 0.1]");
        check(p.position_noise >= 0.0, "params.position_noise must be non-negative");
        check(!self.targets.is_empty(), "at least one target is required");
        check(!self.drones.is_empty(), "at least one drone is required");
        check(
            self.drones.iter().filter(|d| d.role == Role::Master).count() == 1,
            "exactly one drone must have role master",
        );
        if let Some(c) = &self.catalog {
            for f in c {
                if let Err(e) = f.validate() {
                    out.push(format!("catalog: {e}"));
                }
            }
        }
        let obstacles: Vec<Obstacle> = self
            .scene
            .obstacles
            .iter()
            .copied()
            .chain(self.dynamic_obstacles.iter().map(|o| o.at(0.0)))
            .collect();
        let targets: Vec<Target> = self.targets.iter().map(|t| t.at(0.0)).collect();
        for (i, d) in self.drones.iter().enumerate() {
            if !self.scene.bounds.contains(&d.position) {
                out.push(format!("drones[{i}] starts outside the scene bounds"));
            }
            if obstacles.iter().any(|o| o.contains(&d.position)) {
                out.push(format!("drones[{i}] starts inside an obstacle"));
            }
            if targets.iter().any(|t| (t.position - d.position).norm() < p.d_s) {
                out.push(format!("drones[{i}] starts closer than d_s to a target"));
            }
            for (j, e) in self.drones.iter().enumerate().skip(i + 1) {
                if (d.position - e.position).norm() < p.min_drone_distance {
                    out.push(format!("drones[{i}] and drones[{j}] start closer than min_drone_distance"));
                }
            }
            if let Some(DroneGoal::Framing { framing }) = &d.goal {
                let known = self.catalog.clone().unwrap_or_else(skyframe_core::coordinator::framing_catalog);
                if !known.iter().any(|f| &f.name == framing) {
                    out.push(format!("drones[{i}].goal names unknown framing {framing}"));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> SimResult<()> {
        let problems = self.lint();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(problems.join("; ")))
        }
    }
}
