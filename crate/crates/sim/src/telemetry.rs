//! Per-tick records (the telemetry stream and protocol deltas) and full
//! state snapshots. Nothing here depends on wall-clock time.

use serde::{Deserialize, Serialize};
use skyframe_core::camera::Screen;
use skyframe_core::coordinator::{Conflict, Score};
use skyframe_core::geometry::{Obstacle, Vec3};
use skyframe_core::roadmap::SceneModel;

use crate::export::SplineExport;
use crate::protocol::DroneMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub position: Vec3,
    pub yaw: f64,
    pub radius: f64,
}

/// What a drone is asked to show: screen position per framed target, the
/// primary target's apparent size and the direction from the primary target
/// to the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramingSpec {
    pub targets: Vec<usize>,
    pub screens: Vec<Screen>,
    /// Angular diameter of the primary target over the horizontal FOV.
    pub size: f64,
    pub view: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneRecord {
    pub id: usize,
    pub mode: DroneMode,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw: f64,
    pub tilt: f64,
    /// Arc length reached on the active path.
    pub u: f64,
    pub tracking_error: f64,
    pub goal: Vec3,
    pub framing: Option<String>,
    pub desired: Option<FramingSpec>,
    pub path_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Framing,
    Position,
    Sketch,
    LeadIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanReason {
    Initial,
    Command,
    /// A node of the active path became untraversable.
    Blocked,
    Reassigned,
    TargetMoved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    CommandApplied {
        id: Option<u64>,
        command: String,
    },
    CommandRejected {
        id: Option<u64>,
        command: String,
        message: String,
    },
    Plan {
        drone: usize,
        kind: PlanKind,
        reason: PlanReason,
        /// Blocked node that triggered the plan.
        node: Option<usize>,
        ok: bool,
        nodes: usize,
        message: Option<String>,
    },
    Assignment {
        framings: Vec<Option<String>>,
        reassigned: Vec<usize>,
        closure: Vec<usize>,
    },
    MasterSwitched {
        from: usize,
        to: usize,
    },
    PathFinished {
        drone: usize,
    },
    /// The state was pushed back inside the safety limits.
    SafetyClamp {
        drone: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictCounts {
    pub hard: usize,
    pub soft: usize,
}

/// One line of the telemetry stream and the body of a state delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub master: usize,
    pub targets: Vec<TargetRecord>,
    pub obstacles: Vec<Obstacle>,
    pub drones: Vec<DroneRecord>,
    pub conflicts: ConflictCounts,
    pub events: Vec<Event>,
}

/// Overlays of one drone. Polylines are sampled server side.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathView {
    /// Submitted sketch (red overlay).
    pub sketch: Option<Vec<Vec3>>,
    /// Planned path being flown or queued (green overlay).
    pub planned: Option<Vec<Vec3>>,
    /// Lead-in from the drone to the sketch start (blue overlay).
    pub lead_in: Option<Vec<Vec3>>,
    pub spline: Option<SplineExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentView {
    /// Drone ids under coordination, in coordinator order.
    pub drones: Vec<usize>,
    pub framings: Vec<String>,
    pub destinations: Vec<Option<Vec3>>,
    pub conflicts: Vec<Conflict>,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub record: TickRecord,
    pub paused: bool,
    pub pending_commands: usize,
    pub scene: SceneModel,
    pub catalog: Vec<String>,
    pub paths: Vec<PathView>,
    pub assignment: Option<AssignmentView>,
}
