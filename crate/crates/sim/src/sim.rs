//! The authoritative tick loop.
//!
//! Each tick runs, in order: advance scripted targets and obstacles; retag
//! the roadmap (dynamic obstacles plus the master's frustum); repair the
//! framing assignment on new conflicts; validate active paths and replan;
//! smooth the new paths; step the followers; orient every camera; emit the
//! tick record. Operator commands are applied at the tick boundary, before
//! the first step.

use std::collections::{BTreeSet, VecDeque};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use skyframe_core::camera::{project, CameraIntrinsics, DroneConfig, Frustum, Screen};
use skyframe_core::coordinator::{
    framing_catalog, instantiate, Assignment, Conflict, CoordinationParams, Coordinator, DroneView, Framing, Severity,
};
use skyframe_core::dts::{build_surface, subtended_angle, Target};
use skyframe_core::follower::{FollowMode, Follower, Goal, Gains, SimDroneState, simulate_step};
use skyframe_core::geometry::{Disk, Obstacle, Vec3};
use skyframe_core::manipulators::{
    avoid_collision, manipulate_dolly, manipulate_position, manipulate_view_angle, world_manipulator, ManipContext,
};
use skyframe_core::orientation::{feasible_orientation, OrientationParams, ScreenGoal};
use skyframe_core::planner::{plan_framing_path, plan_sketch_path, validate_path, FramingQuery, NodePath, SketchParams};
use skyframe_core::roadmap::{build_roadmap, Roadmap, RoadmapGraph, RoadmapSnapshot, FLAG_FRUSTUM};
use skyframe_core::smoother::{fit_c4_spline, optimize_spline, TrajectorySpline};

use crate::error::{SimError, SimResult};
use crate::export::SplineExport;
use crate::protocol::{Command, DroneMode, Manipulation};
use crate::scenario::{DroneGoal, Scenario};
use crate::telemetry::{
    AssignmentView, ConflictCounts, DroneRecord, Event, FramingSpec, PathView, PlanKind, PlanReason, Snapshot,
    TargetRecord, TickRecord,
};

/// Snapshot period in ticks (10 Hz at 50 Hz ticks).
pub const SNAPSHOT_EVERY: u64 = 5;
/// Ticks to wait before retrying a failed plan.
pub const RETRY_TICKS: u64 = 25;
/// Min-conflict step limit for fresh assignments.
const ASSIGN_STEPS: usize = 100;
/// Overlay samples per spline piece.
const OVERLAY_SAMPLES: usize = 8;
/// Distance under which a finished path counts as arrived.
const ARRIVAL_TOL: f64 = 1e-2;
/// Largest spacing of sketch points handed to the search, meters.
pub const SKETCH_STEP: f64 = 0.5;
/// Largest screen offset used for derived two-target framings.
const MAX_SCREEN: f64 = 0.95;

/// A smoothed path ready to fly.
#[derive(Debug, Clone)]
pub struct PreparedPath {
    pub kind: PlanKind,
    pub path: NodePath,
    /// Path node index of every spline knot.
    pub knot_nodes: Vec<usize>,
    pub spline: TrajectorySpline,
    pub follower: Follower,
    pub smooth_iterations: usize,
    /// Planned through the master's frustum; validated without its tags.
    pub through_frustum: bool,
}

impl PreparedPath {
    pub fn end(&self) -> Vec3 {
        self.spline.end()
    }

    /// Path nodes not yet passed, given the follower's arc length.
    fn remaining(&self) -> NodePath {
        let s = self.follower.table.param(self.follower.u);
        let piece = (s.floor() as usize).min(self.knot_nodes.len().saturating_sub(2));
        let from = self.knot_nodes.get(piece + 1).copied().unwrap_or(self.path.nodes.len());
        NodePath {
            nodes: self.path.nodes[from.min(self.path.nodes.len())..].to_vec(),
            cost: 0.0,
        }
    }
}

/// Operator goal of a manually positioned drone.
#[derive(Debug, Clone, PartialEq)]
pub struct ManualGoal {
    pub config: DroneConfig,
    pub screens: Option<Vec<Screen>>,
    /// Orientation fixed by a world manipulation.
    pub look: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct DroneRuntime {
    pub id: usize,
    pub mode: DroneMode,
    pub state: SimDroneState,
    /// Catalog framing (auto and framing modes).
    pub framing: Option<usize>,
    pub manual: Option<ManualGoal>,
    pub sketch: Option<Vec<Vec3>>,
    pub accel: f64,
    pub active: Option<PreparedPath>,
    pub queued: Option<PreparedPath>,
    /// Fixed goal while no path is active.
    pub hold: Vec3,
    /// End point of the last plan request.
    pub destination: Option<Vec3>,
    pub desired: Option<FramingSpec>,
    pub goal: Vec3,
    pub u: f64,
    pub tracking_error: f64,
    retry_at: Option<u64>,
}

impl DroneRuntime {
    pub fn config(&self) -> DroneConfig {
        DroneConfig::looking(self.state.position, self.state.yaw, self.state.tilt)
    }
}

#[derive(Debug, Clone)]
pub struct PendingCommand {
    pub id: Option<u64>,
    pub command: Command,
}

/// Result of submitting a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submitted {
    /// Control command, applied at once.
    Applied,
    /// Applied at the next tick boundary.
    Queued,
}

/// Everything the tick loop mutates.
#[derive(Debug, Clone)]
pub struct TickState {
    pub tick: u64,
    pub time: f64,
    pub drones: Vec<DroneRuntime>,
    pub targets: Vec<Target>,
    /// Dynamic obstacles at their current pose.
    pub obstacles: Vec<Obstacle>,
    pub master: usize,
    pub paused: bool,
    pub step_budget: u32,
    pub pending: VecDeque<PendingCommand>,
}

/// Timing and outcome of one plan request. Kept out of the telemetry
/// stream because durations depend on the machine.
#[derive(Debug, Clone)]
pub struct PlanLog {
    pub tick: u64,
    pub drone: usize,
    pub kind: PlanKind,
    pub reason: PlanReason,
    pub ok: bool,
    pub nodes: usize,
    pub search_ms: f64,
    pub smooth_ms: f64,
    pub smooth_iterations: usize,
    pub spline: Option<SplineExport>,
}

#[derive(Debug, Clone)]
enum JobGoal {
    Point(Vec3),
    Sketch(Vec<Vec3>),
}

#[derive(Debug, Clone)]
struct PlanJob {
    drone: usize,
    kind: PlanKind,
    reason: PlanReason,
    node: Option<usize>,
    start: Vec3,
    goal: JobGoal,
    query: FramingQuery,
    snapshot: RoadmapSnapshot,
    /// Snapshot without frustum tags, tried when a slave finds no path.
    fallback: Option<RoadmapSnapshot>,
    sketch: SketchParams,
    accel: f64,
}

struct PlanOutcome {
    job: PlanJob,
    result: Result<(PreparedPath, Option<PreparedPath>), String>,
    search_ms: f64,
    smooth_ms: f64,
}

/// Coordination over the drones in auto or framing mode.
struct CoordState {
    members: Vec<usize>,
    master: usize,
    coordinator: Coordinator,
    assignment: Assignment,
}

pub struct Sim {
    pub scenario: Scenario,
    pub intrinsics: CameraIntrinsics,
    pub catalog: Vec<Framing>,
    pub roadmap: Roadmap,
    pub state: TickState,
    pub plan_log: Vec<PlanLog>,
    coord: Option<CoordState>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    events: Vec<Event>,
    requests: Vec<(usize, PlanReason, Option<usize>)>,
    coord_params: CoordinationParams,
    last_record: Option<TickRecord>,
}

fn targets_at(s: &Scenario, t: f64) -> Vec<Target> {
    s.targets.iter().map(|x| x.at(t)).collect()
}

fn obstacles_at(s: &Scenario, t: f64) -> Vec<Obstacle> {
    s.dynamic_obstacles.iter().map(|o| o.at(t)).collect()
}

/// Angular diameter of a target over the horizontal field of view.
pub fn apparent_size(camera: &Vec3, target: &Target, intr: &CameraIntrinsics) -> f64 {
    let d = (target.position - camera).norm().max(1e-12);
    2.0 * (target.radius / d).min(1.0).asin() / intr.hfov
}

/// Desired framing at `position` for the given targets: the screen
/// positions an aimed camera there would use, the apparent size of the
/// first target and the direction from it to the camera.
pub fn derive_spec(position: &Vec3, ids: &[usize], targets: &[Target], intr: &CameraIntrinsics, screens: Option<&[Screen]>) -> FramingSpec {
    let pts: Vec<Vec3> = ids.iter().map(|&i| targets[i].position).collect();
    let screens = match screens {
        Some(s) => s.to_vec(),
        None if pts.len() == 2 => {
            let a = subtended_angle(position, &pts[0], &pts[1]);
            let sx = ((a / 2.0).tan() / intr.tan_half_h()).min(MAX_SCREEN);
            let view = DroneView::aimed(*position, &pts);
            let cfg = DroneConfig::looking(*position, view.yaw, view.tilt);
            let xa = project(&cfg, intr, &pts[0]).map_or(0.0, |p| p.screen.x);
            let xb = project(&cfg, intr, &pts[1]).map_or(0.0, |p| p.screen.x);
            if xa <= xb {
                vec![Screen::new(-sx, 0.0), Screen::new(sx, 0.0)]
            } else {
                vec![Screen::new(sx, 0.0), Screen::new(-sx, 0.0)]
            }
        }
        None => vec![Screen::zeros(); pts.len()],
    };
    let primary = &targets[ids[0]];
    let v = position - primary.position;
    FramingSpec {
        targets: ids.to_vec(),
        screens,
        size: apparent_size(position, primary, intr),
        view: if v.norm() > 1e-12 { v.normalize() } else { Vec3::z() },
    }
}

/// Insert points so consecutive sketch points are at most `step` apart.
/// The sketch search advances one sketch index per roadmap hop, so sparse
/// strokes would otherwise be unreachable.
pub fn densify_sketch(points: &[Vec3], step: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(points.len());
    for w in points.windows(2) {
        let n = ((w[1] - w[0]).norm() / step).ceil().max(1.0) as usize;
        out.extend((0..n).map(|k| w[0] + (w[1] - w[0]) * (k as f64 / n as f64)));
    }
    out.extend(points.last().copied());
    out
}

/// Drop consecutive near-duplicate vertices, keeping their node index.
fn knots_of(positions: &[Vec3], disks: &[Disk]) -> (Vec<Vec3>, Vec<Disk>, Vec<usize>) {
    let (mut p, mut d, mut idx) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (x, disk)) in positions.iter().zip(disks).enumerate() {
        if p.last().is_some_and(|l: &Vec3| (l - x).norm() <= 1e-9) {
            continue;
        }
        p.push(*x);
        d.push(*disk);
        idx.push(i);
    }
    (p, d, idx)
}

/// Speed, acceleration and step limits handed to followers.
#[derive(Debug, Clone, Copy)]
struct Limits {
    vmax: f64,
    amax: f64,
    dt: f64,
}

fn prepare(path: NodePath, graph: &RoadmapGraph, kind: PlanKind, mode: FollowMode, lim: Limits, accel: f64) -> PreparedPath {
    let (points, disks, knot_nodes) = knots_of(&path.positions(graph), &path.disks(graph));
    let (spline, smooth_iterations, knot_nodes) = if points.len() < 2 {
        (fit_c4_spline(&points), 0, vec![0, 0])
    } else {
        let r = optimize_spline(&fit_c4_spline(&points), &disks);
        (r.spline, r.iterations, knot_nodes)
    };
    let mut follower = Follower::new(&spline, mode, lim.vmax, lim.amax, lim.dt);
    follower.set_command(accel);
    PreparedPath {
        kind,
        path,
        knot_nodes,
        spline,
        follower,
        smooth_iterations,
        through_frustum: false,
    }
}

fn nearest_free_node(snapshot: &RoadmapSnapshot, p: &Vec3) -> Option<usize> {
    let g = &snapshot.graph;
    match g.nearest_node(p) {
        Some(n) if snapshot.traversable(n) => Some(n),
        _ => (0..g.node_count())
            .filter(|&n| snapshot.traversable(n))
            .min_by(|&a, &b| {
                (g.portals[a].center - p)
                    .norm_squared()
                    .total_cmp(&(g.portals[b].center - p).norm_squared())
                    .then(a.cmp(&b))
            }),
    }
}

fn run_job(job: PlanJob, lim: Limits) -> PlanOutcome {
    let graph = &job.snapshot.graph;
    let t0 = Instant::now();
    let mut through_frustum = false;
    let searched: Result<(NodePath, Option<NodePath>), String> = match &job.goal {
        JobGoal::Point(goal) => plan_framing_path(&job.start, goal, &job.snapshot, &job.query)
            .or_else(|e| match &job.fallback {
                Some(open) => {
                    through_frustum = true;
                    plan_framing_path(&job.start, goal, open, &job.query)
                }
                None => Err(e),
            })
            .map(|p| (p, None))
            .map_err(|e| e.to_string()),
        JobGoal::Sketch(points) => (|| {
            let start = nearest_free_node(&job.snapshot, &points[0]).ok_or("no traversable roadmap node")?;
            let main = plan_sketch_path(&densify_sketch(points, SKETCH_STEP), start, &job.snapshot, &job.sketch).map_err(|e| e.to_string())?;
            let first = main.positions(graph)[0];
            let lead = plan_framing_path(&job.start, &first, &job.snapshot, &job.query).map_err(|e| format!("lead-in: {e}"))?;
            Ok((main, Some(lead)))
        })(),
    };
    let search_ms = t0.elapsed().as_secs_f64() * 1e3;
    let t1 = Instant::now();
    let result = searched.map(|(main, lead)| match lead {
        None => {
            let mut p = prepare(main, graph, job.kind, FollowMode::Timed, lim, 0.0);
            p.through_frustum = through_frustum;
            (p, None)
        }
        Some(lead) => (
            prepare(lead, graph, PlanKind::LeadIn, FollowMode::Timed, lim, 0.0),
            Some(prepare(main, graph, PlanKind::Sketch, FollowMode::User, lim, job.accel)),
        ),
    });
    let smooth_ms = t1.elapsed().as_secs_f64() * 1e3;
    PlanOutcome {
        job,
        result,
        search_ms,
        smooth_ms,
    }
}

impl Sim {
    pub fn new(scenario: Scenario) -> SimResult<Self> {
        scenario.validate()?;
        let roadmap = build_roadmap(&scenario.scene, &scenario.roadmap_params())?;
        Self::with_roadmap(scenario, roadmap)
    }

    /// Start from a prebuilt (for example cached) roadmap of the same scene.
    pub fn with_roadmap(scenario: Scenario, roadmap: Roadmap) -> SimResult<Self> {
        scenario.validate()?;
        if roadmap.graph.scene != scenario.scene {
            return Err(SimError::Invalid("roadmap was built for a different scene".into()));
        }
        let p = scenario.params;
        let intrinsics = CameraIntrinsics::from_diagonal(p.fov_deg.to_radians(), p.aspect);
        let catalog = scenario.catalog.clone().unwrap_or_else(framing_catalog);
        let coord_params = CoordinationParams {
            safety: p.d_s,
            min_distance: p.min_drone_distance,
            intrinsics,
            ..CoordinationParams::default()
        };
        let targets = targets_at(&scenario, 0.0);
        let mut drones = Vec::new();
        let mut requests = Vec::new();
        for (id, d) in scenario.drones.iter().enumerate() {
            let mut state = SimDroneState::at(d.position);
            state.yaw = d.yaw;
            state.tilt = d.tilt;
            let mut rt = DroneRuntime {
                id,
                mode: DroneMode::Manual,
                state,
                framing: None,
                manual: None,
                sketch: None,
                accel: 0.0,
                active: None,
                queued: None,
                hold: d.position,
                destination: None,
                desired: None,
                goal: d.position,
                u: 0.0,
                tracking_error: 0.0,
                retry_at: None,
            };
            match d.goal.clone().unwrap_or(DroneGoal::Hold) {
                DroneGoal::Hold => {}
                DroneGoal::Position { position } => {
                    rt.manual = Some(ManualGoal {
                        config: DroneConfig::at(position),
                        screens: None,
                        look: None,
                    });
                    requests.push((id, PlanReason::Initial, None));
                }
                DroneGoal::Framing { framing } => {
                    rt.mode = DroneMode::Framing;
                    rt.framing = catalog.iter().position(|f| f.name == framing);
                }
                DroneGoal::Auto => rt.mode = DroneMode::Auto,
                DroneGoal::Sketch { points, accel } => {
                    rt.mode = DroneMode::Sketch;
                    rt.sketch = Some(points);
                    rt.accel = accel.clamp(-p.amax, p.amax);
                    requests.push((id, PlanReason::Initial, None));
                }
            }
            drones.push(rt);
        }
        let obstacles = obstacles_at(&scenario, 0.0);
        let noise = (p.position_noise > 0.0).then(|| Normal::new(0.0, p.position_noise).expect("valid noise"));
        let state = TickState {
            tick: 0,
            time: 0.0,
            drones,
            targets,
            obstacles,
            master: scenario.master(),
            paused: false,
            step_budget: 0,
            pending: VecDeque::new(),
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(p.seed),
            scenario,
            intrinsics,
            catalog,
            roadmap,
            state,
            plan_log: Vec::new(),
            coord: None,
            noise,
            events: Vec::new(),
            requests,
            coord_params,
            last_record: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.scenario.params.dt
    }

    pub fn framing_index(&self, name: &str) -> Option<usize> {
        self.catalog.iter().position(|f| f.name == name)
    }

    /// Hand a command to the simulation. Control commands act at once;
    /// the rest wait for the next tick that actually runs.
    pub fn submit(&mut self, id: Option<u64>, command: Command) -> SimResult<Submitted> {
        command.validate(self.state.drones.len())?;
        match command {
            Command::Pause => self.state.paused = true,
            Command::Resume => {
                self.state.paused = false;
                self.state.step_budget = 0;
            }
            Command::Step { ticks } => self.state.step_budget = self.state.step_budget.saturating_add(ticks),
            _ => {
                self.state.pending.push_back(PendingCommand { id, command });
                return Ok(Submitted::Queued);
            }
        }
        self.events.push(Event::CommandApplied {
            id,
            command: command.name().to_string(),
        });
        Ok(Submitted::Applied)
    }

    /// True when the next call to [`Sim::tick`] advances time.
    pub fn can_advance(&self) -> bool {
        !self.state.paused || self.state.step_budget > 0
    }

    /// Run one tick. Returns `None` while paused with no step budget.
    pub fn tick(&mut self) -> Option<TickRecord> {
        if !self.can_advance() {
            return None;
        }
        if self.state.paused {
            self.state.step_budget -= 1;
        }
        while let Some(PendingCommand { id, command }) = self.state.pending.pop_front() {
            let name = command.name().to_string();
            match self.apply(command) {
                Ok(()) => self.events.push(Event::CommandApplied { id, command: name }),
                Err(e) => self.events.push(Event::CommandRejected {
                    id,
                    command: name,
                    message: e.to_string(),
                }),
            }
        }
        self.state.tick += 1;
        self.state.time = self.state.tick as f64 * self.dt();
        self.advance_scene();
        self.update_roadmap();
        self.coordinate();
        self.replan();
        self.step_followers();
        self.orient();
        let record = self.record();
        self.last_record = Some(record.clone());
        Some(record)
    }

    /// (1) Scripted targets and obstacles.
    fn advance_scene(&mut self) {
        let t = self.state.time;
        self.state.targets = targets_at(&self.scenario, t);
        self.state.obstacles = obstacles_at(&self.scenario, t);
    }

    pub fn master_frustum(&self) -> Frustum {
        let m = &self.state.drones[self.state.master];
        Frustum::new(&m.config(), self.intrinsics, self.coord_params.near, self.coord_params.far)
    }

    /// (2) Dynamic obstacle and master frustum tags.
    fn update_roadmap(&mut self) {
        let frustum = self.master_frustum();
        let obstacles = self.state.obstacles.clone();
        self.roadmap.update_dynamic(&obstacles, &[frustum]);
    }

    /// Roadmap view for one drone. The master ignores its own frustum.
    pub fn snapshot_for(&self, drone: usize) -> RoadmapSnapshot {
        if drone == self.state.master {
            self.unmasked_snapshot()
        } else {
            self.roadmap.snapshot()
        }
    }

    fn unmasked_snapshot(&self) -> RoadmapSnapshot {
        let snap = self.roadmap.snapshot();
        RoadmapSnapshot {
            graph: snap.graph,
            flags: std::sync::Arc::new(snap.flags.iter().map(|f| f & !FLAG_FRUSTUM).collect()),
        }
    }

    fn framed_targets(&self, drone: usize) -> Vec<usize> {
        let n = self.state.targets.len();
        match self.state.drones[drone].framing {
            Some(f) => (0..self.catalog[f].arity.min(n)).collect(),
            None => (0..n.min(2)).collect(),
        }
    }

    fn members(&self) -> Vec<usize> {
        self.state
            .drones
            .iter()
            .filter(|d| matches!(d.mode, DroneMode::Auto | DroneMode::Framing))
            .map(|d| d.id)
            .collect()
    }

    fn build_coordination(&mut self, members: Vec<usize>) {
        let master = members.iter().position(|&d| d == self.state.master).unwrap_or(0);
        let positions = members.iter().map(|&d| self.state.drones[d].state.position).collect();
        let mut coordinator = Coordinator::new(self.catalog.clone(), self.state.targets.clone(), positions, master, self.coord_params)
            .with_scene(self.scenario.scene.clone());
        let mut pinned = Vec::new();
        for (i, &d) in members.iter().enumerate() {
            let dr = &self.state.drones[d];
            if let (DroneMode::Framing, Some(f)) = (dr.mode, dr.framing) {
                pinned.push((i, f));
                coordinator.pinned.insert(i);
            }
        }
        let assignment = coordinator.min_conflict_assign(ASSIGN_STEPS, &pinned);
        self.events.push(Event::Assignment {
            framings: self.framing_names(&members, &assignment),
            reassigned: members.clone(),
            closure: Vec::new(),
        });
        for (i, &d) in members.iter().enumerate() {
            self.state.drones[d].framing = Some(assignment.framings[i]);
        }
        self.coord = Some(CoordState {
            members,
            master,
            coordinator,
            assignment,
        });
    }

    fn framing_names(&self, members: &[usize], a: &Assignment) -> Vec<Option<String>> {
        let mut out = vec![None; self.state.drones.len()];
        for (i, &d) in members.iter().enumerate() {
            out[d] = Some(self.catalog[a.framings[i]].name.clone());
        }
        out
    }

    /// (3) Framing assignment upkeep and local repair on new conflicts.
    fn coordinate(&mut self) {
        let members = self.members();
        if members.is_empty() {
            self.coord = None;
        } else {
            let master = members.iter().position(|&d| d == self.state.master).unwrap_or(0);
            let stale = self.coord.as_ref().is_none_or(|c| c.members != members || c.master != master);
            if stale {
                self.build_coordination(members.clone());
            } else {
                let targets = self.state.targets.clone();
                let positions: Vec<Vec3> = members.iter().map(|&d| self.state.drones[d].state.position).collect();
                let framings: Vec<usize> = members.iter().map(|&d| self.state.drones[d].framing.unwrap_or(0)).collect();
                let c = self.coord.as_mut().unwrap();
                if c.coordinator.targets != targets {
                    c.coordinator.set_targets(targets);
                }
                c.coordinator.pinned = members
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| self.state.drones[d].mode == DroneMode::Framing)
                    .map(|(i, _)| i)
                    .collect();
                let current = c.coordinator.evaluate(&framings);
                let before: BTreeSet<&Conflict> = c.assignment.conflicts.iter().collect();
                let fresh: Vec<Conflict> = current.conflicts.iter().filter(|x| !before.contains(x)).cloned().collect();
                if fresh.is_empty() {
                    c.assignment = current;
                } else {
                    c.coordinator.set_positions(positions);
                    let outcome = c.coordinator.local_repair(&current, &fresh);
                    c.assignment = outcome.assignment;
                    if !outcome.reassigned.is_empty() {
                        let reassigned = outcome.reassigned.iter().map(|&i| members[i]).collect();
                        let closure = outcome.closure.iter().map(|&i| members[i]).collect();
                        let a = c.assignment.clone();
                        self.events.push(Event::Assignment {
                            framings: self.framing_names(&members, &a),
                            reassigned,
                            closure,
                        });
                    }
                }
                let a = self.coord.as_ref().unwrap().assignment.clone();
                for (i, &d) in members.iter().enumerate() {
                    self.state.drones[d].framing = Some(a.framings[i]);
                }
            }
        }
        self.request_framing_plans();
    }

    /// Destination of a framing drone and the plan reason when it moved.
    fn request_framing_plans(&mut self) {
        let Some(c) = &self.coord else { return };
        let drift = self.scenario.params.replan_drift;
        let mut wanted = Vec::new();
        for (i, &d) in c.members.iter().enumerate() {
            let dest = c.assignment.destinations[i];
            let dr = &self.state.drones[d];
            let reason = match (dest, dr.destination) {
                (None, _) => None,
                (Some(_), None) => Some(if self.state.tick <= 1 { PlanReason::Initial } else { PlanReason::Reassigned }),
                (Some(a), Some(b)) if (a - b).norm() > drift => {
                    let same_framing = dr.desired.as_ref().is_some_and(|s| s.targets == self.framed_targets(d));
                    Some(if same_framing { PlanReason::TargetMoved } else { PlanReason::Reassigned })
                }
                _ => None,
            };
            if let Some(r) = reason {
                wanted.push((d, r));
            }
        }
        for (d, r) in wanted {
            if !self.requests.iter().any(|q| q.0 == d) {
                self.requests.push((d, r, None));
            }
        }
    }

    fn destination_of(&self, drone: usize) -> Option<Vec3> {
        if let Some(c) = &self.coord {
            if let Some(i) = c.members.iter().position(|&m| m == drone) {
                return c.assignment.destinations[i];
            }
        }
        let d = &self.state.drones[drone];
        match d.mode {
            DroneMode::Manual => d.manual.as_ref().map(|m| m.config.position),
            DroneMode::Auto | DroneMode::Framing => {
                let f = d.framing?;
                let arity = self.catalog[f].arity;
                instantiate(&self.catalog[f], self.state.targets.get(..arity)?, self.scenario.params.d_s)
                    .ok()?
                    .center()
            }
            DroneMode::Sketch => None,
        }
    }

    fn query_for(&self, drone: usize) -> FramingQuery {
        let p = &self.scenario.params;
        let b = &self.scenario.scene.bounds;
        let targets = self.framed_targets(drone).iter().map(|&i| self.state.targets[i]).collect();
        FramingQuery::new(targets, p.d_s, b.min.z, b.max.z, p.w_o)
    }

    /// (4) and (5): validate paths, plan and smooth.
    fn replan(&mut self) {
        let tick = self.state.tick;
        // Blocked paths.
        for d in 0..self.state.drones.len() {
            if self.requests.iter().any(|q| q.0 == d) {
                continue;
            }
            let (snap, open) = (self.snapshot_for(d), self.unmasked_snapshot());
            let view = |p: &PreparedPath| if p.through_frustum { &open } else { &snap };
            let dr = &self.state.drones[d];
            let blocked = dr
                .active
                .as_ref()
                .and_then(|a| validate_path(&a.remaining(), view(a)))
                .or_else(|| dr.queued.as_ref().and_then(|q| validate_path(&q.path, view(q))));
            if let Some(node) = blocked {
                self.requests.push((d, PlanReason::Blocked, Some(node)));
            }
        }
        let requests = std::mem::take(&mut self.requests);
        let mut jobs = Vec::new();
        for (d, reason, node) in requests {
            let dr = &self.state.drones[d];
            if reason != PlanReason::Command && reason != PlanReason::Blocked && dr.retry_at.is_some_and(|t| tick < t) {
                continue;
            }
            let (kind, goal) = match dr.mode {
                DroneMode::Sketch => match &dr.sketch {
                    Some(s) => (PlanKind::Sketch, JobGoal::Sketch(s.clone())),
                    None => continue,
                },
                DroneMode::Manual => match self.destination_of(d) {
                    Some(p) => (PlanKind::Position, JobGoal::Point(p)),
                    None => continue,
                },
                DroneMode::Auto | DroneMode::Framing => match self.destination_of(d) {
                    Some(p) => (PlanKind::Framing, JobGoal::Point(p)),
                    None => continue,
                },
            };
            let p = &self.scenario.params;
            jobs.push(PlanJob {
                drone: d,
                kind,
                reason,
                node,
                start: dr.state.position,
                goal,
                query: self.query_for(d),
                snapshot: self.snapshot_for(d),
                fallback: (d != self.state.master).then(|| self.unmasked_snapshot()),
                sketch: SketchParams {
                    window: p.window,
                    max_deviation: p.max_deviation,
                    ..SketchParams::default()
                },
                accel: dr.accel,
            });
        }
        let lim = Limits {
            vmax: self.scenario.params.vmax,
            amax: self.scenario.params.amax,
            dt: self.dt(),
        };
        // Jobs run on snapshots in parallel; results apply in submission order.
        let outcomes: Vec<PlanOutcome> = if jobs.len() > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = jobs.into_iter().map(|j| s.spawn(move || run_job(j, lim))).collect();
                handles.into_iter().map(|h| h.join().expect("plan job panicked")).collect()
            })
        } else {
            jobs.into_iter().map(|j| run_job(j, lim)).collect()
        };
        for o in outcomes {
            self.apply_plan(o);
        }
    }

    fn apply_plan(&mut self, o: PlanOutcome) {
        let tick = self.state.tick;
        let job = o.job;
        let d = job.drone;
        let (ok, nodes, message, spline) = match &o.result {
            Ok((first, second)) => {
                let main = second.as_ref().unwrap_or(first);
                (true, main.path.nodes.len(), None, Some(SplineExport::from_spline(&main.spline)))
            }
            Err(e) => (false, 0, Some(e.clone()), None),
        };
        self.plan_log.push(PlanLog {
            tick,
            drone: d,
            kind: job.kind,
            reason: job.reason,
            ok,
            nodes,
            search_ms: o.search_ms,
            smooth_ms: o.smooth_ms,
            smooth_iterations: o.result.as_ref().map_or(0, |(a, b)| a.smooth_iterations + b.as_ref().map_or(0, |b| b.smooth_iterations)),
            spline,
        });
        self.events.push(Event::Plan {
            drone: d,
            kind: job.kind,
            reason: job.reason,
            node: job.node,
            ok,
            nodes,
            message,
        });
        let ids = self.framed_targets(d);
        let targets = self.state.targets.clone();
        let intr = self.intrinsics;
        let dr = &mut self.state.drones[d];
        match o.result {
            Ok((first, second)) => {
                let end = second.as_ref().unwrap_or(&first).end();
                dr.destination = Some(match &job.goal {
                    JobGoal::Point(p) => *p,
                    JobGoal::Sketch(_) => end,
                });
                dr.active = Some(first);
                dr.queued = second;
                dr.retry_at = None;
                dr.desired = match dr.mode {
                    DroneMode::Sketch => None,
                    DroneMode::Manual => dr.manual.as_ref().and_then(|m| {
                        m.look
                            .is_none()
                            .then(|| derive_spec(&m.config.position, &ids, &targets, &intr, m.screens.as_deref()))
                    }),
                    _ => Some(derive_spec(&end, &ids, &targets, &intr, None)),
                };
            }
            Err(_) => {
                dr.active = None;
                dr.queued = None;
                dr.hold = dr.state.position;
                dr.destination = match &job.goal {
                    JobGoal::Point(p) => Some(*p),
                    JobGoal::Sketch(_) => None,
                };
                dr.retry_at = Some(tick + RETRY_TICKS);
            }
        }
    }

    /// (6) Followers and the safety clamp.
    fn step_followers(&mut self) {
        let p = self.scenario.params;
        let dt = p.dt;
        let bounds = self.scenario.scene.bounds;
        let targets = self.state.targets.clone();
        for i in 0..self.state.drones.len() {
            let offset = match self.noise {
                Some(n) => Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng)),
                None => Vec3::zeros(),
            };
            let dr = &mut self.state.drones[i];
            let mut measured = dr.state;
            measured.position += offset;
            let mut finished = false;
            let mut next = if let Some(active) = dr.active.as_mut() {
                let (mut next, rep) = active.follower.step(&measured, dt);
                next.position -= offset;
                dr.u = rep.u;
                dr.goal = rep.goal;
                dr.tracking_error = (active.follower.table.point(rep.u) - dr.state.position).norm();
                let end = active.end();
                let settled = (next.position - end).norm() < ARRIVAL_TOL && next.velocity.norm() < ARRIVAL_TOL;
                let at_end = (rep.goal - end).norm() < 1e-9;
                finished = active.follower.finished() || (at_end && settled);
                next
            } else {
                let mut next = simulate_step(&measured, &Goal::fixed(dr.hold), dt, &Gains::default(), p.amax, p.vmax);
                next.position -= offset;
                dr.goal = dr.hold;
                dr.tracking_error = (dr.hold - dr.state.position).norm();
                next
            };
            if finished {
                let done = dr.active.take().unwrap();
                dr.hold = done.end();
                self.events.push(Event::PathFinished { drone: i });
                if let Some(q) = dr.queued.take() {
                    dr.active = Some(q);
                    dr.u = 0.0;
                }
            }
            // Safety: stay inside the scene and out of every target's
            // safety sphere.
            let mut clamped = false;
            let inside = bounds.closest_point(&next.position);
            if inside != next.position {
                next.position = inside;
                for k in 0..3 {
                    if next.position[k] <= bounds.min[k] || next.position[k] >= bounds.max[k] {
                        next.velocity[k] = 0.0;
                    }
                }
                clamped = true;
            }
            for t in &targets {
                let v = next.position - t.position;
                let dist = v.norm();
                if dist < p.d_s {
                    let n = if dist > 1e-12 { v / dist } else { Vec3::z() };
                    next.position = t.position + n * p.d_s;
                    let inward = next.velocity.dot(&n);
                    if inward < 0.0 {
                        next.velocity -= n * inward;
                    }
                    clamped = true;
                }
            }
            if clamped {
                self.events.push(Event::SafetyClamp { drone: i });
            }
            let dr = &mut self.state.drones[i];
            next.yaw = dr.state.yaw;
            next.tilt = dr.state.tilt;
            dr.state = next;
        }
    }

    /// (7) Camera orientation toward each drone's framing.
    fn orient(&mut self) {
        let p = self.scenario.params;
        let params = OrientationParams {
            tilt_range: p.tilt_range,
            epsilon: p.epsilon,
            ..OrientationParams::default()
        };
        for i in 0..self.state.drones.len() {
            let ids = self.framed_targets(i);
            let dr = &self.state.drones[i];
            if let Some((yaw, tilt)) = dr.manual.as_ref().and_then(|m| m.look).filter(|_| dr.mode == DroneMode::Manual) {
                let dr = &mut self.state.drones[i];
                dr.state.yaw = yaw;
                dr.state.tilt = tilt;
                continue;
            }
            let goals: Vec<ScreenGoal> = match &dr.desired {
                Some(spec) => spec
                    .targets
                    .iter()
                    .zip(&spec.screens)
                    .map(|(&t, s)| ScreenGoal {
                        target: self.state.targets[t].position,
                        screen: *s,
                    })
                    .collect(),
                None => ids
                    .iter()
                    .map(|&t| ScreenGoal {
                        target: self.state.targets[t].position,
                        screen: Screen::zeros(),
                    })
                    .collect(),
            };
            if goals.is_empty() {
                continue;
            }
            if let Ok(r) = feasible_orientation(&dr.state.position, &goals, &self.intrinsics, &params) {
                let dr = &mut self.state.drones[i];
                dr.state.yaw = r.yaw;
                dr.state.tilt = r.tilt;
            }
        }
    }

    fn conflict_counts(&self) -> ConflictCounts {
        match &self.coord {
            Some(c) => ConflictCounts {
                hard: c.assignment.conflicts.iter().filter(|x| x.severity() == Severity::Hard).count(),
                soft: c.assignment.conflicts.iter().filter(|x| x.severity() == Severity::Soft).count(),
            },
            None => ConflictCounts::default(),
        }
    }

    /// (8) The tick record.
    fn record(&mut self) -> TickRecord {
        let drones = self
            .state
            .drones
            .iter()
            .map(|d| DroneRecord {
                id: d.id,
                mode: d.mode,
                position: d.state.position,
                velocity: d.state.velocity,
                acceleration: d.state.acceleration,
                yaw: d.state.yaw,
                tilt: d.state.tilt,
                u: d.u,
                tracking_error: d.tracking_error,
                goal: d.goal,
                framing: d.framing.map(|f| self.catalog[f].name.clone()),
                desired: d.desired.clone(),
                path_active: d.active.is_some(),
            })
            .collect();
        TickRecord {
            tick: self.state.tick,
            t: self.state.time,
            master: self.state.master,
            targets: self
                .state
                .targets
                .iter()
                .map(|t| TargetRecord {
                    position: t.position,
                    yaw: t.orientation.z,
                    radius: t.radius,
                })
                .collect(),
            obstacles: self.state.obstacles.clone(),
            drones,
            conflicts: self.conflict_counts(),
            events: std::mem::take(&mut self.events),
        }
    }

    pub fn last_record(&self) -> Option<&TickRecord> {
        self.last_record.as_ref()
    }

    pub fn assignment(&self) -> Option<(&[usize], &Assignment)> {
        self.coord.as_ref().map(|c| (c.members.as_slice(), &c.assignment))
    }

    pub fn snapshot(&self) -> Snapshot {
        let record = self.last_record.clone().unwrap_or_else(|| TickRecord {
            tick: self.state.tick,
            t: self.state.time,
            master: self.state.master,
            targets: self
                .state
                .targets
                .iter()
                .map(|t| TargetRecord {
                    position: t.position,
                    yaw: t.orientation.z,
                    radius: t.radius,
                })
                .collect(),
            obstacles: self.state.obstacles.clone(),
            drones: Vec::new(),
            conflicts: self.conflict_counts(),
            events: Vec::new(),
        });
        let paths = self
            .state
            .drones
            .iter()
            .map(|d| {
                let main = match (&d.active, &d.queued) {
                    (_, Some(q)) => Some(q),
                    (Some(a), None) if a.kind != PlanKind::LeadIn => Some(a),
                    _ => None,
                };
                let lead = [&d.active, &d.queued]
                    .into_iter()
                    .flatten()
                    .find(|p| p.kind == PlanKind::LeadIn);
                PathView {
                    sketch: d.sketch.clone(),
                    planned: main.map(|p| SplineExport::sample(&p.spline, OVERLAY_SAMPLES)),
                    lead_in: lead.map(|p| SplineExport::sample(&p.spline, OVERLAY_SAMPLES)),
                    spline: main.map(|p| SplineExport::from_spline(&p.spline)),
                }
            })
            .collect();
        let assignment = self.coord.as_ref().map(|c| AssignmentView {
            drones: c.members.clone(),
            framings: c.assignment.framings.iter().map(|&f| self.catalog[f].name.clone()).collect(),
            destinations: c.assignment.destinations.clone(),
            conflicts: c.assignment.conflicts.clone(),
            score: c.assignment.score,
        });
        Snapshot {
            record,
            paused: self.state.paused,
            pending_commands: self.state.pending.len(),
            scene: self.scenario.scene.clone(),
            catalog: self.catalog.iter().map(|f| f.name.clone()).collect(),
            paths,
            assignment,
        }
    }

    fn stop(&mut self, d: usize) {
        let dr = &mut self.state.drones[d];
        dr.active = None;
        dr.queued = None;
        dr.hold = dr.state.position;
        dr.destination = None;
        dr.retry_at = None;
        self.requests.retain(|q| q.0 != d);
    }

    fn request(&mut self, d: usize) {
        self.requests.retain(|q| q.0 != d);
        self.requests.push((d, PlanReason::Command, None));
    }

    /// Apply a queued command at the tick boundary.
    fn apply(&mut self, command: Command) -> SimResult<()> {
        let amax = self.scenario.params.amax;
        match command {
            Command::SetMode { drone, mode } => {
                let dr = &mut self.state.drones[drone];
                if mode == DroneMode::Framing && dr.framing.is_none() {
                    return Err(SimError::Command("framing mode needs a framing; use assign_framing".into()));
                }
                if dr.mode == mode {
                    return Ok(());
                }
                dr.mode = mode;
                dr.manual = None;
                dr.desired = None;
                if mode != DroneMode::Sketch {
                    dr.sketch = None;
                }
                self.stop(drone);
            }
            Command::Manipulate { drone, manipulation } => self.manipulate(drone, manipulation)?,
            Command::SketchSubmit { drone, points, heights } => {
                let sketch: Vec<Vec3> = points.iter().zip(&heights).map(|(p, h)| Vec3::new(p[0], p[1], *h)).collect();
                let dr = &mut self.state.drones[drone];
                dr.mode = DroneMode::Sketch;
                dr.framing = None;
                dr.manual = None;
                dr.desired = None;
                dr.sketch = Some(sketch);
                self.request(drone);
            }
            Command::SetAccel { drone, accel } => {
                let dr = &mut self.state.drones[drone];
                dr.accel = accel.clamp(-amax, amax);
                for p in [&mut dr.active, &mut dr.queued].into_iter().flatten() {
                    if p.follower.mode == FollowMode::User {
                        p.follower.set_command(dr.accel);
                    }
                }
            }
            Command::SwitchMaster { drone } => {
                let from = self.state.master;
                if drone == from {
                    return Ok(());
                }
                if let Some(c) = self.coord.as_mut() {
                    let (a, b) = (c.members.iter().position(|&m| m == from), c.members.iter().position(|&m| m == drone));
                    if let (Some(_), Some(j)) = (a, b) {
                        let outcome = c.coordinator.switch_master(&c.assignment, j)?;
                        c.assignment = outcome.assignment;
                        c.master = j;
                        let members = c.members.clone();
                        let a = c.assignment.clone();
                        for (i, &d) in members.iter().enumerate() {
                            self.state.drones[d].framing = Some(a.framings[i]);
                        }
                        self.events.push(Event::Assignment {
                            framings: self.framing_names(&members, &a),
                            reassigned: outcome.reassigned.iter().map(|&i| members[i]).collect(),
                            closure: outcome.closure.iter().map(|&i| members[i]).collect(),
                        });
                    }
                }
                self.state.master = drone;
                self.events.push(Event::MasterSwitched { from, to: drone });
            }
            Command::AssignFraming { drone, framing } => {
                let f = self
                    .framing_index(&framing)
                    .ok_or_else(|| SimError::Command(format!("unknown framing {framing}")))?;
                if self.catalog[f].arity > self.state.targets.len() {
                    return Err(SimError::Command(format!("framing {framing} needs {} targets", self.catalog[f].arity)));
                }
                let was_member = matches!(self.state.drones[drone].mode, DroneMode::Auto | DroneMode::Framing);
                let dr = &mut self.state.drones[drone];
                dr.mode = DroneMode::Framing;
                dr.framing = Some(f);
                dr.manual = None;
                dr.sketch = None;
                self.stop(drone);
                if was_member {
                    if let Some(c) = self.coord.as_mut() {
                        if let Some(i) = c.members.iter().position(|&m| m == drone) {
                            c.coordinator.pinned.insert(i);
                        }
                    }
                }
            }
            Command::Pause | Command::Resume | Command::Step { .. } => unreachable!("control commands act at submit"),
        }
        Ok(())
    }

    fn manipulate(&mut self, drone: usize, m: Manipulation) -> SimResult<()> {
        let p = self.scenario.params;
        let ids = self.framed_targets(drone);
        let targets: Vec<Target> = ids.iter().map(|&i| self.state.targets[i]).collect();
        if targets.is_empty() {
            return Err(SimError::Command("no target to manipulate around".into()));
        }
        let dr = &self.state.drones[drone];
        let base = match (&dr.manual, dr.mode) {
            (Some(g), DroneMode::Manual) => g.clone(),
            _ => ManualGoal {
                config: dr.config(),
                screens: dr.desired.as_ref().map(|s| s.screens.clone()),
                look: None,
            },
        };
        let screens = base
            .screens
            .clone()
            .unwrap_or_else(|| derive_spec(&base.config.position, &ids, &self.state.targets, &self.intrinsics, None).screens);
        let bounds = self.scenario.scene.bounds;
        let ctx = ManipContext {
            intrinsics: self.intrinsics,
            orientation: OrientationParams {
                tilt_range: p.tilt_range,
                epsilon: p.epsilon,
                ..OrientationParams::default()
            },
            safety: p.d_s,
            floor: Some(bounds.min.z),
            ceiling: Some(bounds.max.z),
        };
        let surface = || -> SimResult<_> {
            let alpha = match targets.len() {
                1 => (base.config.position - targets[0].position).norm(),
                _ => subtended_angle(&base.config.position, &targets[0].position, &targets[1].position),
            };
            let s = build_surface(&targets[0], targets.get(1), alpha, p.d_s)?;
            let start = s.world_to_dts(&base.config.position)?;
            Ok((s, start))
        };
        let (config, new_screens, look) = match m {
            Manipulation::ViewAngle { dx, dy } => {
                let (s, start) = surface()?;
                let r = manipulate_view_angle(&s, start, (dy, dx), &screens, &ctx)?;
                (r.config, Some(screens.clone()), None)
            }
            Manipulation::Position { target, dx, dy } => {
                if targets.len() < 2 {
                    return Err(SimError::Command("position manipulation needs two framed targets".into()));
                }
                let (s, start) = surface()?;
                let mut wanted = [screens[0], screens[1]];
                wanted[target] += Screen::new(dx, dy);
                let r = manipulate_position(&s, start, &wanted, &ctx)?;
                (r.config, Some(wanted.to_vec()), None)
            }
            Manipulation::Dolly { dz } => {
                let r = manipulate_dolly(&base.config, &targets[0].position, dz, p.d_s)?;
                (r.config, Some(screens.clone()), None)
            }
            Manipulation::World { axis, delta } => {
                let c = world_manipulator(&base.config, axis, delta, p.tilt_range);
                (c, None, Some((c.yaw, c.tilt)))
            }
        };
        let mut obstacles = self.scenario.scene.obstacles.clone();
        obstacles.extend(self.state.obstacles.iter().copied());
        let inflated: Vec<Obstacle> = obstacles.iter().map(|o| o.inflate(self.roadmap.graph.params.inflation)).collect();
        let inner = bounds.inflate(-self.roadmap.graph.params.inflation);
        let position = avoid_collision(&config.position, &targets[0].position, &inflated, &inner, &base.config.position, p.d_s)?
            .position()
            .ok_or_else(|| SimError::Command("no collision-free position along the manipulation".into()))?;
        let goal = ManualGoal {
            config: DroneConfig { position, ..config },
            screens: new_screens,
            look,
        };
        let desired = goal
            .look
            .is_none()
            .then(|| derive_spec(&position, &ids, &self.state.targets, &self.intrinsics, goal.screens.as_deref()));
        let dr = &mut self.state.drones[drone];
        dr.mode = DroneMode::Manual;
        dr.sketch = None;
        dr.manual = Some(goal);
        dr.desired = desired;
        self.request(drone);
        Ok(())
    }
}
