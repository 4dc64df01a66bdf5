//! Multi-drone coordination: framing catalog, framing instances in the
//! drone toric space, conflict detection, min-conflict assignment and local
//! repair.
//!
//! One drone is the master (the live camera); the others are slaves holding
//! complementary viewpoints. Every drone is given a framing from the
//! catalog. An assignment is scored lexicographically by hard conflicts,
//! soft conflicts, then total travel cost.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, DroneConfig, Frustum};
use crate::dts::{build_surface, DtsSurface, Target};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::orientation::initial_orientation;
use crate::roadmap::{RoadmapSnapshot, SceneModel};

/// Per-edge bisection tolerance of the region/frustum test, in parameter units.
pub const EDGE_TOL: f64 = 1e-3;
const EDGE_SAMPLES: usize = 8;
const GRID: usize = 8;
const COST_EPS: f64 = 1e-9;

/// A named shot: an interval box in chart coordinates. For two targets
/// `alpha` is the angle subtended by the targets (radians), for one target
/// it is the distance to the target (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Framing {
    pub name: String,
    pub arity: usize,
    pub phi: (f64, f64),
    pub theta: (f64, f64),
    pub alpha: (f64, f64),
}

impl Framing {
    fn new(name: &str, arity: usize, phi: (f64, f64), theta: (f64, f64), alpha: (f64, f64)) -> Self {
        Self {
            name: name.to_string(),
            arity,
            phi,
            theta,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64), min: f64, max: f64| lo < hi && lo >= min && hi <= max;
        let alpha_ok = match self.arity {
            2 => self.alpha.0 > 0.0 && ok(self.alpha, 0.0, std::f64::consts::PI),
            1 => self.alpha.0 > 0.0 && self.alpha.0 < self.alpha.1,
            _ => false,
        };
        if ok(self.phi, -1.0, 1.0) && ok(self.theta, -1.0, 1.0) && alpha_ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("framing {} has an invalid box", self.name)))
        }
    }

    pub fn center(&self) -> DtsPoint {
        DtsPoint {
            phi: 0.5 * (self.phi.0 + self.phi.1),
            theta: 0.5 * (self.theta.0 + self.theta.1),
            alpha: 0.5 * (self.alpha.0 + self.alpha.1),
        }
    }

    /// Box point from unit coordinates.
    pub fn lerp(&self, u: f64, v: f64, w: f64) -> DtsPoint {
        let l = |(a, b): (f64, f64), t: f64| a + (b - a) * t;
        DtsPoint {
            phi: l(self.phi, u),
            theta: l(self.theta, v),
            alpha: l(self.alpha, w),
        }
    }
}

/// Default catalog. Two-target boxes sit on the `theta > 0` side of the line
/// of interest, so any pair of them respects the 180 degree rule. Theta near
/// 1 is behind target A, near 0 behind target B. Single-target boxes use
/// the first target; theta 0 is in front of it, positive theta on its left.
pub fn framing_catalog() -> Vec<Framing> {
    let level = (0.0, 0.25);
    vec![
        Framing::new("over_shoulder_a_close", 2, level, (0.78, 0.90), (0.60, 0.90)),
        Framing::new("over_shoulder_a_medium", 2, level, (0.78, 0.90), (0.35, 0.60)),
        Framing::new("over_shoulder_b_close", 2, level, (0.10, 0.22), (0.60, 0.90)),
        Framing::new("over_shoulder_b_medium", 2, level, (0.10, 0.22), (0.35, 0.60)),
        Framing::new("external_apex_a", 2, (0.05, 0.30), (0.63, 0.74), (0.40, 0.80)),
        Framing::new("external_apex_b", 2, (0.05, 0.30), (0.26, 0.37), (0.40, 0.80)),
        Framing::new("apex_low", 2, (-0.10, 0.10), (0.42, 0.58), (0.50, 0.90)),
        Framing::new("apex_high", 2, (0.30, 0.50), (0.42, 0.58), (0.50, 0.90)),
        Framing::new("front_close_up", 1, level, (0.02, 0.12), (1.5, 2.0)),
        Framing::new("front_medium", 1, level, (0.02, 0.12), (2.0, 3.0)),
        Framing::new("front_long", 1, level, (0.02, 0.12), (3.5, 4.5)),
        Framing::new("three_quarter_front_left", 1, level, (0.20, 0.30), (2.0, 3.0)),
        Framing::new("three_quarter_front_right", 1, level, (-0.30, -0.20), (2.0, 3.0)),
        Framing::new("profile_left", 1, level, (0.45, 0.55), (2.0, 3.0)),
        Framing::new("profile_right", 1, level, (-0.55, -0.45), (2.0, 3.0)),
        Framing::new("three_quarter_back", 1, level, (0.70, 0.80), (2.0, 3.0)),
        Framing::new("back", 1, level, (0.88, 0.98), (2.0, 3.0)),
    ]
}

/// Parse a catalog override (a JSON array of framings).
pub fn catalog_from_json(text: &str) -> Result<Vec<Framing>> {
    let catalog: Vec<Framing> = serde_json::from_str(text)?;
    for f in &catalog {
        f.validate()?;
    }
    Ok(catalog)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtsPoint {
    pub phi: f64,
    pub theta: f64,
    pub alpha: f64,
}

/// Geometric realization of a framing for concrete targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FramingInstance {
    pub framing: Framing,
    pub targets: Vec<Target>,
    pub safety: f64,
    /// No safe surface exists for this box (coincident targets).
    pub empty: bool,
    /// World positions of the 8 box corners, index bits (phi, theta, alpha).
    pub corners: [Vec3; 8],
}

/// Realize `framing` for `targets` (exactly `framing.arity` of them).
pub fn instantiate(framing: &Framing, targets: &[Target], safety: f64) -> Result<FramingInstance> {
    if targets.len() != framing.arity {
        return Err(Error::InvalidInput(format!(
            "framing {} needs {} targets, got {}",
            framing.name,
            framing.arity,
            targets.len()
        )));
    }
    let mut inst = FramingInstance {
        framing: framing.clone(),
        targets: targets.to_vec(),
        safety,
        empty: false,
        corners: [Vec3::zeros(); 8],
    };
    for k in 0..8 {
        let p = framing.lerp((k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64);
        match inst.point(&p) {
            Some(w) => inst.corners[k] = w,
            None => {
                inst.empty = true;
                break;
            }
        }
    }
    Ok(inst)
}

impl FramingInstance {
    fn surface(&self, alpha: f64) -> Option<DtsSurface> {
        build_surface(&self.targets[0], self.targets.get(1), alpha, self.safety).ok()
    }

    /// World position of a chart point, `None` when no surface exists.
    pub fn point(&self, p: &DtsPoint) -> Option<Vec3> {
        self.surface(p.alpha).map(|s| s.dts_to_world(p.phi, p.theta))
    }

    pub fn center(&self) -> Option<Vec3> {
        if self.empty {
            return None;
        }
        self.point(&self.framing.center())
    }

    pub fn primary_target(&self) -> Vec3 {
        self.targets[0].position
    }

    /// Grid of box points at cell midpoints, `GRID^3` of them, with their
    /// world positions. Surfaces are built once per alpha layer.
    fn grid(&self) -> Vec<(DtsPoint, Vec3)> {
        let mut out = Vec::with_capacity(GRID * GRID * GRID);
        let mid = |k: usize| (k as f64 + 0.5) / GRID as f64;
        for w in 0..GRID {
            let p0 = self.framing.lerp(0.0, 0.0, mid(w));
            let Some(surf) = self.surface(p0.alpha) else { continue };
            for v in 0..GRID {
                for u in 0..GRID {
                    let p = self.framing.lerp(mid(u), mid(v), mid(w));
                    out.push((p, surf.dts_to_world(p.phi, p.theta)));
                }
            }
        }
        out
    }
}

/// How much of an instance a frustum sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RegionVisibility {
    None,
    /// Centers (chart coordinates) of the seen part and, when any is left,
    /// of the unseen part.
    Partial { visible: DtsPoint, hidden: Option<DtsPoint> },
    Full,
}

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn corner_unit(k: usize) -> [f64; 3] {
    [(k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64]
}

fn mean_point(points: &[DtsPoint]) -> Option<DtsPoint> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    Some(DtsPoint {
        phi: points.iter().map(|p| p.phi).sum::<f64>() / n,
        theta: points.iter().map(|p| p.theta).sum::<f64>() / n,
        alpha: points.iter().map(|p| p.alpha).sum::<f64>() / n,
    })
}

/// Classify an instance against a frustum. Each box edge is sampled and
/// every in/out change is localized by bisection; partial results carry
/// the centers of the seen and unseen parts of the box.
pub fn region_frustum_visibility(inst: &FramingInstance, frustum: &Frustum) -> RegionVisibility {
    if inst.empty {
        return RegionVisibility::None;
    }
    let inside = |u: [f64; 3]| -> Option<bool> {
        let p = inst.framing.lerp(u[0], u[1], u[2]);
        inst.point(&p).map(|w| frustum.contains(&w))
    };
    let mut any_in = false;
    let mut any_out = false;
    let mut crossings = Vec::new();
    for &k in &[0usize, 1, 2, 3, 4, 5, 6, 7] {
        if frustum.contains(&inst.corners[k]) {
            any_in = true;
        } else {
            any_out = true;
        }
    }
    for (a, b) in EDGES {
        let (ua, ub) = (corner_unit(a), corner_unit(b));
        let at = |t: f64| [ua[0] + (ub[0] - ua[0]) * t, ua[1] + (ub[1] - ua[1]) * t, ua[2] + (ub[2] - ua[2]) * t];
        let mut prev_t = 0.0;
        let mut prev = frustum.contains(&inst.corners[a]);
        for s in 1..=EDGE_SAMPLES {
            let t = s as f64 / EDGE_SAMPLES as f64;
            let Some(cur) = inside(at(t)) else { continue };
            if cur != prev {
                let (mut lo, mut hi) = (prev_t, t);
                while hi - lo > EDGE_TOL {
                    let mid = 0.5 * (lo + hi);
                    if inside(at(mid)) == Some(prev) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let u = at(0.5 * (lo + hi));
                crossings.push(inst.framing.lerp(u[0], u[1], u[2]));
                any_in = true;
                any_out = true;
            }
            prev = cur;
            prev_t = t;
        }
    }
    match (any_in, any_out) {
        (true, false) => RegionVisibility::Full,
        (false, _) => RegionVisibility::None,
        (true, true) => {
            let grid = inst.grid();
            let seen: Vec<DtsPoint> = grid.iter().filter(|(_, w)| frustum.contains(w)).map(|(p, _)| *p).collect();
            let unseen: Vec<DtsPoint> = grid.iter().filter(|(_, w)| !frustum.contains(w)).map(|(p, _)| *p).collect();
            let visible = mean_point(&seen).or_else(|| mean_point(&crossings)).unwrap_or(inst.framing.center());
            RegionVisibility::Partial {
                visible,
                hidden: mean_point(&unseen),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConflictKind {
    Collision,
    MasterVisibility,
    SlaveVisibility,
    Angle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Hard,
    Soft,
}

impl ConflictKind {
    pub fn severity(self) -> Severity {
        match self {
            ConflictKind::Collision | ConflictKind::MasterVisibility => Severity::Hard,
            ConflictKind::SlaveVisibility | ConflictKind::Angle => Severity::Soft,
        }
    }
}

/// A conflict between drones. Visibility conflicts list the viewer first.
/// A collision with the environment has a single participant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub participants: Vec<usize>,
}

impl Conflict {
    pub fn severity(&self) -> Severity {
        self.kind.severity()
    }

    pub fn involves(&self, d: usize) -> bool {
        self.participants.contains(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinationParams {
    pub safety: f64,
    pub min_distance: f64,
    /// Radius of a drone for visibility and obstacle tests.
    pub drone_radius: f64,
    pub intrinsics: CameraIntrinsics,
    pub near: f64,
    pub far: f64,
    /// Soft angle conflict below this separation (radians).
    pub angle_threshold: f64,
}

impl Default for CoordinationParams {
    fn default() -> Self {
        Self {
            safety: 0.5,
            min_distance: 1.0,
            drone_radius: 0.15,
            intrinsics: CameraIntrinsics::default(),
            near: 0.05,
            far: 30.0,
            angle_threshold: 30f64.to_radians(),
        }
    }
}

/// A drone as seen by the conflict tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneView {
    pub position: Vec3,
    pub yaw: f64,
    pub tilt: f64,
    /// Target this drone is primarily filming.
    pub primary: Option<Vec3>,
    /// Destination is unusable (outside the scene, blocked or unreachable).
    pub blocked: bool,
}

impl DroneView {
    /// Camera at `position` aimed at the mean direction of `targets`.
    pub fn aimed(position: Vec3, targets: &[Vec3]) -> Self {
        let (yaw, tilt) = initial_orientation(&position, targets).map_or((0.0, 0.0), |(y, t, _)| (y, t));
        Self {
            position,
            yaw,
            tilt,
            primary: targets.first().copied(),
            blocked: false,
        }
    }

    pub fn frustum(&self, params: &CoordinationParams) -> Frustum {
        Frustum::new(&DroneConfig::looking(self.position, self.yaw, self.tilt), params.intrinsics, params.near, params.far)
    }
}

/// All conflicts among `drones` with `master` as the live camera. The
/// result is sorted.
pub fn detect_conflicts(drones: &[DroneView], master: usize, params: &CoordinationParams) -> Vec<Conflict> {
    let mut out = Vec::new();
    let frustums: Vec<Frustum> = drones.iter().map(|d| d.frustum(params)).collect();
    for (i, d) in drones.iter().enumerate() {
        if d.blocked {
            out.push(Conflict {
                kind: ConflictKind::Collision,
                participants: vec![i],
            });
        }
    }
    for i in 0..drones.len() {
        for j in 0..drones.len() {
            if i == j {
                continue;
            }
            let (a, b) = (&drones[i], &drones[j]);
            if i < j {
                if (a.position - b.position).norm() < params.min_distance {
                    out.push(Conflict {
                        kind: ConflictKind::Collision,
                        participants: vec![i, j],
                    });
                }
                if let (Some(ta), Some(tb)) = (a.primary, b.primary) {
                    if (ta - tb).norm() < 1e-9 {
                        let (da, db) = (ta - a.position, tb - b.position);
                        if da.norm() > 1e-9 && db.norm() > 1e-9 && da.angle(&db) < params.angle_threshold {
                            out.push(Conflict {
                                kind: ConflictKind::Angle,
                                participants: vec![i, j],
                            });
                        }
                    }
                }
            }
            if frustums[i].touches_sphere(&b.position, params.drone_radius) {
                let kind = if i == master { ConflictKind::MasterVisibility } else { ConflictKind::SlaveVisibility };
                out.push(Conflict {
                    kind,
                    participants: vec![i, j],
                });
            }
        }
    }
    out.sort();
    out
}

/// Lexicographic assignment score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub hard: usize,
    pub soft: usize,
    pub cost: f64,
}

impl Score {
    pub fn compare(&self, other: &Score) -> Ordering {
        self.hard.cmp(&other.hard).then(self.soft.cmp(&other.soft)).then_with(|| {
            if (self.cost - other.cost).abs() <= COST_EPS * self.cost.abs().max(other.cost.abs()).max(1.0) {
                Ordering::Equal
            } else {
                self.cost.total_cmp(&other.cost)
            }
        })
    }

    pub fn better_than(&self, other: &Score) -> bool {
        self.compare(other) == Ordering::Less
    }

    fn conflicts(&self) -> (usize, usize) {
        (self.hard, self.soft)
    }
}

/// Travel cost from a drone's position to a destination.
pub trait PathCost {
    /// `None` when the destination cannot be reached.
    fn cost(&mut self, from: &Vec3, to: &Vec3) -> Option<f64>;
}

/// Straight-line distance.
#[derive(Debug, Clone, Copy, Default)]
pub struct EuclideanCost;

impl PathCost for EuclideanCost {
    fn cost(&mut self, from: &Vec3, to: &Vec3) -> Option<f64> {
        Some((to - from).norm())
    }
}

/// Length of the shortest roadmap path through portal centers.
#[derive(Debug, Clone)]
pub struct RoadmapCost {
    pub snapshot: RoadmapSnapshot,
}

#[derive(PartialEq)]
struct Entry(f64, usize);
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl RoadmapCost {
    fn attach(&self, p: &Vec3) -> Vec<usize> {
        let g = &self.snapshot.graph;
        let mut spheres = g.spheres_containing(p);
        if spheres.is_empty() {
            spheres.extend(g.nearest_sphere(p).filter(|&s| g.spheres[s].signed_distance(p) <= g.params.min_radius));
        }
        spheres
    }
}

impl PathCost for RoadmapCost {
    fn cost(&mut self, from: &Vec3, to: &Vec3) -> Option<f64> {
        let g = &self.snapshot.graph;
        let (sa, sb) = (self.attach(from), self.attach(to));
        if sa.is_empty() || sb.is_empty() {
            return None;
        }
        if sa.iter().any(|s| sb.contains(s)) {
            return Some((to - from).norm());
        }
        let n = g.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut goal_links: HashMap<usize, f64> = HashMap::new();
        for &s in &sb {
            for &p in g.portals_of(s) {
                let p = p as usize;
                if self.snapshot.traversable(p) {
                    goal_links.insert(p, (g.portals[p].center - to).norm());
                }
            }
        }
        let mut heap = BinaryHeap::new();
        for &s in &sa {
            for &p in g.portals_of(s) {
                let p = p as usize;
                let d = (g.portals[p].center - from).norm();
                if self.snapshot.traversable(p) && d < dist[p] {
                    dist[p] = d;
                    heap.push(Entry(d, p));
                }
            }
        }
        let mut best = f64::INFINITY;
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] || d >= best {
                continue;
            }
            if let Some(&tail) = goal_links.get(&u) {
                best = best.min(d + tail);
            }
            for &(v, _) in g.neighbors(u) {
                let v = v as usize;
                if !self.snapshot.traversable(v) {
                    continue;
                }
                let nd = d + (g.portals[v].center - g.portals[u].center).norm();
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
        best.is_finite().then_some(best)
    }
}

/// Framing per drone plus the derived destinations and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub framings: Vec<usize>,
    pub master: usize,
    pub destinations: Vec<Option<Vec3>>,
    pub costs: Vec<f64>,
    pub conflicts: Vec<Conflict>,
    pub score: Score,
}

impl Assignment {
    pub fn is_master(&self, d: usize) -> bool {
        d == self.master
    }

    pub fn involvement(&self, d: usize) -> (usize, usize) {
        involvement(&self.conflicts, d)
    }
}

fn involvement(conflicts: &[Conflict], d: usize) -> (usize, usize) {
    let hard = conflicts.iter().filter(|c| c.involves(d) && c.severity() == Severity::Hard).count();
    let soft = conflicts.iter().filter(|c| c.involves(d) && c.severity() == Severity::Soft).count();
    (hard, soft)
}

/// Result of a local repair.
#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub assignment: Assignment,
    /// Drones the repair was allowed to touch.
    pub closure: BTreeSet<usize>,
    pub reassigned: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Destination {
    position: Option<Vec3>,
    cost: Option<f64>,
}

/// Coordination problem for one scene state with memoized instances,
/// destinations and travel costs.
pub struct Coordinator<C: PathCost = EuclideanCost> {
    pub catalog: Vec<Framing>,
    pub targets: Vec<Target>,
    pub positions: Vec<Vec3>,
    pub master: usize,
    pub scene: Option<SceneModel>,
    pub params: CoordinationParams,
    /// Number of min-conflict restarts; `None` uses one per framing.
    pub restarts: Option<usize>,
    /// Drones whose framing local repair must keep (user choices).
    pub pinned: BTreeSet<usize>,
    cost_model: C,
    instances: Vec<Option<FramingInstance>>,
    /// Key: (drone, framing, master framing or usize::MAX for the master).
    destinations: HashMap<(usize, usize, usize), Destination>,
}

impl Coordinator<EuclideanCost> {
    pub fn new(catalog: Vec<Framing>, targets: Vec<Target>, positions: Vec<Vec3>, master: usize, params: CoordinationParams) -> Self {
        Coordinator::with_cost(catalog, targets, positions, master, params, EuclideanCost)
    }
}

impl<C: PathCost> Coordinator<C> {
    pub fn with_cost(catalog: Vec<Framing>, targets: Vec<Target>, positions: Vec<Vec3>, master: usize, params: CoordinationParams, cost_model: C) -> Self {
        let mut c = Self {
            catalog,
            targets,
            positions,
            master,
            scene: None,
            params,
            restarts: None,
            pinned: BTreeSet::new(),
            cost_model,
            instances: Vec::new(),
            destinations: HashMap::new(),
        };
        c.refresh_instances();
        c
    }

    pub fn with_scene(mut self, scene: SceneModel) -> Self {
        self.scene = Some(scene);
        self.destinations.clear();
        self
    }

    pub fn drone_count(&self) -> usize {
        self.positions.len()
    }

    pub fn cost_model_mut(&mut self) -> &mut C {
        self.destinations.clear();
        &mut self.cost_model
    }

    /// Re-instantiate every framing after the targets moved.
    pub fn set_targets(&mut self, targets: Vec<Target>) {
        self.targets = targets;
        self.refresh_instances();
    }

    pub fn set_positions(&mut self, positions: Vec<Vec3>) {
        self.positions = positions;
        self.destinations.clear();
    }

    fn refresh_instances(&mut self) {
        self.instances = self
            .catalog
            .iter()
            .map(|f| {
                let targets = self.targets.get(..f.arity)?;
                instantiate(f, targets, self.params.safety).ok()
            })
            .collect();
        self.destinations.clear();
    }

    pub fn instance(&self, framing: usize) -> Option<&FramingInstance> {
        self.instances[framing].as_ref()
    }

    fn target_points(&self, framing: usize) -> Vec<Vec3> {
        self.targets.iter().take(self.catalog[framing].arity).map(|t| t.position).collect()
    }

    fn view_at(&self, framing: usize, p: Vec3) -> DroneView {
        DroneView::aimed(p, &self.target_points(framing))
    }

    fn usable(&self, p: &Vec3) -> bool {
        match &self.scene {
            None => true,
            Some(s) => s.bounds.contains(p) && s.obstacles.iter().all(|o| o.distance(p) > self.params.drone_radius),
        }
    }

    fn destination(&mut self, drone: usize, framing: usize, master_dest: Option<(usize, Vec3)>) -> Destination {
        let key = (drone, framing, master_dest.map_or(usize::MAX, |(f, _)| f));
        if let Some(d) = self.destinations.get(&key) {
            return *d;
        }
        let mut position = self.instances[framing].as_ref().and_then(|i| i.center());
        if let (Some((mf, mp)), Some(inst)) = (master_dest, self.instances[framing].as_ref()) {
            // A slave region partly seen by the master retreats to the
            // center of the unseen part.
            let frustum = self.view_at(mf, mp).frustum(&self.params);
            if let RegionVisibility::Partial { hidden: Some(h), .. } = region_frustum_visibility(inst, &frustum) {
                position = inst.point(&h);
            }
        }
        let position = position.filter(|p| self.usable(p));
        let from = self.positions[drone];
        let cost = position.and_then(|p| self.cost_model.cost(&from, &p));
        let d = Destination { position, cost };
        self.destinations.insert(key, d);
        d
    }

    /// Score a possibly partial assignment; unassigned drones are ignored.
    pub fn evaluate_partial(&mut self, framings: &[Option<usize>]) -> (Vec<Option<Vec3>>, Vec<f64>, Vec<Conflict>, Score) {
        let n = framings.len();
        let master_dest = framings[self.master].and_then(|f| self.destination(self.master, f, None).position.map(|p| (f, p)));
        let mut dests = vec![None; n];
        let mut costs = vec![0.0; n];
        let mut views = Vec::new();
        let mut ids = Vec::new();
        for d in 0..n {
            let Some(f) = framings[d] else { continue };
            let md = if d == self.master { None } else { master_dest };
            let dest = self.destination(d, f, md);
            dests[d] = dest.position;
            costs[d] = dest.cost.unwrap_or(0.0);
            let mut view = match dest.position {
                Some(p) => self.view_at(f, p),
                // Park unusable drones far away so they only count once.
                None => DroneView {
                    position: Vec3::repeat(1e9 + d as f64 * 1e3),
                    yaw: 0.0,
                    tilt: 0.0,
                    primary: None,
                    blocked: true,
                },
            };
            view.blocked = dest.position.is_none() || dest.cost.is_none();
            views.push(view);
            ids.push(d);
        }
        let master_local = ids.iter().position(|&d| d == self.master).unwrap_or(usize::MAX);
        let conflicts: Vec<Conflict> = detect_conflicts(&views, master_local, &self.params)
            .into_iter()
            .map(|c| Conflict {
                kind: c.kind,
                participants: c.participants.iter().map(|&k| ids[k]).collect(),
            })
            .collect();
        let score = Score {
            hard: conflicts.iter().filter(|c| c.severity() == Severity::Hard).count(),
            soft: conflicts.iter().filter(|c| c.severity() == Severity::Soft).count(),
            cost: costs.iter().sum(),
        };
        (dests, costs, conflicts, score)
    }

    pub fn evaluate(&mut self, framings: &[usize]) -> Assignment {
        let opt: Vec<Option<usize>> = framings.iter().map(|&f| Some(f)).collect();
        let (destinations, costs, conflicts, score) = self.evaluate_partial(&opt);
        Assignment {
            framings: framings.to_vec(),
            master: self.master,
            destinations,
            costs,
            conflicts,
            score,
        }
    }

    /// Best framing for `drone` with the others fixed; ties go to the lower
    /// cost, then to catalog order.
    fn best_response(&mut self, framings: &[Option<usize>], drone: usize) -> (usize, Score) {
        let mut trial = framings.to_vec();
        let mut best: Option<(usize, Score)> = None;
        for f in 0..self.catalog.len() {
            trial[drone] = Some(f);
            let s = self.evaluate_partial(&trial).3;
            if best.as_ref().is_none_or(|(_, b)| s.better_than(b)) {
                best = Some((f, s));
            }
        }
        best.expect("empty catalog")
    }

    /// Min-conflict search. The master is assigned first, then the slaves
    /// greedily; the drone with the most conflicts (then the highest cost)
    /// that can improve the score is moved to its best framing until no
    /// move helps or `max_steps` is reached. Restart `r` seeds the first
    /// free drone with framing `r`. `pinned` fixes framings of some drones.
    pub fn min_conflict_assign(&mut self, max_steps: usize, pinned: &[(usize, usize)]) -> Assignment {
        let n = self.drone_count();
        assert!(n >= 1, "no drones");
        let mut order = vec![self.master];
        order.extend((0..n).filter(|&d| d != self.master));
        let is_pinned = |d: usize| pinned.iter().any(|&(p, _)| p == d);
        let free: Vec<usize> = order.iter().copied().filter(|&d| !is_pinned(d)).collect();
        let restarts = self.restarts.unwrap_or(self.catalog.len()).clamp(1, self.catalog.len());
        let mut best: Option<Assignment> = None;
        for r in 0..restarts {
            let mut framings: Vec<Option<usize>> = vec![None; n];
            for &(d, f) in pinned {
                framings[d] = Some(f);
            }
            for (k, &d) in free.iter().enumerate() {
                framings[d] = Some(if k == 0 { r } else { self.best_response(&framings, d).0 });
            }
            let mut current: Vec<usize> = framings.iter().map(|f| f.unwrap()).collect();
            for _ in 0..max_steps {
                let now = self.evaluate(&current);
                let mut candidates = free.clone();
                candidates.sort_by(|&a, &b| {
                    now.involvement(b)
                        .cmp(&now.involvement(a))
                        .then(now.costs[b].total_cmp(&now.costs[a]))
                        .then(a.cmp(&b))
                });
                let mut moved = false;
                for d in candidates {
                    let opt: Vec<Option<usize>> = current.iter().map(|&f| Some(f)).collect();
                    let (f, s) = self.best_response(&opt, d);
                    if s.better_than(&now.score) {
                        current[d] = f;
                        moved = true;
                        break;
                    }
                }
                if !moved {
                    break;
                }
            }
            let a = self.evaluate(&current);
            if best.as_ref().is_none_or(|b| a.score.better_than(&b.score)) {
                best = Some(a);
            }
        }
        best.unwrap()
    }

    /// Exhaustive optimum over all `|F|^n` assignments (pinned drones
    /// excepted). First best in lexicographic enumeration order.
    pub fn exhaustive_optimum(&mut self, pinned: &[(usize, usize)]) -> Assignment {
        let n = self.drone_count();
        let m = self.catalog.len();
        let free: Vec<usize> = (0..n).filter(|d| !pinned.iter().any(|&(p, _)| p == *d)).collect();
        let mut current = vec![0; n];
        for &(d, f) in pinned {
            current[d] = f;
        }
        let total = m.pow(free.len() as u32);
        let mut best: Option<Assignment> = None;
        for mut code in 0..total {
            for &d in free.iter().rev() {
                current[d] = code % m;
                code /= m;
            }
            let a = self.evaluate(&current);
            if best.as_ref().is_none_or(|b| a.score.better_than(&b.score)) {
                best = Some(a);
            }
        }
        best.unwrap()
    }

    /// Reassign only slaves transitively in conflict; pinned drones are
    /// treated like the master. A drone moves only
    /// when that strictly lowers the conflict counts; the master keeps its
    /// framing. Stops when no conflicts remain, when every slave has been
    /// visited, or when the conflict closure stops growing.
    pub fn local_repair(&mut self, assignment: &Assignment, conflicts: &[Conflict]) -> RepairOutcome {
        let n = self.drone_count();
        let slaves: BTreeSet<usize> = (0..n).filter(|&d| d != self.master && !self.pinned.contains(&d)).collect();
        let mut closure: BTreeSet<usize> = conflicts.iter().flat_map(|c| c.participants.iter().copied()).filter(|d| slaves.contains(d)).collect();
        let mut visited = BTreeSet::new();
        let mut current = assignment.framings.clone();
        loop {
            let now = self.evaluate(&current);
            let mut order: Vec<usize> = closure.iter().copied().collect();
            order.sort_by(|&a, &b| now.involvement(b).cmp(&now.involvement(a)).then(a.cmp(&b)));
            for d in order {
                visited.insert(d);
                let here = self.evaluate(&current).score;
                let opt: Vec<Option<usize>> = current.iter().map(|&f| Some(f)).collect();
                let (f, s) = self.best_response(&opt, d);
                if s.conflicts() < here.conflicts() {
                    current[d] = f;
                }
            }
            let after = self.evaluate(&current);
            let still: Vec<usize> = closure.iter().copied().filter(|&d| after.involvement(d) != (0, 0)).collect();
            if still.is_empty() || visited.is_superset(&slaves) {
                break;
            }
            let mut grown = closure.clone();
            for c in &after.conflicts {
                if still.iter().any(|d| c.involves(*d)) {
                    grown.extend(c.participants.iter().copied().filter(|d| slaves.contains(d)));
                }
            }
            if grown == closure {
                break;
            }
            closure = grown;
        }
        let assignment_out = self.evaluate(&current);
        let reassigned = (0..n).filter(|&d| current[d] != assignment.framings[d]).collect();
        RepairOutcome {
            assignment: assignment_out,
            closure,
            reassigned,
        }
    }

    /// Make `new_master` the live camera. Rejected when it is unknown or
    /// currently has hard conflicts. The old master becomes a slave and the
    /// new conflicts are repaired locally.
    pub fn switch_master(&mut self, assignment: &Assignment, new_master: usize) -> Result<RepairOutcome> {
        if new_master >= self.drone_count() {
            return Err(Error::UnknownDrone(new_master));
        }
        if assignment.involvement(new_master).0 > 0 {
            return Err(Error::MasterHasHardConflicts(new_master));
        }
        self.master = new_master;
        self.destinations.clear();
        let swapped = self.evaluate(&assignment.framings);
        let conflicts = swapped.conflicts.clone();
        Ok(self.local_repair(&swapped, &conflicts))
    }

    /// Frustum of the master at its destination, for roadmap tagging.
    pub fn master_frustum(&mut self, assignment: &Assignment) -> Option<Frustum> {
        let f = assignment.framings[self.master];
        let p = assignment.destinations[self.master]?;
        Some(self.view_at(f, p).frustum(&self.params))
    }

    /// Camera view of `drone` at its assigned destination.
    pub fn destination_view(&self, assignment: &Assignment, drone: usize) -> Option<DroneView> {
        let p = assignment.destinations[drone]?;
        Some(self.view_at(assignment.framings[drone], p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_valid() {
        let c = framing_catalog();
        assert_eq!(c.len(), 17);
        for f in &c {
            f.validate().unwrap();
        }
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(catalog_from_json(&json).unwrap(), c);
    }

    #[test]
    fn score_order() {
        let a = Score { hard: 0, soft: 3, cost: 9.0 };
        let b = Score { hard: 1, soft: 0, cost: 0.0 };
        assert!(a.better_than(&b));
        let c = Score { hard: 0, soft: 3, cost: 9.0 + 1e-12 };
        assert_eq!(a.compare(&c), Ordering::Equal);
    }
}
