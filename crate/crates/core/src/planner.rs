//! A* search on the roadmap.
//!
//! Framing mode searches in tau-space: the toric coordinates of a node with
//! respect to the current targets plus its height. Sketch mode follows a
//! user-drawn polyline with virtual nodes (roadmap node, sketch index).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::dts::{build_surface, Target};
use crate::geometry::{Disk, Vec3};
use crate::roadmap::{RoadmapGraph, RoadmapSnapshot, DEFAULT_RAYS_PER_PAIR};
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 8;

/// Point of the 4d planning space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauCoord {
    pub alpha: f64,
    pub phi: f64,
    pub theta: f64,
    pub z: f64,
}

/// Tau coordinates of `p`. `None` when the point is closer than the safety
/// distance to a target or has no chart coordinates.
pub fn tau_coord(p: &Vec3, targets: &[Target], safety: f64) -> Option<TauCoord> {
    if targets.is_empty() || targets.iter().any(|t| (p - t.position).norm() < safety) {
        return None;
    }
    let a = &targets[0];
    let surface = if let Some(b) = targets.get(1) {
        let (da, db) = (a.position - p, b.position - p);
        let alpha = da.angle(&db);
        if !(alpha > 1e-9 && alpha < std::f64::consts::PI - 1e-9) {
            return None;
        }
        build_surface(a, Some(b), alpha, safety).ok()?
    } else {
        build_surface(a, None, (p - a.position).norm(), safety).ok()?
    };
    let (phi, theta) = surface.world_to_dts(p).ok()?;
    Some(TauCoord {
        alpha: surface.alpha,
        phi,
        theta,
        z: p.z,
    })
}

/// Normalized tau-space distance.
pub fn tau_distance(a: &TauCoord, b: &TauCoord, z_min: f64, z_max: f64) -> Result<f64> {
    let span = (z_max - z_min).abs();
    if span == 0.0 {
        return Err(Error::InvalidInput("height range is empty".into()));
    }
    let ds2 = ((a.alpha - b.alpha) / TAU).powi(2) + ((a.phi - b.phi) / TAU).powi(2) + ((a.theta - b.theta) / TAU).powi(2);
    let dh2 = ((a.z - b.z).abs() / span).powi(2);
    Ok((ds2 + dh2).sqrt())
}

/// Arc cost from the tau distance, occlusion weight and occlusion value.
pub fn arc_cost(d_tau: f64, w_o: f64, occlusion: f64) -> f64 {
    (1.0 + w_o * occlusion) * d_tau
}

/// A path vertex: a roadmap portal or a free endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathNode {
    Point { position: Vec3 },
    Portal { id: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePath {
    pub nodes: Vec<PathNode>,
    pub cost: f64,
}

impl NodePath {
    pub fn positions(&self, graph: &RoadmapGraph) -> Vec<Vec3> {
        self.nodes
            .iter()
            .map(|n| match *n {
                PathNode::Point { position } => position,
                PathNode::Portal { id } => graph.portals[id].center,
            })
            .collect()
    }

    /// Disk constraint per vertex; endpoints are zero-radius disks.
    pub fn disks(&self, graph: &RoadmapGraph) -> Vec<Disk> {
        self.nodes
            .iter()
            .map(|n| match *n {
                PathNode::Point { position } => Disk {
                    center: position,
                    normal: Vec3::x(),
                    radius: 0.0,
                },
                PathNode::Portal { id } => graph.portals[id].disk(),
            })
            .collect()
    }

    pub fn portal_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            PathNode::Portal { id } => Some(id),
            PathNode::Point { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramingQuery {
    pub targets: Vec<Target>,
    pub safety: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub w_o: f64,
    pub rays_per_pair: usize,
}

impl FramingQuery {
    pub fn new(targets: Vec<Target>, safety: f64, z_min: f64, z_max: f64, w_o: f64) -> Self {
        Self {
            targets,
            safety,
            z_min,
            z_max,
            w_o,
            rays_per_pair: DEFAULT_RAYS_PER_PAIR,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on f, then larger g, then lower id.
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Search graph for one framing query: portals plus the two endpoints.
/// Endpoint ids are `n` (start) and `n + 1` (goal).
pub struct FramingGraph<'a> {
    pub snapshot: &'a RoadmapSnapshot,
    pub query: &'a FramingQuery,
    start: Vec3,
    goal: Vec3,
    start_spheres: Vec<usize>,
    goal_spheres: Vec<usize>,
    tau: Vec<Option<Option<TauCoord>>>,
    /// Mean occlusion of each sphere towards the targets.
    occlusion: Vec<f64>,
}

impl<'a> FramingGraph<'a> {
    pub fn new(snapshot: &'a RoadmapSnapshot, query: &'a FramingQuery, start: Vec3, goal: Vec3) -> Result<Self> {
        if query.targets.is_empty() || query.targets.len() > 2 {
            return Err(Error::InvalidInput("framing queries take one or two targets".into()));
        }
        if !(0.0..=1.0).contains(&query.w_o) {
            return Err(Error::InvalidInput("w_o must lie in [0, 1]".into()));
        }
        let g = &snapshot.graph;
        let start_spheres = endpoint_spheres(g, &start)?;
        let goal_spheres = endpoint_spheres(g, &goal)?;
        let n = g.node_count();
        let mut tau = vec![None; n + 2];
        let ts = tau_coord(&start, &query.targets, query.safety).ok_or(Error::BlockedEndpoint)?;
        let te = tau_coord(&goal, &query.targets, query.safety).ok_or(Error::BlockedEndpoint)?;
        tau[n] = Some(Some(ts));
        tau[n + 1] = Some(Some(te));
        let occlusion = if query.w_o > 0.0 {
            let mut acc = vec![0.0; g.spheres.len()];
            for t in &query.targets {
                if let Some(s) = g.nearest_sphere(&t.position) {
                    for (a, o) in acc.iter_mut().zip(g.visibility_row(s, query.rays_per_pair)) {
                        *a += o / query.targets.len() as f64;
                    }
                }
            }
            acc
        } else {
            Vec::new()
        };
        Ok(Self {
            snapshot,
            query,
            start,
            goal,
            start_spheres,
            goal_spheres,
            tau,
            occlusion,
        })
    }

    pub fn start_id(&self) -> usize {
        self.snapshot.graph.node_count()
    }

    pub fn goal_id(&self) -> usize {
        self.snapshot.graph.node_count() + 1
    }

    pub fn position(&self, id: usize) -> Vec3 {
        let n = self.start_id();
        if id == n {
            self.start
        } else if id == n + 1 {
            self.goal
        } else {
            self.snapshot.graph.portals[id].center
        }
    }

    pub fn tau(&mut self, id: usize) -> Option<TauCoord> {
        if let Some(t) = self.tau[id] {
            return t;
        }
        let t = tau_coord(&self.position(id), &self.query.targets, self.query.safety);
        self.tau[id] = Some(t);
        t
    }

    fn d_tau(&mut self, a: usize, b: usize) -> f64 {
        match (self.tau(a), self.tau(b)) {
            (Some(x), Some(y)) => tau_distance(&x, &y, self.query.z_min, self.query.z_max).unwrap_or(f64::INFINITY),
            _ => f64::INFINITY,
        }
    }

    /// Cost of moving from `a` to `b` through `sphere`.
    pub fn cost(&mut self, a: usize, b: usize, sphere: usize) -> f64 {
        let o = self.occlusion.get(sphere).copied().unwrap_or(0.0);
        arc_cost(self.d_tau(a, b), self.query.w_o, o)
    }

    /// Traversable neighbours as (node, sphere through which it is reached).
    pub fn neighbors(&self, id: usize) -> Vec<(usize, usize)> {
        let g = &self.snapshot.graph;
        let n = g.node_count();
        let mut out = Vec::new();
        let link = |spheres: &[usize], out: &mut Vec<(usize, usize)>| {
            for &s in spheres {
                for &k in g.portals_of(s) {
                    if self.snapshot.traversable(k as usize) {
                        out.push((k as usize, s));
                    }
                }
            }
        };
        if id == n {
            link(&self.start_spheres, &mut out);
            if let Some(&s) = self.start_spheres.iter().find(|s| self.goal_spheres.contains(s)) {
                out.push((n + 1, s));
            }
        } else if id == n + 1 {
            link(&self.goal_spheres, &mut out);
            if let Some(&s) = self.goal_spheres.iter().find(|s| self.start_spheres.contains(s)) {
                out.push((n, s));
            }
        } else {
            for &(k, e) in g.neighbors(id) {
                if self.snapshot.traversable(k as usize) {
                    out.push((k as usize, g.edges[e as usize].sphere as usize));
                }
            }
            let p = &g.portals[id];
            for s in p.spheres {
                let s = s as usize;
                if self.start_spheres.contains(&s) {
                    out.push((n, s));
                }
                if self.goal_spheres.contains(&s) {
                    out.push((n + 1, s));
                }
            }
        }
        out
    }
}

fn endpoint_spheres(g: &RoadmapGraph, p: &Vec3) -> Result<Vec<usize>> {
    let inside = g.spheres_containing(p);
    if !inside.is_empty() {
        return Ok(inside);
    }
    // Free points closer to a wall than the sampling resolution are attached
    // to the nearest sphere when the straight segment to it is clear.
    let inflated = g.scene.obstacles.iter().map(|o| o.inflate(g.params.inflation));
    let blocked = inflated.clone().any(|o| o.contains(p)) || !g.scene.bounds.contains(p);
    if blocked {
        return Err(Error::BlockedEndpoint);
    }
    let s = g.nearest_sphere(p).ok_or(Error::BlockedEndpoint)?;
    let sp = g.spheres[s];
    if sp.signed_distance(p) > g.params.min_radius {
        return Err(Error::BlockedEndpoint);
    }
    let obstacles: Vec<_> = inflated.collect();
    let entry = sp.center + (p - sp.center).normalize() * sp.radius * 0.999;
    let d = entry - p;
    let len = d.norm();
    let clear = len < 1e-12
        || obstacles.iter().all(|o| match o.ray_interval(p, &(d / len)) {
            Some((t0, t1)) => !(t1 > 0.0 && t0 < len),
            None => true,
        });
    if clear {
        Ok(vec![s])
    } else {
        Err(Error::BlockedEndpoint)
    }
}

/// Cheapest path between two free points in tau-space.
pub fn plan_framing_path(start: &Vec3, goal: &Vec3, snapshot: &RoadmapSnapshot, query: &FramingQuery) -> Result<NodePath> {
    if (start - goal).norm() < 1e-12 {
        tau_coord(start, &query.targets, query.safety).ok_or(Error::BlockedEndpoint)?;
        return Ok(NodePath {
            nodes: vec![PathNode::Point { position: *start }],
            cost: 0.0,
        });
    }
    let mut fg = FramingGraph::new(snapshot, query, *start, *goal)?;
    let (s, t) = (fg.start_id(), fg.goal_id());
    let total = t + 1;
    let mut best = vec![f64::INFINITY; total];
    let mut parent = vec![usize::MAX; total];
    let mut closed = vec![false; total];
    let mut heap = BinaryHeap::new();
    best[s] = 0.0;
    heap.push(Open {
        f: fg.d_tau(s, t),
        g: 0.0,
        node: s,
    });
    while let Some(Open { g, node, .. }) = heap.pop() {
        if closed[node] {
            continue;
        }
        closed[node] = true;
        if node == t {
            let mut ids = vec![t];
            while *ids.last().unwrap() != s {
                ids.push(parent[*ids.last().unwrap()]);
            }
            ids.reverse();
            let nodes = ids
                .into_iter()
                .map(|id| {
                    if id == s {
                        PathNode::Point { position: *start }
                    } else if id == t {
                        PathNode::Point { position: *goal }
                    } else {
                        PathNode::Portal { id }
                    }
                })
                .collect();
            return Ok(NodePath { nodes, cost: g });
        }
        for (next, sphere) in fg.neighbors(node) {
            if closed[next] {
                continue;
            }
            let c = fg.cost(node, next, sphere);
            if !c.is_finite() {
                continue;
            }
            let ng = g + c;
            if ng < best[next] {
                best[next] = ng;
                parent[next] = node;
                let h = fg.d_tau(next, t);
                heap.push(Open { f: ng + h, g: ng, node: next });
            }
        }
    }
    Err(Error::Unreachable)
}

/// Sketch search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    pub window: usize,
    /// Virtual nodes farther than this from their sketch point are not created.
    pub max_deviation: f64,
    pub max_expansions: usize,
}

impl Default for SketchParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            max_deviation: 3.0,
            max_expansions: 500_000,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct SketchOpen {
    key: f64,
    cost: f64,
    m: usize,
    node: usize,
}

impl Eq for SketchOpen {}

impl Ord for SketchOpen {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then(self.m.cmp(&other.m))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for SketchOpen {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct SketchRecord {
    cost: f64,
    parent: Option<(usize, usize)>,
    closed: bool,
}

/// Roadmap nodes following `sketch` from `start`, one per visited sketch
/// index. Virtual nodes (n, m) are created lazily; from (n, m) the search
/// moves to (n', m') with n' adjacent to n (not straight back to the node it
/// came from) and m < m' <= m + window. Open nodes are ranked by mean cost
/// per sketch index.
pub fn plan_sketch_path(sketch: &[Vec3], start: usize, snapshot: &RoadmapSnapshot, params: &SketchParams) -> Result<NodePath> {
    if sketch.len() < 2 {
        return Err(Error::InvalidInput("a sketch needs at least two points".into()));
    }
    if params.window == 0 {
        return Err(Error::InvalidInput("sketch window must be positive".into()));
    }
    let g = &snapshot.graph;
    if start >= g.node_count() || !snapshot.traversable(start) {
        return Err(Error::BlockedEndpoint);
    }
    let last = sketch.len() - 1;
    let mut records: HashMap<(usize, usize), SketchRecord> = HashMap::new();
    let mut heap = BinaryHeap::new();
    records.insert(
        (start, 0),
        SketchRecord {
            cost: 0.0,
            parent: None,
            closed: false,
        },
    );
    heap.push(SketchOpen {
        key: 0.0,
        cost: 0.0,
        m: 0,
        node: start,
    });
    let mut expansions = 0;
    while let Some(SketchOpen { cost, m, node, .. }) = heap.pop() {
        let rec = records.get_mut(&(node, m)).expect("open node has a record");
        if rec.closed || cost > rec.cost {
            continue;
        }
        rec.closed = true;
        let came_from = rec.parent.map(|(n, _)| n);
        if m == last {
            let mut nodes = vec![PathNode::Portal { id: node }];
            let mut cur = (node, m);
            while let Some(p) = records[&cur].parent {
                nodes.push(PathNode::Portal { id: p.0 });
                cur = p;
            }
            nodes.reverse();
            return Ok(NodePath { nodes, cost });
        }
        expansions += 1;
        if expansions > params.max_expansions {
            break;
        }
        for &(next, _) in g.neighbors(node) {
            let next = next as usize;
            if Some(next) == came_from || !snapshot.traversable(next) {
                continue;
            }
            let pos = g.portals[next].center;
            for (m2, point) in sketch.iter().enumerate().take((m + params.window).min(last) + 1).skip(m + 1) {
                let dev = (point - pos).norm();
                if dev > params.max_deviation {
                    continue;
                }
                let c = cost + (m2 - m) as f64 * dev;
                let entry = records.entry((next, m2)).or_insert(SketchRecord {
                    cost: f64::INFINITY,
                    parent: None,
                    closed: false,
                });
                if entry.closed || c >= entry.cost {
                    continue;
                }
                entry.cost = c;
                entry.parent = Some((node, m));
                heap.push(SketchOpen {
                    key: c / m2 as f64,
                    cost: c,
                    m: m2,
                    node: next,
                });
            }
        }
    }
    Err(Error::SketchFailure)
}

/// First portal on `path` that is no longer traversable.
pub fn validate_path(path: &NodePath, snapshot: &RoadmapSnapshot) -> Option<usize> {
    path.portal_ids().find(|&id| !snapshot.traversable(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tc(alpha: f64, phi: f64, theta: f64, z: f64) -> TauCoord {
        TauCoord { alpha, phi, theta, z }
    }

    #[test]
    fn tau_distance_examples() {
        let a = tc(0.5, 0.1, -0.2, 1.0);
        assert_eq!(tau_distance(&a, &a, 0.0, 4.0).unwrap(), 0.0);
        let b = tc(0.5 + std::f64::consts::PI, 0.1, -0.2, 1.0);
        assert_relative_eq!(tau_distance(&a, &b, 0.0, 4.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(tau_distance(&a, &b, 2.0, 2.0).is_err());
    }

    #[test]
    fn arc_cost_examples() {
        assert_eq!(arc_cost(0.7, 1.0, 0.0), 0.7);
        assert_eq!(arc_cost(0.7, 1.0, 1.0), 1.4);
        assert_relative_eq!(arc_cost(1.0, 0.5, 0.4), 1.2, epsilon = 1e-15);
    }
}
