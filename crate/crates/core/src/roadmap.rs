//! Sphere roadmap of the static free space.
//!
//! Free space is covered greedily by empty spheres. Two overlapping spheres
//! meet in a disk, the portal, which is a graph node. Portals that share a
//! sphere are joined by arcs. Pairwise sphere visibility is a soft weight for
//! the planner; dynamic obstacles and camera frustums only toggle node flags.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::Frustum;
use crate::geometry::{Aabb, Disk, Obstacle, Sphere, Vec3};
use crate::{Error, Result};

pub const CACHE_VERSION: u32 = 1;
pub const DEFAULT_RAYS_PER_PAIR: usize = 32;

/// Static scene: bounds and obstacle geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneModel {
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl SceneModel {
    pub fn new(bounds: Aabb, obstacles: Vec<Obstacle>) -> Self {
        Self { bounds, obstacles }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.bounds.size();
        if !(s.x > 0.0 && s.y > 0.0 && s.z > 0.0) {
            return Err(Error::InvalidInput("scene bounds are empty".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            let inside = match o {
                Obstacle::Sphere(sp) => {
                    let r = Vec3::repeat(sp.radius);
                    self.bounds.contains(&(sp.center - r)) && self.bounds.contains(&(sp.center + r))
                }
                Obstacle::Box(b) => self.bounds.contains(&b.min) && self.bounds.contains(&b.max),
            };
            if !inside {
                return Err(Error::InvalidInput(format!("obstacle {i} extends outside the scene bounds")));
            }
        }
        Ok(())
    }

    /// True when the segment `a..b` crosses any obstacle.
    pub fn segment_blocked(&self, a: &Vec3, b: &Vec3) -> bool {
        segment_hits(&self.obstacles, a, b)
    }
}

fn segment_hits(obstacles: &[Obstacle], a: &Vec3, b: &Vec3) -> bool {
    let d = b - a;
    let len = d.norm();
    if len < 1e-12 {
        return obstacles.iter().any(|o| o.contains(a));
    }
    let dir = d / len;
    obstacles.iter().any(|o| match o.ray_interval(a, &dir) {
        Some((t0, t1)) => t1 > 0.0 && t0 < len,
        None => false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadmapParams {
    /// Smallest sphere radius kept. Candidates are sampled on a grid of half
    /// this spacing, so free space is covered up to this resolution.
    pub min_radius: f64,
    pub max_radius: f64,
    pub max_spheres: usize,
    /// Obstacle inflation: drone bounding radius plus margin.
    pub inflation: f64,
}

impl Default for RoadmapParams {
    fn default() -> Self {
        Self {
            min_radius: 0.5,
            max_radius: 2.0,
            max_spheres: 20_000,
            inflation: 0.3,
        }
    }
}

/// A portal: the intersection disk of two overlapping spheres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Portal {
    pub center: Vec3,
    /// Unit normal, pointing from `spheres[0]` to `spheres[1]`.
    pub normal: Vec3,
    pub radius: f64,
    pub spheres: [u32; 2],
}

impl Portal {
    pub fn disk(&self) -> Disk {
        Disk {
            center: self.center,
            normal: self.normal,
            radius: self.radius,
        }
    }
}

/// Arc between two portals sharing `sphere`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub sphere: u32,
    pub length: f64,
}

/// Pairwise occlusion between spheres, packed upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityTable {
    pub n: usize,
    pub rays_per_pair: usize,
    values: Vec<f32>,
}

impl VisibilityTable {
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // Row i starts after rows 0..i, each of length n - k - 1.
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    /// Occluded-ray fraction, 0 fully visible, 1 fully occluded.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.values[self.index(i, j)] as f64
        }
    }
}

/// Uniform hash grid from cells to ids.
#[derive(Debug, Clone, Default)]
struct HashGrid {
    cell: f64,
    cells: HashMap<[i32; 3], Vec<u32>>,
}

impl HashGrid {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &Vec3) -> [i32; 3] {
        [
            (p.x / self.cell).floor() as i32,
            (p.y / self.cell).floor() as i32,
            (p.z / self.cell).floor() as i32,
        ]
    }

    fn insert_box(&mut self, id: u32, min: &Vec3, max: &Vec3) {
        let (lo, hi) = (self.key(min), self.key(max));
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    self.cells.entry([x, y, z]).or_default().push(id);
                }
            }
        }
    }

    fn at(&self, p: &Vec3) -> &[u32] {
        self.cells.get(&self.key(p)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Sorted, deduplicated ids registered in cells overlapping the box.
    fn in_box(&self, min: &Vec3, max: &Vec3) -> Vec<u32> {
        let (lo, hi) = (self.key(min), self.key(max));
        let mut out = Vec::new();
        let span = (hi[0] - lo[0] + 1) as i64 * (hi[1] - lo[1] + 1) as i64 * (hi[2] - lo[2] + 1) as i64;
        if span > self.cells.len() as i64 {
            for ids in self.cells.values() {
                out.extend_from_slice(ids);
            }
        } else {
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        if let Some(ids) = self.cells.get(&[x, y, z]) {
                            out.extend_from_slice(ids);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Immutable roadmap geometry shared by every snapshot.
#[derive(Debug, Clone)]
pub struct RoadmapGraph {
    pub scene: SceneModel,
    pub params: RoadmapParams,
    pub spheres: Vec<Sphere>,
    pub portals: Vec<Portal>,
    pub edges: Vec<Edge>,
    /// CSR adjacency: neighbours of node `n` are
    /// `adjacency[offsets[n]..offsets[n + 1]]` as (node, edge) pairs.
    pub offsets: Vec<u32>,
    pub adjacency: Vec<(u32, u32)>,
    /// Portals of each sphere, CSR like `offsets`.
    pub sphere_offsets: Vec<u32>,
    pub sphere_portals: Vec<u32>,
    pub visibility: Option<VisibilityTable>,
    scene_hash: String,
    sphere_grid: HashGrid,
    node_grid: HashGrid,
}

impl RoadmapGraph {
    pub fn node_count(&self) -> usize {
        self.portals.len()
    }

    pub fn neighbors(&self, n: usize) -> &[(u32, u32)] {
        &self.adjacency[self.offsets[n] as usize..self.offsets[n + 1] as usize]
    }

    pub fn portals_of(&self, sphere: usize) -> &[u32] {
        &self.sphere_portals[self.sphere_offsets[sphere] as usize..self.sphere_offsets[sphere + 1] as usize]
    }

    pub fn scene_hash(&self) -> &str {
        &self.scene_hash
    }

    /// Spheres whose open interior contains `p`, in index order.
    pub fn spheres_containing(&self, p: &Vec3) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .sphere_grid
            .at(p)
            .iter()
            .map(|&i| i as usize)
            .filter(|&i| self.spheres[i].contains(p))
            .collect();
        v.sort_unstable();
        v
    }

    /// Containing sphere, or the sphere whose surface is nearest to `p`.
    pub fn nearest_sphere(&self, p: &Vec3) -> Option<usize> {
        if let Some(&i) = self.spheres_containing(p).first() {
            return Some(i);
        }
        self.spheres
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.signed_distance(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn nearest_node(&self, p: &Vec3) -> Option<usize> {
        let near = self.spheres_containing(p);
        let pool: Vec<usize> = if near.is_empty() {
            (0..self.portals.len()).collect()
        } else {
            near.iter().flat_map(|&s| self.portals_of(s).iter().map(|&n| n as usize)).collect()
        };
        pool.into_iter()
            .min_by(|&a, &b| {
                let da = (self.portals[a].center - p).norm_squared();
                let db = (self.portals[b].center - p).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            })
    }

    /// Occlusion between two spheres, 0 when no table was computed.
    pub fn occlusion(&self, i: usize, j: usize) -> f64 {
        self.visibility.as_ref().map_or(0.0, |t| t.get(i, j))
    }

    /// Occlusion of every sphere against `sphere`, from the table when
    /// present, otherwise ray cast on demand.
    pub fn visibility_row(&self, sphere: usize, rays_per_pair: usize) -> Vec<f64> {
        match &self.visibility {
            Some(t) => (0..self.spheres.len()).map(|j| t.get(sphere, j)).collect(),
            None => (0..self.spheres.len())
                .map(|j| pair_occlusion(&self.scene.obstacles, &self.spheres, sphere, j, rays_per_pair))
                .collect(),
        }
    }

    /// Connected components over arcs, as a label per node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, _) in self.neighbors(u) {
                    if label[v as usize] == usize::MAX {
                        label[v as usize] = next;
                        stack.push(v as usize);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.components().iter().copied().max().map_or(0, |m| m + 1)
    }
}

pub const FLAG_OBSTACLE: u8 = 1;
pub const FLAG_FRUSTUM: u8 = 2;
pub const FLAG_UNREACHABLE: u8 = 4;

/// Roadmap with mutable per-node flags. The tick loop is the only writer;
/// planners read from [`RoadmapSnapshot`]s.
#[derive(Debug, Clone)]
pub struct Roadmap {
    pub graph: Arc<RoadmapGraph>,
    flags: Vec<u8>,
}

/// Immutable view for one planning query.
#[derive(Debug, Clone)]
pub struct RoadmapSnapshot {
    pub graph: Arc<RoadmapGraph>,
    pub flags: Arc<Vec<u8>>,
}

impl RoadmapSnapshot {
    pub fn traversable(&self, n: usize) -> bool {
        self.flags[n] == 0
    }
}

/// Build the sphere roadmap of `scene`.
pub fn build_roadmap(scene: &SceneModel, params: &RoadmapParams) -> Result<Roadmap> {
    scene.validate()?;
    if !(params.min_radius > 0.0 && params.max_radius >= params.min_radius) {
        return Err(Error::InvalidInput("radius range is empty".into()));
    }
    let inflated: Vec<Obstacle> = scene.obstacles.iter().map(|o| o.inflate(params.inflation)).collect();
    let clearance = |p: &Vec3| {
        inflated
            .iter()
            .map(|o| o.distance(p))
            .fold(scene.bounds.interior_clearance(p), f64::min)
    };

    let step = params.min_radius / 2.0;
    let min_keep = params.min_radius / 2.0;
    let size = scene.bounds.size();
    let counts = size.map(|s| ((s / step).floor() as usize).max(1));
    let mut candidates: Vec<(Vec3, f64)> = Vec::new();
    for i in 0..counts.x {
        for j in 0..counts.y {
            for k in 0..counts.z {
                let p = scene.bounds.min
                    + Vec3::new(
                        (i as f64 + 0.5) * size.x / counts.x as f64,
                        (j as f64 + 0.5) * size.y / counts.y as f64,
                        (k as f64 + 0.5) * size.z / counts.z as f64,
                    );
                let c = clearance(&p);
                if c >= min_keep {
                    candidates.push((p, c.min(params.max_radius)));
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoFreeSpace);
    }
    // Largest clearance first; the sort is stable so ties keep grid order.
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut spheres: Vec<Sphere> = Vec::new();
    let mut grid = HashGrid::new(params.max_radius);
    for (p, r) in candidates {
        if spheres.len() >= params.max_spheres {
            break;
        }
        let covered = grid.at(&p).iter().any(|&i| spheres[i as usize].contains(&p));
        if covered {
            continue;
        }
        let rv = Vec3::repeat(r);
        grid.insert_box(spheres.len() as u32, &(p - rv), &(p + rv));
        spheres.push(Sphere::new(p, r));
    }

    Ok(Roadmap::from_spheres(scene, params, spheres))
}

fn find_portals(spheres: &[Sphere], grid: &HashGrid) -> Vec<Portal> {
    let mut portals = Vec::new();
    for (i, si) in spheres.iter().enumerate() {
        let rv = Vec3::repeat(si.radius);
        for j in grid.in_box(&(si.center - rv), &(si.center + rv)) {
            let j = j as usize;
            if j <= i {
                continue;
            }
            let sj = &spheres[j];
            let delta = sj.center - si.center;
            let d = delta.norm();
            if d >= si.radius + sj.radius || d <= (si.radius - sj.radius).abs() {
                continue;
            }
            let a = (d * d + si.radius * si.radius - sj.radius * sj.radius) / (2.0 * d);
            let radius = (si.radius * si.radius - a * a).max(0.0).sqrt();
            if radius < 1e-3 {
                continue;
            }
            let normal = delta / d;
            portals.push(Portal {
                center: si.center + normal * a,
                normal,
                radius,
                spheres: [i as u32, j as u32],
            });
        }
    }
    portals
}

fn assemble(
    scene: SceneModel,
    params: RoadmapParams,
    spheres: Vec<Sphere>,
    portals: Vec<Portal>,
    visibility: Option<VisibilityTable>,
) -> RoadmapGraph {
    let mut by_sphere: Vec<Vec<u32>> = vec![Vec::new(); spheres.len()];
    for (k, p) in portals.iter().enumerate() {
        by_sphere[p.spheres[0] as usize].push(k as u32);
        by_sphere[p.spheres[1] as usize].push(k as u32);
    }
    let mut edges = Vec::new();
    for (s, list) in by_sphere.iter().enumerate() {
        for x in 0..list.len() {
            for y in x + 1..list.len() {
                let (a, b) = (list[x], list[y]);
                edges.push(Edge {
                    a,
                    b,
                    sphere: s as u32,
                    length: (portals[a as usize].center - portals[b as usize].center).norm(),
                });
            }
        }
    }
    let mut degree = vec![0u32; portals.len()];
    for e in &edges {
        degree[e.a as usize] += 1;
        degree[e.b as usize] += 1;
    }
    let mut offsets = Vec::with_capacity(portals.len() + 1);
    offsets.push(0u32);
    for d in &degree {
        offsets.push(offsets.last().unwrap() + d);
    }
    let mut fill = offsets.clone();
    let mut adjacency = vec![(0u32, 0u32); *offsets.last().unwrap() as usize];
    for (k, e) in edges.iter().enumerate() {
        adjacency[fill[e.a as usize] as usize] = (e.b, k as u32);
        fill[e.a as usize] += 1;
        adjacency[fill[e.b as usize] as usize] = (e.a, k as u32);
        fill[e.b as usize] += 1;
    }
    let mut sphere_offsets = vec![0u32];
    let mut sphere_portals = Vec::new();
    for list in &by_sphere {
        sphere_portals.extend_from_slice(list);
        sphere_offsets.push(sphere_portals.len() as u32);
    }

    let mut sphere_grid = HashGrid::new(params.max_radius);
    for (i, s) in spheres.iter().enumerate() {
        let rv = Vec3::repeat(s.radius);
        sphere_grid.insert_box(i as u32, &(s.center - rv), &(s.center + rv));
    }
    let mut node_grid = HashGrid::new(params.max_radius);
    for (k, p) in portals.iter().enumerate() {
        let rv = Vec3::repeat(p.radius);
        node_grid.insert_box(k as u32, &(p.center - rv), &(p.center + rv));
    }
    RoadmapGraph {
        scene,
        params,
        spheres,
        portals,
        edges,
        offsets,
        adjacency,
        sphere_offsets,
        sphere_portals,
        visibility,
        scene_hash: String::new(),
        sphere_grid,
        node_grid,
    }
}

/// Content hash of the scene and build parameters.
pub fn scene_hash(scene: &SceneModel, params: &RoadmapParams) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(scene).expect("scene serializes"));
    h.update(serde_json::to_vec(params).expect("params serialize"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn uniform_in_sphere(rng: &mut ChaCha8Rng, s: &Sphere) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return s.center + v * s.radius;
        }
    }
}

/// Occluded fraction of `rays` random segments between spheres `i` and `j`.
/// The stream is seeded by the unordered pair, so the value is symmetric.
pub fn pair_occlusion(obstacles: &[Obstacle], spheres: &[Sphere], i: usize, j: usize, rays: usize) -> f64 {
    if i == j || rays == 0 {
        return 0.0;
    }
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    // Every sample segment stays inside the box around both spheres.
    let hull = Aabb::from_center(spheres[lo].center, Vec3::repeat(spheres[lo].radius));
    let other = Aabb::from_center(spheres[hi].center, Vec3::repeat(spheres[hi].radius));
    let hull = Aabb::new(hull.min.inf(&other.min), hull.max.sup(&other.max));
    let near: Vec<Obstacle> = obstacles.iter().filter(|o| o.bounds().overlaps(&hull)).copied().collect();
    if near.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(((lo as u64) << 32) | hi as u64);
    let mut blocked = 0usize;
    for _ in 0..rays {
        let p = uniform_in_sphere(&mut rng, &spheres[lo]);
        let q = uniform_in_sphere(&mut rng, &spheres[hi]);
        if segment_hits(&near, &p, &q) {
            blocked += 1;
        }
    }
    blocked as f64 / rays as f64
}

/// Ray-cast the full sphere-pair occlusion table and attach it.
pub fn precompute_visibility(roadmap: &mut Roadmap, rays_per_pair: usize) -> &VisibilityTable {
    let g = &roadmap.graph;
    let n = g.spheres.len();
    let mut values = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            values.push(pair_occlusion(&g.scene.obstacles, &g.spheres, i, j, rays_per_pair) as f32);
        }
    }
    let table = VisibilityTable { n, rays_per_pair, values };
    Arc::make_mut(&mut roadmap.graph).visibility = Some(table);
    roadmap.graph.visibility.as_ref().unwrap()
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    scene_hash: String,
    scene: SceneModel,
    params: RoadmapParams,
    spheres: Vec<Sphere>,
    portals: Vec<Portal>,
    visibility: Option<VisibilityTable>,
}

impl Roadmap {
    /// Roadmap over a given sphere set. Portals and arcs follow from the
    /// overlaps; the spheres are trusted to be free.
    pub fn from_spheres(scene: &SceneModel, params: &RoadmapParams, spheres: Vec<Sphere>) -> Self {
        let cell = spheres.iter().map(|s| s.radius).fold(params.max_radius, f64::max);
        let mut grid = HashGrid::new(cell);
        for (i, s) in spheres.iter().enumerate() {
            let rv = Vec3::repeat(s.radius);
            grid.insert_box(i as u32, &(s.center - rv), &(s.center + rv));
        }
        let portals = find_portals(&spheres, &grid);
        let mut graph = assemble(scene.clone(), *params, spheres, portals, None);
        graph.scene_hash = scene_hash(scene, params);
        let n = graph.node_count();
        Self {
            graph: Arc::new(graph),
            flags: vec![0; n],
        }
    }

    pub fn snapshot(&self) -> RoadmapSnapshot {
        RoadmapSnapshot {
            graph: Arc::clone(&self.graph),
            flags: Arc::new(self.flags.clone()),
        }
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    pub fn traversable(&self, n: usize) -> bool {
        self.flags[n] == 0
    }

    /// Retag nodes against the current dynamic obstacles and frustums.
    /// A node is blocked when its portal disk meets an inflated obstacle, or
    /// when its center is inside a frustum. Returns the nodes whose obstacle
    /// or frustum tag changed, sorted.
    pub fn update_dynamic(&mut self, obstacles: &[Obstacle], frustums: &[Frustum]) -> Vec<usize> {
        let g = &self.graph;
        let n = g.node_count();
        let mut fresh = vec![0u8; n];
        for o in obstacles {
            let inf = o.inflate(g.params.inflation);
            let (min, max) = match inf {
                Obstacle::Sphere(s) => (s.center - Vec3::repeat(s.radius), s.center + Vec3::repeat(s.radius)),
                Obstacle::Box(b) => (b.min, b.max),
            };
            // Registered boxes cover each disk, so any disk touching the
            // obstacle is listed in one of its cells.
            for k in g.node_grid.in_box(&min, &max) {
                let k = k as usize;
                if fresh[k] & FLAG_OBSTACLE == 0 && g.portals[k].disk().intersects(&inf) {
                    fresh[k] |= FLAG_OBSTACLE;
                }
            }
        }
        if !frustums.is_empty() {
            for (k, p) in g.portals.iter().enumerate() {
                if frustums.iter().any(|f| f.contains(&p.center)) {
                    fresh[k] |= FLAG_FRUSTUM;
                }
            }
        }
        let mask = FLAG_OBSTACLE | FLAG_FRUSTUM;
        let mut changed = Vec::new();
        for (k, (flag, add)) in self.flags.iter_mut().zip(fresh).enumerate() {
            let new = (*flag & !mask) | add;
            if new != *flag {
                changed.push(k);
                *flag = new;
            }
        }
        changed
    }

    /// Replace the frustum tags only, leaving obstacle tags untouched.
    pub fn retag_frustums(&mut self, frustums: &[Frustum]) -> Vec<usize> {
        let g = &self.graph;
        let mut changed = Vec::new();
        for (k, p) in g.portals.iter().enumerate() {
            let inside = frustums.iter().any(|f| f.contains(&p.center));
            let new = if inside { self.flags[k] | FLAG_FRUSTUM } else { self.flags[k] & !FLAG_FRUSTUM };
            if new != self.flags[k] {
                self.flags[k] = new;
                changed.push(k);
            }
        }
        changed
    }

    /// Tag the nodes inside the braking zone behind a moving drone. Earlier
    /// unreachable tags are cleared. Returns the tagged nodes.
    pub fn reachability_prune(&mut self, position: &Vec3, velocity: &Vec3, amax: f64) -> Vec<usize> {
        for f in &mut self.flags {
            *f &= !FLAG_UNREACHABLE;
        }
        let tagged = unreachable_nodes(&self.graph, position, velocity, amax);
        for &k in &tagged {
            self.flags[k] |= FLAG_UNREACHABLE;
        }
        tagged
    }

    pub fn clear_unreachable(&mut self) {
        for f in &mut self.flags {
            *f &= !FLAG_UNREACHABLE;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let g = &self.graph;
        let file = CacheFile {
            version: CACHE_VERSION,
            scene_hash: g.scene_hash.clone(),
            scene: g.scene.clone(),
            params: g.params,
            spheres: g.spheres.clone(),
            portals: g.portals.clone(),
            visibility: g.visibility.clone(),
        };
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    /// Load a cache written by [`Roadmap::save`]. Fails with
    /// [`Error::StaleCache`] unless it was built for this scene and params.
    pub fn load(path: &Path, scene: &SceneModel, params: &RoadmapParams) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: CacheFile = serde_json::from_reader(r)?;
        if file.version != CACHE_VERSION {
            return Err(Error::CacheVersion(file.version));
        }
        let expected = scene_hash(scene, params);
        if file.scene_hash != expected || scene_hash(&file.scene, &file.params) != expected {
            return Err(Error::StaleCache);
        }
        let mut graph = assemble(file.scene, file.params, file.spheres, file.portals, file.visibility);
        graph.scene_hash = expected;
        let n = graph.node_count();
        Ok(Self {
            graph: Arc::new(graph),
            flags: vec![0; n],
        })
    }
}

/// Nodes behind the drone (opposite its velocity) within stopping distance.
pub fn unreachable_nodes(graph: &RoadmapGraph, position: &Vec3, velocity: &Vec3, amax: f64) -> Vec<usize> {
    let speed2 = velocity.norm_squared();
    if speed2 == 0.0 || amax <= 0.0 {
        return Vec::new();
    }
    let stop = speed2 / (2.0 * amax);
    let rv = Vec3::repeat(stop);
    graph
        .node_grid
        .in_box(&(position - rv), &(position + rv))
        .into_iter()
        .map(|k| k as usize)
        .filter(|&k| {
            let d = graph.portals[k].center - position;
            d.dot(velocity) < 0.0 && d.norm() <= stop
        })
        .collect()
}
