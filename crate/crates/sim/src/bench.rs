//! Planning latency benchmark on a generated pillar-grid scene.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use skyframe_core::dts::Target;
use skyframe_core::geometry::{Aabb, Obstacle, Vec3};
use skyframe_core::planner::{plan_framing_path, plan_sketch_path, FramingQuery, SketchParams};
use skyframe_core::roadmap::{build_roadmap, Roadmap, RoadmapParams, RoadmapSnapshot, SceneModel};
use skyframe_core::smoother::{fit_c4_spline, optimize_spline};

use crate::error::SimResult;
use crate::sim::{densify_sketch, SKETCH_STEP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub size: (f64, f64, f64),
    /// Pillar grid spacing, meters.
    pub spacing: f64,
    pub roadmap: RoadmapParams,
    pub queries: usize,
    pub safety: f64,
    pub w_o: f64,
    pub window: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            size: (32.0, 32.0, 6.0),
            spacing: 3.0,
            roadmap: RoadmapParams {
                min_radius: 0.5,
                max_radius: 1.5,
                max_spheres: 200_000,
                inflation: 0.3,
            },
            queries: 50,
            safety: 0.5,
            w_o: 1.0,
            window: 8,
            seed: 1,
        }
    }
}

/// Median and 90th percentile, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Latency {
    pub count: usize,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl Latency {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let at = |q: f64| s[((s.len() - 1) as f64 * q).round() as usize];
        Self {
            count: s.len(),
            median: at(0.5),
            p90: at(0.9),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub nodes: usize,
    pub spheres: usize,
    pub build_ms: f64,
    pub framing: Latency,
    pub sketch: Latency,
    pub smoothing: Latency,
    pub failures: usize,
}

/// Scene of thin pillars on a regular grid, every other cell filled.
pub fn pillar_scene(size: (f64, f64, f64), spacing: f64) -> SceneModel {
    let (sx, sy, sz) = size;
    let mut obstacles = Vec::new();
    let mut k = 0;
    let mut x = -sx / 2.0 + 2.0;
    while x < sx / 2.0 - 1.0 {
        let mut y = -sy / 2.0 + 2.0;
        while y < sy / 2.0 - 1.0 {
            if k % 2 == 0 {
                obstacles.push(Obstacle::Box(Aabb::new(Vec3::new(x, y, 0.0), Vec3::new(x + 0.6, y + 0.6, sz * 0.7))));
            }
            k += 1;
            y += spacing;
        }
        x += spacing;
    }
    SceneModel::new(
        Aabb::new(Vec3::new(-sx / 2.0, -sy / 2.0, 0.0), Vec3::new(sx / 2.0, sy / 2.0, sz)),
        obstacles,
    )
}

fn free_point(rng: &mut ChaCha8Rng, snap: &RoadmapSnapshot) -> Vec3 {
    let g = &snap.graph;
    loop {
        let n = rng.gen_range(0..g.node_count());
        if snap.traversable(n) {
            return g.portals[n].center;
        }
    }
}

pub fn build(config: &BenchConfig) -> SimResult<(Roadmap, f64)> {
    let scene = pillar_scene(config.size, config.spacing);
    let t = Instant::now();
    let rm = build_roadmap(&scene, &config.roadmap)?;
    Ok((rm, t.elapsed().as_secs_f64() * 1e3))
}

pub fn run(config: &BenchConfig) -> SimResult<BenchReport> {
    let (rm, build_ms) = build(config)?;
    let snap = rm.snapshot();
    let g = &snap.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z = (0.0, config.size.2);
    let targets = vec![Target::new(Vec3::new(-1.0, 0.5, 1.5)), Target::new(Vec3::new(1.0, -0.5, 1.5))];
    let query = FramingQuery::new(targets, config.safety, z.0, z.1, config.w_o);
    let (mut framing, mut sketch, mut smoothing) = (Vec::new(), Vec::new(), Vec::new());
    let mut failures = 0;
    let smooth = |path: &skyframe_core::planner::NodePath, out: &mut Vec<f64>| {
        let t = Instant::now();
        let mut pts: Vec<Vec3> = Vec::new();
        let mut disks = Vec::new();
        for (p, d) in path.positions(g).into_iter().zip(path.disks(g)) {
            if pts.last().is_some_and(|l| (l - p).norm() <= 1e-9) {
                continue;
            }
            pts.push(p);
            disks.push(d);
        }
        if pts.len() >= 2 {
            optimize_spline(&fit_c4_spline(&pts), &disks);
            out.push(t.elapsed().as_secs_f64() * 1e3);
        }
    };
    for _ in 0..config.queries {
        let (a, b) = (free_point(&mut rng, &snap), free_point(&mut rng, &snap));
        let t = Instant::now();
        match plan_framing_path(&a, &b, &snap, &query) {
            Ok(p) => {
                framing.push(t.elapsed().as_secs_f64() * 1e3);
                smooth(&p, &mut smoothing);
            }
            Err(_) => failures += 1,
        }
    }
    let sp = SketchParams {
        window: config.window,
        ..SketchParams::default()
    };
    for _ in 0..config.queries {
        // A wandering stroke across the scene.
        let mut p = free_point(&mut rng, &snap);
        let mut stroke = vec![p];
        let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for _ in 0..12 {
            heading += rng.gen_range(-0.6..0.6);
            let next = p + Vec3::new(heading.cos(), heading.sin(), 0.0) * 2.0;
            let b = &g.scene.bounds;
            p = Vec3::new(
                next.x.clamp(b.min.x + 1.0, b.max.x - 1.0),
                next.y.clamp(b.min.y + 1.0, b.max.y - 1.0),
                p.z,
            );
            stroke.push(p);
        }
        let stroke = densify_sketch(&stroke, SKETCH_STEP);
        let t = Instant::now();
        let Some(start) = g.nearest_node(&stroke[0]).filter(|&n| snap.traversable(n)) else {
            failures += 1;
            continue;
        };
        match plan_sketch_path(&stroke, start, &snap, &sp) {
            Ok(_) => sketch.push(t.elapsed().as_secs_f64() * 1e3),
            Err(_) => failures += 1,
        }
    }
    Ok(BenchReport {
        config: *config,
        nodes: g.node_count(),
        spheres: g.spheres.len(),
        build_ms,
        framing: Latency::of(&framing),
        sketch: Latency::of(&sketch),
        smoothing: Latency::of(&smoothing),
        failures,
    })
}
