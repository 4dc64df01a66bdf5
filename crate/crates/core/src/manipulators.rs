//! Through-the-lens viewpoint edits: orbiting on the toric surface, moving
//! to satisfy a new two-target framing, dolly, world-space moves and
//! push/pull collision avoidance along the target-to-drone half line.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::camera::{project, CameraFrame, CameraIntrinsics, DroneConfig, Screen};
use crate::dts::{build_surface, camera_region, CameraRegion, DtsSurface, SurfaceType};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Obstacle, Vec3, WORLD_UP};
use crate::orientation::{feasible_orientation, OrientationParams, ScreenGoal};

/// Golden-section iterations per curve segment.
pub const GOLDEN_ITERS: usize = 40;
/// Dense samples per segment used to bracket the golden-section search.
const BRACKET_SAMPLES: usize = 64;
/// Keeps outputs strictly inside the start region.
const REGION_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManipContext {
    pub intrinsics: CameraIntrinsics,
    pub orientation: OrientationParams,
    pub safety: f64,
    pub floor: Option<f64>,
    pub ceiling: Option<f64>,
}

impl Default for ManipContext {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            orientation: OrientationParams::default(),
            safety: 0.5,
            floor: None,
            ceiling: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationResult {
    pub config: DroneConfig,
    /// Chart coordinates on `surface`, for surface-based manipulators.
    pub chart: Option<(f64, f64)>,
    pub surface: Option<DtsSurface>,
    pub screen: Vec<Screen>,
    pub roll: f64,
    pub collision_adjusted: bool,
    /// Input was clamped (chart bounds, safety distance or tilt range).
    pub clamped: bool,
}

fn camera_ray(intr: &CameraIntrinsics, s: &Screen) -> Vec3 {
    Vec3::new(s.x * intr.tan_half_h(), 1.0, s.y * intr.tan_half_v()).normalize()
}

/// Columns: bisector, normal, and their cross product.
fn triad(a: &Vec3, b: &Vec3) -> Result<Matrix3<f64>> {
    let n = a.cross(b);
    if n.norm() < 1e-12 {
        return Err(Error::DegenerateProjection);
    }
    let n = n.normalize();
    let bis = (a + b).normalize();
    Ok(Matrix3::from_columns(&[bis, n, bis.cross(&n)]))
}

/// Angle between the two camera rays through the given screen points. This
/// is the toric angle a two-target framing implies.
pub fn framing_alpha(intr: &CameraIntrinsics, screens: &[Screen; 2]) -> f64 {
    let r1 = camera_ray(intr, &screens[0]);
    let r2 = camera_ray(intr, &screens[1]);
    r1.dot(&r2).clamp(-1.0, 1.0).acos()
}

/// Roll of the rotation taking the desired camera rays onto the actual
/// target directions. Zero means a feasible orientation realizes the
/// framing exactly.
pub fn roll_for_viewpoint(
    position: &Vec3,
    screens: &[Screen; 2],
    targets: &[Vec3; 2],
    intr: &CameraIntrinsics,
) -> Result<f64> {
    let r1 = camera_ray(intr, &screens[0]);
    let r2 = camera_ray(intr, &screens[1]);
    let v1 = (targets[0] - position).normalize();
    let v2 = (targets[1] - position).normalize();
    let rot = triad(&v1, &v2)? * triad(&r1, &r2)?.transpose();
    let frame = CameraFrame {
        x: rot.column(0).into(),
        y: rot.column(1).into(),
        z: rot.column(2).into(),
    };
    Ok(frame.roll())
}

/// Axis-aligned ellipse in chart space, centered on `|theta| = 0.5` and on
/// `phi = -1` (floor) or `phi = +1` (ceiling).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartEllipse {
    pub below: bool,
    pub semi_theta: f64,
    pub semi_phi: f64,
    /// Derived from the mean height of targets at different heights.
    pub approximate: bool,
}

impl ChartEllipse {
    fn center_phi(&self) -> f64 {
        if self.below {
            -1.0
        } else {
            1.0
        }
    }

    /// Normalized radius; `< 1` inside.
    pub fn level(&self, phi: f64, theta: f64) -> f64 {
        let dt = (theta.abs() - 0.5) / self.semi_theta;
        let dp = (phi - self.center_phi()) / self.semi_phi;
        dt.hypot(dp)
    }
}

const DEFAULT_SEMI_THETA: f64 = 0.25;
const DEFAULT_SEMI_PHI: f64 = 0.5;

fn default_ellipse(below: bool) -> ChartEllipse {
    ChartEllipse {
        below,
        semi_theta: DEFAULT_SEMI_THETA,
        semi_phi: DEFAULT_SEMI_PHI,
        approximate: false,
    }
}

/// Chart regions where the surface crosses a horizontal plane at `height`,
/// approximated by ellipses. Targets are assumed level; otherwise the mean
/// height is used and the ellipse is flagged approximate.
pub fn plane_ellipse(surface: &DtsSurface, height: f64, below: bool) -> Option<ChartEllipse> {
    let targets = surface.targets();
    let zs: Vec<f64> = targets.iter().map(|t| t.position.z).collect();
    let mean = zs.iter().sum::<f64>() / zs.len() as f64;
    let approximate = zs.iter().any(|z| (z - mean).abs() > 1e-9);
    let h = if below { mean - height } else { height - mean };
    let rho_max = surface.profile_point(0.5).1;
    if h <= 0.0 || h >= rho_max {
        return None;
    }
    let semi_phi = 1.0 - (2.0 / PI) * (h / rho_max).asin();
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if surface.profile_point(mid).1 < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(ChartEllipse {
        below,
        semi_theta: 0.5 - 0.5 * (lo + hi),
        semi_phi,
        approximate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveSegment {
    /// Meridian circle piece at fixed theta.
    Line { theta: f64, phi0: f64, phi1: f64 },
    /// `|theta| = 0.5 + a_theta cos t`, `phi = c +- a_phi sin t`, with the
    /// sign of theta fixed per segment.
    Ellipse {
        theta_sign: f64,
        below: bool,
        a_theta: f64,
        a_phi: f64,
        t0: f64,
        t1: f64,
    },
}

impl CurveSegment {
    /// Chart point `(phi, theta)` at `s` in `[0, 1]`.
    pub fn point(&self, s: f64) -> (f64, f64) {
        match *self {
            CurveSegment::Line { theta, phi0, phi1 } => (phi0 + (phi1 - phi0) * s, theta),
            CurveSegment::Ellipse {
                theta_sign,
                below,
                a_theta,
                a_phi,
                t0,
                t1,
            } => {
                let t = t0 + (t1 - t0) * s;
                let phi = if below {
                    -1.0 + a_phi * t.sin()
                } else {
                    1.0 - a_phi * t.sin()
                };
                (phi.clamp(-1.0, 1.0), theta_sign * (0.5 + a_theta * t.cos()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCurve {
    pub region: CameraRegion,
    pub segments: Vec<CurveSegment>,
    pub theta_bounds: (f64, f64),
}

impl SearchCurve {
    pub fn sample(&self, per_segment: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for seg in &self.segments {
            for i in 0..=per_segment {
                out.push(seg.point(i as f64 / per_segment as f64));
            }
        }
        out
    }
}

fn region_bounds(region: CameraRegion) -> (f64, f64) {
    let (lo, hi) = region.interval();
    (lo + REGION_MARGIN, hi - REGION_MARGIN)
}

/// Intersection of the sorted intervals of `t` in `[0, pi]`.
fn intersect(a: (f64, f64), b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    b.iter()
        .filter_map(|&(lo, hi)| {
            let l = lo.max(a.0);
            let h = hi.min(a.1);
            (h > l).then_some((l, h))
        })
        .collect()
}

/// Search curve through the start point, confined to the start region.
///
/// External regions use the two meridian lines `theta = +-|theta0|`. The
/// apex and external-apex regions use an ellipse concentric with the floor
/// (start below the targets) or ceiling (start above) ellipse, scaled to pass
/// through the start and mirrored onto both sides of the 180 degree line,
/// where the halves meet with vertical chart tangents.
pub fn build_search_curve(
    region: CameraRegion,
    start: (f64, f64),
    floor: Option<ChartEllipse>,
    ceiling: Option<ChartEllipse>,
) -> SearchCurve {
    let (phi0, theta0) = start;
    let bounds = region_bounds(region);
    if region.is_external() {
        let t = theta0.abs();
        return SearchCurve {
            region,
            segments: vec![
                CurveSegment::Line { theta: t, phi0: -1.0, phi1: 1.0 },
                CurveSegment::Line { theta: -t, phi0: 1.0, phi1: -1.0 },
            ],
            theta_bounds: (t, t),
        };
    }
    let below = phi0 <= 0.0;
    let shape = if below { floor } else { ceiling }.unwrap_or_else(|| default_ellipse(below));
    let shape = ChartEllipse { below, ..shape };
    let k = shape.level(phi0, theta0).max(1e-9);
    let a_theta = k * shape.semi_theta;
    let a_phi = k * shape.semi_phi;

    // theta condition: cos t in [(lo - .5)/a, (hi - .5)/a].
    let clamp_acos = |v: f64| v.clamp(-1.0, 1.0).acos();
    let t_theta = (
        clamp_acos((bounds.1 - 0.5) / a_theta),
        clamp_acos((bounds.0 - 0.5) / a_theta),
    );
    // The curve stays in its own half of the chart (phi <= 0 below, phi > 0
    // above) so that a manipulation and its inverse pick the same family.
    let reach = if below { 1.0 } else { 1.0 - REGION_MARGIN };
    let phi_ok: Vec<(f64, f64)> = if a_phi <= reach {
        vec![(0.0, PI)]
    } else {
        let t1 = (reach / a_phi).asin();
        vec![(0.0, t1), (PI - t1, PI)]
    };
    let pieces = intersect(t_theta, &phi_ok);

    let mut segments = Vec::new();
    // Positive side runs t from pi to 0 (increasing |theta|), the negative
    // side runs back, so the chain closes through phi = -+1.
    for &(lo, hi) in pieces.iter().rev() {
        segments.push(CurveSegment::Ellipse {
            theta_sign: 1.0,
            below,
            a_theta,
            a_phi,
            t0: hi,
            t1: lo,
        });
    }
    for &(lo, hi) in pieces.iter() {
        segments.push(CurveSegment::Ellipse {
            theta_sign: -1.0,
            below,
            a_theta,
            a_phi,
            t0: lo,
            t1: hi,
        });
    }
    SearchCurve {
        region,
        segments,
        theta_bounds: bounds,
    }
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn two_targets(surface: &DtsSurface) -> Result<[Vec3; 2]> {
    let b = surface
        .target_b
        .ok_or_else(|| Error::InvalidInput("two targets required".into()))?;
    Ok([surface.target_a.position, b.position])
}

fn oriented(position: Vec3, goals: &[ScreenGoal], ctx: &ManipContext) -> Result<(DroneConfig, Vec<Screen>)> {
    let res = feasible_orientation(&position, goals, &ctx.intrinsics, &ctx.orientation)?;
    let config = res.apply(&DroneConfig::at(position));
    let screens = goals
        .iter()
        .map(|g| project(&config, &ctx.intrinsics, &g.target).map(|p| p.screen))
        .collect::<Result<Vec<_>>>()?;
    Ok((config, screens))
}

fn goals_for(surface: &DtsSurface, framing: &[Screen]) -> Vec<ScreenGoal> {
    surface
        .targets()
        .iter()
        .zip(framing)
        .map(|(t, s)| ScreenGoal {
            target: t.position,
            screen: *s,
        })
        .collect()
}

/// Surface used by the orbit manipulator: concave (type 1) surfaces are
/// swapped for the plane-capped one with the larger safety distance
/// `r - AB/2`, the closest convex surface. The framing angle is kept.
pub fn orbit_surface(surface: &DtsSurface) -> Result<DtsSurface> {
    if surface.kind != SurfaceType::Type1 || surface.merged {
        return Ok(surface.clone());
    }
    let ab = surface.distance_ab().unwrap_or(0.0);
    let d = surface.toric_radius - ab / 2.0;
    let b = surface.target_b;
    build_surface(&surface.target_a, b.as_ref(), surface.alpha, d)
}

/// Moves the drone on the toric surface by a chart-space drag and keeps the
/// current on-screen framing.
pub fn manipulate_view_angle(
    surface: &DtsSurface,
    start: (f64, f64),
    delta: (f64, f64),
    framing: &[Screen],
    ctx: &ManipContext,
) -> Result<ManipulationResult> {
    let surf = orbit_surface(surface)?;
    let phi = start.0 + delta.0;
    let theta = start.1 + delta.1;
    let clamped = !(-1.0..=1.0).contains(&phi) || !(-1.0..=1.0).contains(&theta);
    let (phi, theta) = (phi.clamp(-1.0, 1.0), theta.clamp(-1.0, 1.0));
    let position = surf.dts_to_world(phi, theta);
    let goals = goals_for(&surf, framing);
    let (config, screen) = oriented(position, &goals, ctx)?;
    Ok(ManipulationResult {
        config,
        chart: Some((phi, theta)),
        surface: Some(surf),
        screen,
        roll: 0.0,
        collision_adjusted: false,
        clamped,
    })
}

/// Finds the point of the start region's search curve, on the surface
/// implied by the requested framing, that minimizes the roll needed to
/// realize it. Ties go to the point closest to the start in the chart.
///
/// The search curve's ellipse shape is taken from whichever of the current
/// and requested surfaces is larger, so that requesting the original
/// framing again searches the same curve.
pub fn manipulate_position(
    surface: &DtsSurface,
    start: (f64, f64),
    framing: &[Screen; 2],
    ctx: &ManipContext,
) -> Result<ManipulationResult> {
    let targets = two_targets(surface)?;
    let alpha = framing_alpha(&ctx.intrinsics, framing);
    let b = surface.target_b;
    let target_surf = build_surface(&surface.target_a, b.as_ref(), alpha, surface.safety)?;
    let shape_surf = if alpha < surface.alpha { &target_surf } else { surface };
    let floor = ctx.floor.and_then(|h| plane_ellipse(shape_surf, h, true));
    let ceiling = ctx.ceiling.and_then(|h| plane_ellipse(shape_surf, h, false));
    let region = camera_region(start.1);
    let curve = build_search_curve(region, start, floor, ceiling);

    let roll_at = |p: (f64, f64)| -> f64 {
        let w = target_surf.dts_to_world(p.0, p.1);
        roll_for_viewpoint(&w, framing, &targets, &ctx.intrinsics)
            .map(f64::abs)
            .unwrap_or(PI)
    };
    let chart_dist = |p: (f64, f64)| (p.0 - start.0).hypot(p.1 - start.1);

    let signed_roll = |p: (f64, f64)| -> f64 {
        let w = target_surf.dts_to_world(p.0, p.1);
        roll_for_viewpoint(&w, framing, &targets, &ctx.intrinsics).unwrap_or(PI)
    };
    let mut best: Option<((f64, f64), f64)> = None;
    let mut offer = |p: (f64, f64), v: f64| {
        let better = match best {
            None => true,
            Some((bp, bv)) => v < bv - 1e-9 || ((v - bv).abs() <= 1e-9 && chart_dist(p) < chart_dist(bp)),
        };
        if better {
            best = Some((p, v));
        }
    };
    let n = BRACKET_SAMPLES;
    for seg in &curve.segments {
        let f = |s: f64| roll_at(seg.point(s));
        let g = |s: f64| signed_roll(seg.point(s));
        let at = |i: usize| i as f64 / n as f64;
        let signed: Vec<f64> = (0..=n).map(|i| g(at(i))).collect();
        let samples: Vec<f64> = signed.iter().map(|v| v.abs()).collect();
        // Exact zeros: bisect sign changes of the signed roll (skipping the
        // wrap-around at +-pi).
        for i in 0..n {
            let (ga, gb) = (signed[i], signed[i + 1]);
            if ga == 0.0 {
                offer(seg.point(at(i)), 0.0);
            }
            if ga * gb < 0.0 && ga.abs() < FRAC_PI_2 && gb.abs() < FRAC_PI_2 {
                let (mut lo, mut hi) = (at(i), at(i + 1));
                let mut glo = ga;
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    let gm = g(mid);
                    if (gm < 0.0) == (glo < 0.0) {
                        lo = mid;
                        glo = gm;
                    } else {
                        hi = mid;
                    }
                }
                let s = 0.5 * (lo + hi);
                offer(seg.point(s), f(s));
            }
        }
        if signed[n] == 0.0 {
            offer(seg.point(1.0), 0.0);
        }
        // Refine around every local minimum of the samples.
        for i in 0..=n {
            let left = if i == 0 { f64::INFINITY } else { samples[i - 1] };
            let right = if i == n { f64::INFINITY } else { samples[i + 1] };
            if samples[i] > left || samples[i] > right {
                continue;
            }
            let (s, v) = golden_section(&f, at(i.saturating_sub(1)), at((i + 1).min(n)), GOLDEN_ITERS);
            let (s, v) = if samples[i] < v { (at(i), samples[i]) } else { (s, v) };
            offer(seg.point(s), v);
        }
    }
    let ((phi, theta), roll) = best.ok_or_else(|| Error::InvalidInput("empty search curve".into()))?;
    let position = target_surf.dts_to_world(phi, theta);
    let goals = goals_for(&target_surf, framing);
    let (config, screen) = oriented(position, &goals, ctx)?;
    Ok(ManipulationResult {
        config,
        chart: Some((phi, theta)),
        surface: Some(target_surf),
        screen,
        roll,
        collision_adjusted: false,
        clamped: false,
    })
}

/// Moves the drone along the line to `target` so that the distance changes
/// by `delta`, never closer than the safety distance.
pub fn manipulate_dolly(config: &DroneConfig, target: &Vec3, delta: f64, safety: f64) -> Result<ManipulationResult> {
    let to_target = target - config.position;
    let dist = to_target.norm();
    if dist < 1e-12 {
        return Err(Error::AtCameraOrigin);
    }
    let wanted = dist + delta;
    let clamped = wanted < safety;
    let new_dist = wanted.max(safety);
    let position = target - to_target / dist * new_dist;
    Ok(ManipulationResult {
        config: DroneConfig { position, ..*config },
        chart: None,
        surface: None,
        screen: Vec::new(),
        roll: config.roll,
        collision_adjusted: false,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldMove {
    /// Sideways along the camera's horizontal right axis.
    Truck,
    /// Vertical.
    Pedestal,
    /// Along the horizontal viewing direction.
    Forward,
    Pan,
    Tilt,
}

pub fn world_manipulator(config: &DroneConfig, kind: WorldMove, delta: f64, tilt_range: (f64, f64)) -> DroneConfig {
    let (s, c) = config.yaw.sin_cos();
    let right = Vec3::new(c, s, 0.0);
    let forward = Vec3::new(-s, c, 0.0);
    let mut out = *config;
    match kind {
        WorldMove::Truck => out.position += right * delta,
        WorldMove::Pedestal => out.position += WORLD_UP * delta,
        WorldMove::Forward => out.position += forward * delta,
        WorldMove::Pan => out.yaw = crate::geometry::wrap_angle(config.yaw + delta),
        WorldMove::Tilt => out.tilt = (config.tilt + delta).clamp(tilt_range.0, tilt_range.1),
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CollisionOutcome {
    /// The desired point is free.
    Free(Vec3),
    /// Pushed or pulled along the half line to a free point.
    Adjusted(Vec3),
    /// No free point on the half line: keep the drone where it is.
    Hold,
}

impl CollisionOutcome {
    pub fn position(&self) -> Option<Vec3> {
        match self {
            CollisionOutcome::Free(p) | CollisionOutcome::Adjusted(p) => Some(*p),
            CollisionOutcome::Hold => None,
        }
    }
}

/// Subtracts the sorted, merged `blocked` intervals from `[lo, hi]`.
pub fn free_intervals(lo: f64, hi: f64, blocked: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    blocked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut free = Vec::new();
    let mut cur = lo;
    for &(a, b) in blocked.iter() {
        if b <= cur {
            continue;
        }
        if a > cur {
            free.push((cur, a.min(hi)));
        }
        cur = cur.max(b);
        if cur >= hi {
            break;
        }
    }
    if cur < hi {
        free.push((cur, hi));
    }
    free.retain(|(a, b)| b > a);
    free
}

/// Resolves a desired drone position against obstacles by sliding it along
/// the half line from the anchor target through the desired point.
pub fn avoid_collision(
    desired: &Vec3,
    anchor: &Vec3,
    obstacles: &[Obstacle],
    bounds: &Aabb,
    previous: &Vec3,
    min_distance: f64,
) -> Result<CollisionOutcome> {
    let offset = desired - anchor;
    let t_desired = offset.norm();
    if t_desired < 1e-12 {
        return Err(Error::InvalidInput("anchor coincides with desired position".into()));
    }
    let dir = offset / t_desired;
    let Some((b0, b1)) = bounds.ray_interval(anchor, &dir) else {
        return Ok(CollisionOutcome::Hold);
    };
    let lo = b0.max(min_distance).max(0.0);
    let hi = b1;
    let mut blocked: Vec<(f64, f64)> = obstacles.iter().filter_map(|o| o.ray_interval(anchor, &dir)).collect();
    let free = free_intervals(lo, hi, &mut blocked);
    if free.iter().any(|&(a, b)| t_desired >= a && t_desired <= b)
        && !obstacles.iter().any(|o| o.contains(desired))
    {
        return Ok(CollisionOutcome::Free(*desired));
    }
    let margin = 1e-6;
    let t_prev = (previous - anchor).dot(&dir);
    let mut best: Option<(f64, f64)> = None;
    for (a, b) in free {
        let (a, b) = (a + margin, b - margin);
        if b < a {
            continue;
        }
        let t = t_prev.clamp(a, b);
        let d = (anchor + dir * t - previous).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((t, d));
        }
    }
    Ok(match best {
        Some((t, _)) => CollisionOutcome::Adjusted(anchor + dir * t),
        None => CollisionOutcome::Hold,
    })
}
