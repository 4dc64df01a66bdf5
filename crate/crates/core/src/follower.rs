//! Path following on a simulated drone: arc-length tables, monotone
//! closest-point progression, velocity-clamped user control and a bounded
//! double-integrator tracker.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::smoother::TrajectorySpline;

pub const DEFAULT_KP: f64 = 4.0;
pub const DEFAULT_KD: f64 = 4.0;
/// Chord tolerance of the arc-length table, meters.
pub const CHORD_TOL: f64 = 1e-3;
const MAX_DEPTH: usize = 24;
/// Closest-point progress this close to the end counts as arrival.
const FINISH_TOL: f64 = 1e-6;

/// One table row: arc length `u`, global spline parameter `s`, position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSample {
    pub u: f64,
    pub s: f64,
    pub position: Vec3,
}

/// Arc-length reparameterization `S(u), u in [0, L]` of a spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcLengthTable {
    pub spline: TrajectorySpline,
    pub samples: Vec<ArcSample>,
    pub length: f64,
}

const GL_X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
const GL_W: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

fn speed_integral(spline: &TrajectorySpline, s0: f64, s1: f64) -> f64 {
    let (mid, half) = (0.5 * (s0 + s1), 0.5 * (s1 - s0));
    GL_X.iter()
        .zip(GL_W)
        .map(|(&x, w)| w * spline.eval(mid + half * x, 1).norm())
        .sum::<f64>()
        * half
}

#[allow(clippy::too_many_arguments)]
fn subdivide(spline: &TrajectorySpline, s0: f64, p0: Vec3, s1: f64, p1: Vec3, tol: f64, depth: usize, out: &mut Vec<(f64, Vec3)>) {
    let sm = 0.5 * (s0 + s1);
    let pm = spline.eval(sm, 0);
    // Deviation at the quarter points as well, so inflections are caught.
    let q1 = spline.eval(0.5 * (s0 + sm), 0);
    let q3 = spline.eval(0.5 * (sm + s1), 0);
    let dev = (pm - 0.5 * (p0 + p1))
        .norm()
        .max((q1 - 0.75 * p0 - 0.25 * p1).norm())
        .max((q3 - 0.25 * p0 - 0.75 * p1).norm());
    if dev > tol && depth < MAX_DEPTH {
        subdivide(spline, s0, p0, sm, pm, tol, depth + 1, out);
        subdivide(spline, sm, pm, s1, p1, tol, depth + 1, out);
    } else {
        out.push((s1, p1));
    }
}

/// Adaptive table with chord error below `ds` (clamped to `CHORD_TOL`).
pub fn build_arc_table(spline: &TrajectorySpline, ds: f64) -> ArcLengthTable {
    let tol = ds.clamp(1e-9, CHORD_TOL);
    let mut points = vec![(0.0, spline.start())];
    for i in 0..spline.piece_count() {
        let s0 = i as f64;
        let p0 = spline.eval(s0, 0);
        // Seed with a few pieces so that symmetric curves are not mistaken
        // for chords.
        let seeds = 4;
        let mut prev = (s0, p0);
        for k in 1..=seeds {
            let s = s0 + k as f64 / seeds as f64;
            let p = spline.piece_eval(i, k as f64 / seeds as f64, 0);
            subdivide(spline, prev.0, prev.1, s, p, tol, 0, &mut points);
            prev = (s, p);
        }
    }
    let mut samples = vec![ArcSample {
        u: 0.0,
        s: 0.0,
        position: points[0].1,
    }];
    for w in points.windows(2) {
        let du = speed_integral(spline, w[0].0, w[1].0);
        let last = samples.last().unwrap();
        if du > 0.0 {
            samples.push(ArcSample {
                u: last.u + du,
                s: w[1].0,
                position: w[1].1,
            });
        } else if w[1].0 > last.s {
            // Stationary stretch; advance the parameter without adding length.
            let l = samples.last_mut().unwrap();
            l.s = w[1].0;
            l.position = w[1].1;
        }
    }
    let length = samples.last().unwrap().u;
    ArcLengthTable {
        spline: spline.clone(),
        samples,
        length,
    }
}

impl ArcLengthTable {
    /// Spline parameter at arc length `u`, linear between rows.
    pub fn param(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, self.length);
        let k = self.samples.partition_point(|r| r.u <= u);
        if k == 0 {
            return self.samples[0].s;
        }
        if k >= self.samples.len() {
            return self.samples.last().unwrap().s;
        }
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        a.s + (b.s - a.s) * (u - a.u) / (b.u - a.u)
    }

    pub fn point(&self, u: f64) -> Vec3 {
        self.spline.eval(self.param(u), 0)
    }

    /// Position, unit tangent and curvature vector `d2S/du2` at `u`.
    pub fn derivatives(&self, u: f64) -> (Vec3, Vec3, Vec3) {
        let s = self.param(u);
        let p = self.spline.eval(s, 0);
        let d1 = self.spline.eval(s, 1);
        let speed = d1.norm();
        if speed < 1e-12 {
            return (p, Vec3::zeros(), Vec3::zeros());
        }
        let t = d1 / speed;
        let d2 = self.spline.eval(s, 2);
        let normal = (d2 - t * d2.dot(&t)) / (speed * speed);
        (p, t, normal)
    }
}

/// Closest curve point to `omega` with `u` in `[u_prev, u_prev + window]`.
/// Never returns less than `u_prev`.
pub fn closest_u(table: &ArcLengthTable, omega: &Vec3, u_prev: f64, window: f64) -> f64 {
    let lo = u_prev.clamp(0.0, table.length);
    let hi = (lo + window.max(0.0)).min(table.length);
    let rows = &table.samples;
    let first = rows.partition_point(|r| r.u <= lo).saturating_sub(1);
    let mut best = (table.point(lo) - omega).norm_squared();
    let mut best_u = lo;
    for k in first..rows.len().saturating_sub(1) {
        let (a, b) = (&rows[k], &rows[k + 1]);
        if a.u > hi {
            break;
        }
        let seg = b.position - a.position;
        let len2 = seg.norm_squared();
        let f = if len2 > 0.0 { ((omega - a.position).dot(&seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let u = (a.u + f * (b.u - a.u)).clamp(lo, hi);
        let d = (table.point(u) - omega).norm_squared();
        if d < best {
            best = d;
            best_u = u;
        }
    }
    best_u
}

/// User-controlled progression: the commanded acceleration and resulting
/// speed are clamped, the new goal lies ahead on the curve.
pub fn advance_goal(table: &ArcLengthTable, u_t: f64, accel: f64, speed: f64, dt: f64, vmax: f64, amax: f64) -> (f64, f64, Vec3) {
    let speed = (speed + accel.clamp(-amax, amax) * dt).clamp(0.0, vmax);
    let u = (u_t + speed * dt).min(table.length);
    (u, speed, table.point(u))
}

/// Position, velocity and acceleration reference for the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl Goal {
    pub fn fixed(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
        }
    }

    /// Reference moving along the table at `speed` with along-track
    /// acceleration `accel`.
    pub fn on_curve(table: &ArcLengthTable, u: f64, speed: f64, accel: f64) -> Self {
        let (p, t, n) = table.derivatives(u);
        let moving = u < table.length;
        let (speed, accel) = if moving { (speed, accel) } else { (0.0, 0.0) };
        Self {
            position: p,
            velocity: t * speed,
            acceleration: t * accel + n * speed * speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp: DEFAULT_KP,
            kd: DEFAULT_KD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDroneState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw: f64,
    pub tilt: f64,
    pub u: f64,
}

impl SimDroneState {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            yaw: 0.0,
            tilt: 0.0,
            u: 0.0,
        }
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// One step of the clamped double integrator. Command
/// `a = a_ref + Kp (x_ref - x) + Kd (v_ref - v)`, clamped to `amax`;
/// velocity clamped to `vmax`; semi-implicit Euler.
pub fn simulate_step(state: &SimDroneState, goal: &Goal, dt: f64, gains: &Gains, amax: f64, vmax: f64) -> SimDroneState {
    let cmd = goal.acceleration + (goal.position - state.position) * gains.kp + (goal.velocity - state.velocity) * gains.kd;
    let a = clamp_norm(cmd, amax);
    // Projection on the velocity ball is non-expansive, so the realised
    // acceleration stays within amax.
    let v = clamp_norm(state.velocity + a * dt, vmax);
    SimDroneState {
        position: state.position + v * dt,
        velocity: v,
        acceleration: (v - state.velocity) / dt,
        ..*state
    }
}

/// Trapezoidal timing `u(t)`: ramp up at `amax`, cruise at `vmax`, ramp
/// down to stop at `length`. Returns `(u, speed, along-track accel)`.
pub fn timed_profile(length: f64, t: f64, vmax: f64, amax: f64) -> (f64, f64, f64) {
    if length <= 0.0 || t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let ramp_d = vmax * vmax / (2.0 * amax);
    let (vpeak, t_ramp, t_cruise) = if 2.0 * ramp_d >= length {
        let vp = (amax * length).sqrt();
        (vp, vp / amax, 0.0)
    } else {
        (vmax, vmax / amax, (length - 2.0 * ramp_d) / vmax)
    };
    let d_ramp = 0.5 * vpeak * t_ramp;
    let total = 2.0 * t_ramp + t_cruise;
    if t < t_ramp {
        (0.5 * amax * t * t, amax * t, amax)
    } else if t < t_ramp + t_cruise {
        (d_ramp + vpeak * (t - t_ramp), vpeak, 0.0)
    } else if t < total {
        let r = total - t;
        (length - 0.5 * amax * r * r, amax * r, -amax)
    } else {
        (length, 0.0, 0.0)
    }
}

/// Goal point of the timed mode at time `t`.
pub fn follow_timed(table: &ArcLengthTable, t: f64, vmax: f64, amax: f64) -> Goal {
    let (u, speed, accel) = timed_profile(table.length, t, vmax, amax);
    Goal::on_curve(table, u, speed, accel)
}

/// Share of the acceleration budget spent on the centripetal term when
/// speeds are capped by curvature.
pub const LATERAL_SHARE: f64 = 0.5;

/// Stretch at either end where curvature is ignored: the spline parameter
/// speed vanishes there, the curvature estimate is singular, and end
/// braking already keeps the speed low.
const CURVATURE_END_MARGIN: f64 = 0.05;

fn row_curvature(table: &ArcLengthTable, u: f64) -> f64 {
    if u < CURVATURE_END_MARGIN || u > table.length - CURVATURE_END_MARGIN {
        return 0.0;
    }
    table.derivatives(u).2.norm()
}

/// Spacing of the curvature speed profile, meters.
pub const PROFILE_STEP: f64 = 0.01;

/// Speed limit every `step` meters of arc length (the last entry at the
/// end): `sqrt(a_lat / kappa)` capped at `vmax`, lowered ahead of tight
/// stretches so that braking at `a_brake` reaches it.
pub fn curvature_speed_profile(table: &ArcLengthTable, step: f64, vmax: f64, a_lat: f64, a_brake: f64) -> Vec<f64> {
    let n = (table.length / step).ceil() as usize + 1;
    let at = |k: usize| (k as f64 * step).min(table.length);
    let mut v: Vec<f64> = (0..n)
        .map(|k| {
            let kappa = row_curvature(table, at(k));
            if kappa > 1e-9 {
                (a_lat / kappa).sqrt().min(vmax)
            } else {
                vmax
            }
        })
        .collect();
    for k in (0..n.saturating_sub(1)).rev() {
        let du = at(k + 1) - at(k);
        v[k] = v[k].min((v[k + 1] * v[k + 1] + 2.0 * a_brake * du).sqrt());
    }
    v
}

/// Time parameterization of a path: `(t, u, speed)` every profile step.
/// Ramps at `amax` from rest to rest, capped by the curvature ceiling;
/// on a straight path this is the trapezoidal profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub rows: Vec<(f64, f64, f64)>,
}

impl Timing {
    pub fn build(table: &ArcLengthTable, step: f64, vmax: f64, amax: f64, a_lat: f64) -> Self {
        let n = (table.length / step).ceil() as usize + 1;
        let at = |k: usize| (k as f64 * step).min(table.length);
        let mut v: Vec<f64> = (0..n)
            .map(|k| {
                let kappa = row_curvature(table, at(k));
                if kappa > 1e-9 {
                    (a_lat / kappa).sqrt().min(vmax)
                } else {
                    vmax
                }
            })
            .collect();
        v[0] = 0.0;
        v[n - 1] = 0.0;
        for k in 1..n {
            v[k] = v[k].min((v[k - 1] * v[k - 1] + 2.0 * amax * (at(k) - at(k - 1))).sqrt());
        }
        for k in (0..n - 1).rev() {
            v[k] = v[k].min((v[k + 1] * v[k + 1] + 2.0 * amax * (at(k + 1) - at(k))).sqrt());
        }
        let mut rows = Vec::with_capacity(n);
        let mut t = 0.0;
        for k in 0..n {
            if k > 0 {
                let mean = 0.5 * (v[k - 1] + v[k]);
                if mean > 0.0 {
                    t += (at(k) - at(k - 1)) / mean;
                }
            }
            rows.push((t, at(k), v[k]));
        }
        Self { rows }
    }

    pub fn duration(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.0)
    }

    /// `(u, speed, along-track accel)` at time `t`, constant acceleration
    /// between rows.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        let last = *self.rows.last().unwrap();
        if t >= last.0 {
            return (last.1, 0.0, 0.0);
        }
        if t <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let k = self.rows.partition_point(|r| r.0 <= t).max(1);
        let ((t0, u0, v0), (t1, u1, v1)) = (self.rows[k - 1], self.rows[k]);
        let a = if t1 > t0 { (v1 - v0) / (t1 - t0) } else { 0.0 };
        let tau = t - t0;
        ((u0 + v0 * tau + 0.5 * a * tau * tau).min(u1), v0 + a * tau, a)
    }
}

/// Default closest-point search window.
pub fn default_window(vmax: f64, dt: f64) -> f64 {
    2.0 * vmax * dt * 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FollowMode {
    /// Speed driven by the operator's acceleration command.
    User,
    /// Trapezoidal timing from the start of the trajectory.
    Timed,
}

/// Per-tick output for telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowReport {
    pub goal: Vec3,
    pub u: f64,
    pub tracking_error: f64,
}

/// A drone following one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Follower {
    pub table: ArcLengthTable,
    pub mode: FollowMode,
    pub gains: Gains,
    pub vmax: f64,
    pub amax: f64,
    pub window: f64,
    /// Commanded along-track acceleration (user mode).
    pub command: f64,
    pub speed: f64,
    pub elapsed: f64,
    /// Closest-point arc length of the last tick.
    pub u: f64,
    /// Arc length of the last goal.
    pub u_goal: f64,
    /// Curvature speed limit every `PROFILE_STEP` meters (user mode).
    pub limits: Vec<f64>,
    /// Timed mode parameterization.
    pub timing: Timing,
}

impl Follower {
    pub fn new(spline: &TrajectorySpline, mode: FollowMode, vmax: f64, amax: f64, dt: f64) -> Self {
        let table = build_arc_table(spline, CHORD_TOL);
        let limits = curvature_speed_profile(&table, PROFILE_STEP, vmax, LATERAL_SHARE * amax, 0.5 * amax);
        let timing = Timing::build(&table, PROFILE_STEP, vmax, amax, LATERAL_SHARE * amax);
        Self {
            table,
            limits,
            timing,
            mode,
            gains: Gains::default(),
            vmax,
            amax,
            window: default_window(vmax, dt),
            command: 0.0,
            speed: 0.0,
            elapsed: 0.0,
            u: 0.0,
            u_goal: 0.0,
        }
    }

    pub fn finished(&self) -> bool {
        self.u >= self.table.length - FINISH_TOL
    }

    /// Curvature speed limit at arc length `u`, linear between entries.
    pub fn speed_limit(&self, u: f64) -> f64 {
        let x = (u / PROFILE_STEP).max(0.0);
        let k = x.floor() as usize;
        if k + 1 >= self.limits.len() {
            return *self.limits.last().unwrap();
        }
        let f = x - k as f64;
        self.limits[k] + (self.limits[k + 1] - self.limits[k]) * f
    }

    /// Lowest curvature speed limit over `[u0, u1]`.
    pub fn speed_limit_over(&self, u0: f64, u1: f64) -> f64 {
        let first = (u0 / PROFILE_STEP).max(0.0).ceil() as usize;
        let last = ((u1 / PROFILE_STEP).max(0.0).floor() as usize).min(self.limits.len().saturating_sub(1));
        let inner = self.limits.get(first..=last).unwrap_or(&[]).iter().copied();
        inner.fold(self.speed_limit(u0).min(self.speed_limit(u1)), f64::min)
    }

    pub fn set_command(&mut self, accel: f64) {
        self.command = accel.clamp(-self.amax, self.amax);
    }

    /// Advance one tick. The tracking error is the distance from the drone
    /// to its closest-point projection at the start of the tick.
    pub fn step(&mut self, state: &SimDroneState, dt: f64) -> (SimDroneState, FollowReport) {
        let u_t = closest_u(&self.table, &state.position, self.u, self.window);
        let error = (self.table.point(u_t) - state.position).norm();
        let goal = match self.mode {
            FollowMode::User => {
                // The goal never moves back and never jumps more than
                // vmax * dt, even when the projection cuts a corner.
                let before = self.speed;
                let anchor = u_t.max(self.u_goal);
                // Speed cap that lets the goal stop at the end of the path
                // while braking at half the acceleration budget.
                let remaining = (self.table.length - anchor).max(0.0);
                let vcap = self
                    .vmax
                    .min((self.amax * remaining).sqrt())
                    .min(self.speed_limit_over(anchor, anchor + self.vmax * dt));
                let (u, speed, _) = advance_goal(&self.table, anchor, self.command, self.speed, dt, vcap, self.amax);
                let u = u.min(self.u_goal + self.vmax * dt);
                self.speed = speed;
                self.u_goal = u;
                Goal::on_curve(&self.table, u, speed, (speed - before) / dt)
            }
            FollowMode::Timed => {
                self.elapsed += dt;
                let (u, speed, accel) = self.timing.sample(self.elapsed);
                Goal::on_curve(&self.table, u, speed, accel)
            }
        };
        self.u = u_t;
        let mut next = simulate_step(state, &goal, dt, &self.gains, self.amax, self.vmax);
        next.u = u_t;
        (
            next,
            FollowReport {
                goal: goal.position,
                u: u_t,
                tracking_error: error,
            },
        )
    }
}
