//! Feasible camera orientation: roll and pitch pinned to zero, yaw free and
//! gimbal tilt inside an interval, chosen so that targets land as close as
//! possible to their desired screen positions.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::camera::{
    desired_ray_with_frame, project_with_frame, CameraFrame, CameraIntrinsics, DroneConfig, Screen,
};
use crate::error::{Error, Result};
use crate::geometry::{directed_angle, project_on_plane, wrap_angle, Vec3, WORLD_UP};

/// Extra error charged per target that ends up behind the camera.
pub const BEHIND_PENALTY: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenGoal {
    pub target: Vec3,
    pub screen: Screen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationParams {
    pub tilt_range: (f64, f64),
    pub epsilon: f64,
    pub max_iter: usize,
    /// Refine the fixed-point result by damped Gauss-Newton on the screen
    /// error, and compare against a coarse global scan.
    pub polish: bool,
}

impl Default for OrientationParams {
    fn default() -> Self {
        Self {
            tilt_range: (-FRAC_PI_2, FRAC_PI_2),
            epsilon: 1e-3,
            max_iter: 50,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationResult {
    pub yaw: f64,
    pub tilt: f64,
    /// Root mean square screen distance over targets.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The mean target direction was vertical and had to be nudged.
    pub perturbed: bool,
    /// Mean squared screen error after each yaw/tilt sweep.
    pub history: Vec<f64>,
}

impl OrientationResult {
    pub fn apply(&self, config: &DroneConfig) -> DroneConfig {
        DroneConfig {
            roll: 0.0,
            pitch: 0.0,
            yaw: self.yaw,
            tilt: self.tilt,
            ..*config
        }
    }
}

fn feasible_frame(yaw: f64, tilt: f64) -> CameraFrame {
    let (sp, cp) = yaw.sin_cos();
    let (sl, cl) = tilt.sin_cos();
    let x = Vec3::new(cp, sp, 0.0);
    let h = Vec3::new(-sp, cp, 0.0);
    CameraFrame {
        x,
        y: h * cl + WORLD_UP * sl,
        z: WORLD_UP * cl - h * sl,
    }
}

/// Yaw and tilt that point the optical axis along the mean of the unit
/// directions towards the targets. The flag reports a vertical mean that had
/// to be perturbed.
pub fn initial_orientation(position: &Vec3, targets: &[Vec3]) -> Result<(f64, f64, bool)> {
    let mut sum = Vec3::zeros();
    for t in targets {
        let d = t - position;
        let n = d.norm();
        if n < 1e-12 {
            return Err(Error::AtCameraOrigin);
        }
        sum += d / n;
    }
    if sum.norm() < 1e-12 {
        return Ok((0.0, 0.0, true));
    }
    let y = sum.normalize();
    let horiz = y.x.hypot(y.y);
    if horiz < 1e-9 {
        let tilt = (FRAC_PI_2 - 1e-6) * y.z.signum();
        return Ok((0.0, tilt, true));
    }
    Ok(((-y.x).atan2(y.y), y.z.clamp(-1.0, 1.0).asin(), false))
}

fn actual_dir(position: &Vec3, target: &Vec3) -> Vec3 {
    (target - position).normalize()
}

/// Signed yaw correction that brings the desired ray onto the target
/// direction, measured around the world vertical.
pub fn yaw_error(config: &DroneConfig, intr: &CameraIntrinsics, goal: &ScreenGoal) -> Result<f64> {
    let frame = config.frame();
    let vd = desired_ray_with_frame(&frame, intr, &goal.screen);
    let va = actual_dir(&config.position, &goal.target);
    if project_on_plane(&vd, &WORLD_UP).norm() < 1e-12 || project_on_plane(&va, &WORLD_UP).norm() < 1e-12 {
        return Err(Error::DegenerateProjection);
    }
    Ok(directed_angle(&WORLD_UP, &vd, &va))
}

/// Signed tilt correction around the camera east axis.
pub fn tilt_error(config: &DroneConfig, intr: &CameraIntrinsics, goal: &ScreenGoal) -> Result<f64> {
    let frame = config.frame();
    let vd = desired_ray_with_frame(&frame, intr, &goal.screen);
    let va = actual_dir(&config.position, &goal.target);
    if project_on_plane(&vd, &frame.x).norm() < 1e-12 || project_on_plane(&va, &frame.x).norm() < 1e-12 {
        return Err(Error::DegenerateProjection);
    }
    Ok(directed_angle(&frame.x, &vd, &va))
}

/// Per-target screen error vector for a feasible orientation, with the
/// behind-camera penalty as an extra component.
fn residuals(position: &Vec3, goals: &[ScreenGoal], intr: &CameraIntrinsics, yaw: f64, tilt: f64) -> Vec<f64> {
    let frame = feasible_frame(yaw, tilt);
    let mut r = Vec::with_capacity(goals.len() * 3);
    for g in goals {
        match project_with_frame(position, &frame, intr, &g.target) {
            Ok(p) => {
                let e = p.screen - g.screen;
                r.push(e.x);
                r.push(e.y);
                r.push(if p.behind { BEHIND_PENALTY } else { 0.0 });
            }
            Err(_) => {
                r.extend([0.0, 0.0, BEHIND_PENALTY]);
            }
        }
    }
    r
}

/// Mean squared screen error of the framing for a feasible orientation.
pub fn mean_squared_error(
    position: &Vec3,
    goals: &[ScreenGoal],
    intr: &CameraIntrinsics,
    yaw: f64,
    tilt: f64,
) -> f64 {
    let r = residuals(position, goals, intr, yaw, tilt);
    r.iter().map(|v| v * v).sum::<f64>() / goals.len() as f64
}

/// Root mean square screen distance, the residual reported by the solver.
pub fn screen_error(position: &Vec3, goals: &[ScreenGoal], intr: &CameraIntrinsics, yaw: f64, tilt: f64) -> f64 {
    mean_squared_error(position, goals, intr, yaw, tilt).sqrt()
}

/// Projected, damped Gauss-Newton on (yaw, tilt) with tilt box constraints.
fn polish(
    position: &Vec3,
    goals: &[ScreenGoal],
    intr: &CameraIntrinsics,
    range: (f64, f64),
    mut yaw: f64,
    mut tilt: f64,
) -> (f64, f64, f64) {
    let cost = |y: f64, t: f64| mean_squared_error(position, goals, intr, y, t);
    let mut f = cost(yaw, tilt);
    let mut lambda = 1e-6;
    let fixed_tilt = range.1 - range.0 < 1e-12;
    for _ in 0..60 {
        let r0 = residuals(position, goals, intr, yaw, tilt);
        let h = 1e-7;
        let ry: Vec<f64> = residuals(position, goals, intr, yaw + h, tilt)
            .iter()
            .zip(residuals(position, goals, intr, yaw - h, tilt))
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let rt: Vec<f64> = if fixed_tilt {
            vec![0.0; r0.len()]
        } else {
            residuals(position, goals, intr, yaw, tilt + h)
                .iter()
                .zip(residuals(position, goals, intr, yaw, tilt - h))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()
        };
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..r0.len() {
            a11 += ry[i] * ry[i];
            a12 += ry[i] * rt[i];
            a22 += rt[i] * rt[i];
            g1 += ry[i] * r0[i];
            g2 += rt[i] * r0[i];
        }
        if g1.abs() + g2.abs() < 1e-16 {
            break;
        }
        let mut improved = false;
        for _ in 0..12 {
            let d11 = a11 * (1.0 + lambda) + 1e-14;
            let d22 = a22 * (1.0 + lambda) + 1e-14;
            let det = d11 * d22 - a12 * a12;
            let (sy, st) = if fixed_tilt || det.abs() < 1e-300 {
                (-g1 / d11, 0.0)
            } else {
                (-(d22 * g1 - a12 * g2) / det, -(d11 * g2 - a12 * g1) / det)
            };
            let ny = wrap_angle(yaw + sy);
            let nt = (tilt + st).clamp(range.0, range.1);
            let nf = cost(ny, nt);
            if nf < f {
                let step = (ny - yaw).abs() + (nt - tilt).abs();
                yaw = ny;
                tilt = nt;
                f = nf;
                lambda = (lambda * 0.3).max(1e-12);
                improved = step > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (yaw, tilt, f)
}

/// Alternating yaw and tilt fixed-point iteration, each step averaging the
/// per-target directed-angle corrections, with the tilt clamped to its
/// interval after every update.
pub fn feasible_orientation(
    position: &Vec3,
    goals: &[ScreenGoal],
    intr: &CameraIntrinsics,
    params: &OrientationParams,
) -> Result<OrientationResult> {
    if goals.is_empty() {
        return Err(Error::InvalidInput("framing needs at least one target".into()));
    }
    let targets: Vec<Vec3> = goals.iter().map(|g| g.target).collect();
    let (mut yaw, tilt0, perturbed) = initial_orientation(position, &targets)?;
    let range = params.tilt_range;
    let mut tilt = tilt0.clamp(range.0, range.1);
    let n = goals.len() as f64;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let mut best = (mean_squared_error(position, goals, intr, yaw, tilt), yaw, tilt);
    for it in 0..params.max_iter {
        iterations = it + 1;
        let frame = feasible_frame(yaw, tilt);
        let mut dpsi = 0.0;
        for g in goals {
            let vd = desired_ray_with_frame(&frame, intr, &g.screen);
            let va = actual_dir(position, &g.target);
            dpsi += directed_angle(&WORLD_UP, &vd, &va);
        }
        dpsi /= n;
        yaw = wrap_angle(yaw + dpsi);

        let frame = feasible_frame(yaw, tilt);
        let mut dlam = 0.0;
        for g in goals {
            let vd = desired_ray_with_frame(&frame, intr, &g.screen);
            let va = actual_dir(position, &g.target);
            dlam += directed_angle(&frame.x, &vd, &va);
        }
        dlam /= n;
        let prev_tilt = tilt;
        tilt = (tilt + dlam).clamp(range.0, range.1);
        debug_assert!(tilt >= range.0 && tilt <= range.1);

        let mse = mean_squared_error(position, goals, intr, yaw, tilt);
        history.push(mse);
        if mse < best.0 {
            best = (mse, yaw, tilt);
        }
        // A correction swallowed by the clamp counts as converged.
        let applied = tilt - prev_tilt;
        if dpsi.abs() < params.epsilon && applied.abs() < params.epsilon {
            converged = true;
            break;
        }
    }
    let (_, mut yaw, mut tilt) = if converged {
        (mean_squared_error(position, goals, intr, yaw, tilt), yaw, tilt)
    } else {
        best
    };

    if params.polish {
        let (py, pt, pf) = polish(position, goals, intr, range, yaw, tilt);
        let (mut by, mut bt, mut bf) = (py, pt, pf);
        // Coarse scan to escape a local basin when several targets compete
        // or the tilt interval keeps a single target off its screen point.
        if pf > 1e-18 {
            let mut scan = Vec::new();
            let ny = 72;
            let nt = if range.1 - range.0 < 1e-12 { 1 } else { 19 };
            for i in 0..ny {
                let y = -PI + 2.0 * PI * i as f64 / ny as f64;
                for j in 0..nt {
                    let t = if nt == 1 { range.0 } else { range.0 + (range.1 - range.0) * j as f64 / (nt - 1) as f64 };
                    scan.push((mean_squared_error(position, goals, intr, y, t), y, t));
                }
            }
            scan.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &(_, y, t) in scan.iter().take(3) {
                let (qy, qt, qf) = polish(position, goals, intr, range, y, t);
                if qf < bf - 1e-15 {
                    (by, bt, bf) = (qy, qt, qf);
                }
            }
        }
        yaw = by;
        tilt = bt;
    }
    Ok(OrientationResult {
        yaw,
        tilt,
        residual: screen_error(position, goals, intr, yaw, tilt),
        iterations,
        converged,
        perturbed,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn initial_orientation_cases() {
        let (y, t, _) = initial_orientation(&Vec3::zeros(), &[Vec3::new(0.0, 3.0, 0.0)]).unwrap();
        assert_relative_eq!(y, 0.0);
        assert_relative_eq!(t, 0.0);
        let (_, t, _) = initial_orientation(&Vec3::zeros(), &[Vec3::new(0.0, 2.0, 2.0)]).unwrap();
        assert_relative_eq!(t, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        let (y, t, _) =
            initial_orientation(&Vec3::zeros(), &[Vec3::new(-1.0, 2.0, 0.0), Vec3::new(1.0, 2.0, 0.0)]).unwrap();
        assert_relative_eq!(y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(t, 0.0, epsilon = 1e-12);
        let (_, _, flag) = initial_orientation(&Vec3::zeros(), &[Vec3::new(0.0, 0.0, 3.0)]).unwrap();
        assert!(flag);
    }

    #[test]
    fn yaw_error_of_rotated_camera() {
        let intr = CameraIntrinsics::default();
        let goal = ScreenGoal {
            target: Vec3::new(0.0, 4.0, 0.0),
            screen: Screen::zeros(),
        };
        let c = DroneConfig::looking(Vec3::zeros(), 0.0, 0.0);
        assert_relative_eq!(yaw_error(&c, &intr, &goal).unwrap(), 0.0, epsilon = 1e-12);
        let c = DroneConfig::looking(Vec3::zeros(), 0.1, 0.0);
        assert_relative_eq!(yaw_error(&c, &intr, &goal).unwrap(), -0.1, epsilon = 1e-9);
    }

    #[test]
    fn vertical_offset_only_moves_tilt() {
        let intr = CameraIntrinsics::default();
        let goal = ScreenGoal {
            target: Vec3::new(0.0, 4.0, 1.0),
            screen: Screen::zeros(),
        };
        let c = DroneConfig::at(Vec3::zeros());
        assert_relative_eq!(yaw_error(&c, &intr, &goal).unwrap(), 0.0, epsilon = 1e-12);
        assert!(tilt_error(&c, &intr, &goal).unwrap() > 0.0);
    }

    #[test]
    fn single_target_look_at() {
        let intr = CameraIntrinsics::default();
        let goals = [ScreenGoal {
            target: Vec3::new(3.0, 1.0, 2.0),
            screen: Screen::zeros(),
        }];
        let res = feasible_orientation(&Vec3::zeros(), &goals, &intr, &OrientationParams::default()).unwrap();
        assert!(res.iterations <= 2);
        assert!(res.residual < 1e-6);
    }

    #[test]
    fn no_gimbal_keeps_tilt_zero() {
        let intr = CameraIntrinsics::default();
        let goals = [ScreenGoal {
            target: Vec3::new(0.5, 4.0, 2.0),
            screen: Screen::zeros(),
        }];
        let params = OrientationParams {
            tilt_range: (0.0, 0.0),
            ..Default::default()
        };
        let res = feasible_orientation(&Vec3::zeros(), &goals, &intr, &params).unwrap();
        assert_eq!(res.tilt, 0.0);
        let c = DroneConfig::looking(Vec3::zeros(), res.yaw, res.tilt);
        let p = crate::camera::project(&c, &intr, &goals[0].target).unwrap();
        assert!(p.screen.x.abs() < 1e-3);
        assert!(p.screen.y > 0.1);
    }
}
