//! Drone state, camera frame conventions and pinhole projection.
//!
//! At yaw 0 the camera looks along world `+y` with `x_c = +x` to its right
//! (the "east" axis) and `z_c = +z` up. Screen x follows `x_c`, screen y
//! follows `z_c`, both normalized to `[-1, 1]` at the frustum edges.

use nalgebra::{Rotation3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Vec3, WORLD_UP};

pub type Screen = Vector2<f64>;

/// Position plus roll/pitch/yaw of the airframe and the gimbal tilt. The
/// camera sits at the drone position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneConfig {
    pub position: Vec3,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub tilt: f64,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl DroneConfig {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            tilt: 0.0,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
        }
    }

    pub fn looking(position: Vec3, yaw: f64, tilt: f64) -> Self {
        Self {
            yaw,
            tilt,
            ..Self::at(position)
        }
    }

    pub fn frame(&self) -> CameraFrame {
        CameraFrame::from_angles(self.yaw, self.tilt + self.pitch, self.roll)
    }

    pub fn has_feasible_orientation(&self, tilt_range: (f64, f64)) -> bool {
        self.roll == 0.0 && self.pitch == 0.0 && self.tilt >= tilt_range.0 && self.tilt <= tilt_range.1
    }
}

/// Right-handed camera triad: `x` east (screen right), `y` forward, `z` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
}

impl CameraFrame {
    /// `Rz(yaw) * Rx(tilt) * Ry(roll)` applied to the world axes.
    pub fn from_angles(yaw: f64, tilt: f64, roll: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw)
            * Rotation3::from_axis_angle(&Vec3::x_axis(), tilt)
            * Rotation3::from_axis_angle(&Vec3::y_axis(), roll);
        Self::from_rotation(&r)
    }

    pub fn from_rotation(r: &Rotation3<f64>) -> Self {
        let m = r.matrix();
        Self {
            x: m.column(0).into(),
            y: m.column(1).into(),
            z: m.column(2).into(),
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_basis_unchecked(&[self.x, self.y, self.z])
    }

    /// Roll about the optical axis; zero iff `x` is horizontal (with `z`
    /// pointing upwards).
    pub fn roll(&self) -> f64 {
        (-self.x.dot(&WORLD_UP)).atan2(self.z.dot(&WORLD_UP))
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.x.dot(&WORLD_UP).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Horizontal field of view in radians.
    pub hfov: f64,
    /// Width over height.
    pub aspect: f64,
}

impl Default for CameraIntrinsics {
    /// 92 degree diagonal at 16:9.
    fn default() -> Self {
        Self::from_diagonal(92f64.to_radians(), 16.0 / 9.0)
    }
}

impl CameraIntrinsics {
    pub fn from_diagonal(dfov: f64, aspect: f64) -> Self {
        let tan_d = (dfov / 2.0).tan();
        let tan_h = tan_d * aspect / (aspect * aspect + 1.0).sqrt();
        Self {
            hfov: 2.0 * tan_h.atan(),
            aspect,
        }
    }

    pub fn tan_half_h(&self) -> f64 {
        (self.hfov / 2.0).tan()
    }

    pub fn tan_half_v(&self) -> f64 {
        self.tan_half_h() / self.aspect
    }
}

/// Screen position of a world point plus whether it sits behind the camera.
/// Behind-camera points are projected through the mirrored depth so that
/// error terms stay finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub screen: Screen,
    pub behind: bool,
}

pub fn project_with_frame(
    position: &Vec3,
    frame: &CameraFrame,
    intr: &CameraIntrinsics,
    p: &Vec3,
) -> Result<Projection> {
    let d = p - position;
    if d.norm() < 1e-12 {
        return Err(Error::AtCameraOrigin);
    }
    let depth = d.dot(&frame.y);
    let behind = depth <= 0.0;
    let depth = depth.abs().max(1e-9);
    let sx = d.dot(&frame.x) / depth / intr.tan_half_h();
    let sy = d.dot(&frame.z) / depth / intr.tan_half_v();
    Ok(Projection {
        screen: Screen::new(sx, sy),
        behind,
    })
}

pub fn project(config: &DroneConfig, intr: &CameraIntrinsics, p: &Vec3) -> Result<Projection> {
    project_with_frame(&config.position, &config.frame(), intr, p)
}

/// Unit ray from the camera through a screen point.
pub fn desired_ray_with_frame(frame: &CameraFrame, intr: &CameraIntrinsics, s: &Screen) -> Vec3 {
    (frame.x * (s.x * intr.tan_half_h()) + frame.y + frame.z * (s.y * intr.tan_half_v())).normalize()
}

pub fn desired_ray(config: &DroneConfig, intr: &CameraIntrinsics, s: &Screen) -> Vec3 {
    desired_ray_with_frame(&config.frame(), intr, s)
}

/// View frustum bounded by near and far planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frustum {
    pub position: Vec3,
    pub frame: CameraFrame,
    pub intrinsics: CameraIntrinsics,
    pub near: f64,
    pub far: f64,
}

impl Frustum {
    pub fn new(config: &DroneConfig, intrinsics: CameraIntrinsics, near: f64, far: f64) -> Self {
        Self {
            position: config.position,
            frame: config.frame(),
            intrinsics,
            near,
            far,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.position;
        let depth = d.dot(&self.frame.y);
        if depth <= self.near || depth >= self.far {
            return false;
        }
        let sx = d.dot(&self.frame.x) / depth / self.intrinsics.tan_half_h();
        let sy = d.dot(&self.frame.z) / depth / self.intrinsics.tan_half_v();
        sx.abs() <= 1.0 && sy.abs() <= 1.0
    }

    /// True when any point of the ball lies in the frustum. Conservative on
    /// the corners: uses the planes inflated by the radius.
    pub fn touches_sphere(&self, c: &Vec3, radius: f64) -> bool {
        let d = c - self.position;
        let depth = d.dot(&self.frame.y);
        if depth <= self.near - radius || depth >= self.far + radius {
            return false;
        }
        let th = self.intrinsics.tan_half_h();
        let tv = self.intrinsics.tan_half_v();
        let side = |lat: f64, t: f64| {
            // Signed distance to each side plane through the apex.
            let n = (1.0 + t * t).sqrt();
            (lat.abs() - t * depth) / n
        };
        side(d.dot(&self.frame.x), th) <= radius && side(d.dot(&self.frame.z), tv) <= radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_fov_from_diagonal() {
        let i = CameraIntrinsics::default();
        let diag = (i.tan_half_h().powi(2) + i.tan_half_v().powi(2)).sqrt();
        assert_relative_eq!(diag, 46f64.to_radians().tan(), epsilon = 1e-12);
        assert_relative_eq!(i.aspect, 16.0 / 9.0);
    }

    #[test]
    fn optical_center_and_edges() {
        let i = CameraIntrinsics::default();
        let c = DroneConfig::at(Vec3::zeros());
        let p = project(&c, &i, &Vec3::new(0.0, 5.0, 0.0)).unwrap();
        assert_relative_eq!(p.screen, Screen::zeros(), epsilon = 1e-15);
        let edge = Vec3::new(5.0 * i.tan_half_h(), 5.0, 0.0);
        let p = project(&c, &i, &edge).unwrap();
        assert_relative_eq!(p.screen.x, 1.0, epsilon = 1e-12);
        assert!(!p.behind);
        assert!(project(&c, &i, &Vec3::new(0.0, -1.0, 0.0)).unwrap().behind);
        assert!(project(&c, &i, &Vec3::zeros()).is_err());
    }

    #[test]
    fn frame_right_handed() {
        let f = CameraFrame::from_angles(0.7, -0.3, 0.2);
        assert_relative_eq!(f.x.cross(&f.y), f.z, epsilon = 1e-12);
        assert_relative_eq!(f.roll(), 0.2, epsilon = 1e-12);
        let f = CameraFrame::from_angles(0.7, -0.3, 0.0);
        assert!(f.is_feasible(1e-15));
    }

    #[test]
    fn ray_roundtrip() {
        let i = CameraIntrinsics::default();
        let c = DroneConfig::looking(Vec3::new(1.0, 2.0, 3.0), 0.4, 0.2);
        for s in [Screen::new(0.0, 0.0), Screen::new(0.5, -0.3), Screen::new(-0.9, 0.8)] {
            let ray = desired_ray(&c, &i, &s);
            let p = project(&c, &i, &(c.position + ray * 3.7)).unwrap();
            assert_relative_eq!(p.screen, s, epsilon = 1e-12);
        }
    }
}
