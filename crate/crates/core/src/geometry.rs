//! Small 3D geometry toolkit shared by every other module: shapes, ray
//! intersection, directed angles and plane projections.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// World up axis. The whole crate works in a z-up frame.
pub const WORLD_UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// Removes the component of `v` along the unit normal `n`.
pub fn project_on_plane(v: &Vec3, n: &Vec3) -> Vec3 {
    v - n * v.dot(n)
}

/// Signed angle from `from` to `to`, measured counter-clockwise around the
/// unit axis `axis`. Both vectors are first projected onto the plane normal
/// to `axis`.
pub fn directed_angle(axis: &Vec3, from: &Vec3, to: &Vec3) -> f64 {
    let a = project_on_plane(from, axis);
    let b = project_on_plane(to, axis);
    let cross = a.cross(&b).dot(axis);
    let dot = a.dot(&b);
    cross.atan2(dot)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Any unit vector perpendicular to `v` (which must be non-zero).
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 * v.norm() {
        Vec3::x()
    } else {
        Vec3::y()
    };
    v.cross(&helper).normalize()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (p - self.center).norm_squared() < self.radius * self.radius
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.center).norm() - self.radius
    }

    /// Parameter interval `[t0, t1]` where `origin + t * dir` (unit `dir`)
    /// is inside the sphere, if any.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        Some((-b - s, -b + s))
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self {
            min: min.inf(&max),
            max: min.sup(&max),
        }
    }

    pub fn from_center(center: Vec3, half: Vec3) -> Self {
        Self::new(center - half, center + half)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_strict(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    /// Closed boxes share at least one point.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn inflate(&self, margin: f64) -> Self {
        let m = Vec3::repeat(margin);
        Self::new(self.min - m, self.max + m)
    }

    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        p.sup(&self.min).inf(&self.max)
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &Vec3) -> f64 {
        (p - self.closest_point(p)).norm()
    }

    /// Distance from an interior point to the closest face; 0 outside.
    pub fn interior_clearance(&self, p: &Vec3) -> f64 {
        if !self.contains(p) {
            return 0.0;
        }
        (0..3)
            .map(|i| (p[i] - self.min[i]).min(self.max[i] - p[i]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Slab test. Returns the parameter interval of the line
    /// `origin + t * dir` inside the box.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut a = (self.min[i] - origin[i]) * inv;
            let mut b = (self.max[i] - origin[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// True when the closed segment `a..b` touches the box.
    pub fn intersects_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        let len = d.norm();
        if len < 1e-12 {
            return self.contains(a);
        }
        match self.ray_interval(a, &(d / len)) {
            Some((t0, t1)) => t1 >= 0.0 && t0 <= len,
            None => false,
        }
    }
}

/// A moving or static obstacle volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    Sphere(Sphere),
    Box(Aabb),
}

impl Obstacle {
    pub fn inflate(&self, margin: f64) -> Self {
        match self {
            Obstacle::Sphere(s) => Obstacle::Sphere(Sphere::new(s.center, s.radius + margin)),
            Obstacle::Box(b) => Obstacle::Box(b.inflate(margin)),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match self {
            Obstacle::Sphere(s) => s.contains(p),
            Obstacle::Box(b) => b.contains_strict(p),
        }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            Obstacle::Sphere(s) => s.signed_distance(p).max(0.0),
            Obstacle::Box(b) => b.distance(p),
        }
    }

    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        match self {
            Obstacle::Sphere(s) => s.ray_interval(origin, dir),
            Obstacle::Box(b) => b.ray_interval(origin, dir),
        }
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        match self {
            Obstacle::Sphere(s) => Obstacle::Sphere(Sphere::new(s.center + offset, s.radius)),
            Obstacle::Box(b) => Obstacle::Box(Aabb::new(b.min + offset, b.max + offset)),
        }
    }

    pub fn center(&self) -> Vec3 {
        match self {
            Obstacle::Sphere(s) => s.center,
            Obstacle::Box(b) => b.center(),
        }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Obstacle::Sphere(s) => Aabb::from_center(s.center, Vec3::repeat(s.radius)),
            Obstacle::Box(b) => *b,
        }
    }
}

/// A flat disk (a roadmap portal) given by center, unit normal and radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Vec3,
    pub normal: Vec3,
    pub radius: f64,
}

impl Disk {
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        let rel = p - self.center;
        let in_plane = project_on_plane(&rel, &self.normal);
        let n = in_plane.norm();
        if n <= self.radius {
            self.center + in_plane
        } else {
            self.center + in_plane * (self.radius / n)
        }
    }

    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        (p - self.closest_point(p)).norm()
    }

    /// Distance between the disk and a box, by alternating projections
    /// between the two convex sets.
    pub fn distance_to_box(&self, b: &Aabb) -> f64 {
        let mut on_box = b.closest_point(&self.center);
        let mut on_disk = self.closest_point(&on_box);
        for _ in 0..64 {
            let nb = b.closest_point(&on_disk);
            let nd = self.closest_point(&nb);
            let moved = (nb - on_box).norm() + (nd - on_disk).norm();
            on_box = nb;
            on_disk = nd;
            if moved < 1e-10 {
                break;
            }
        }
        (on_disk - on_box).norm()
    }

    pub fn intersects(&self, obstacle: &Obstacle) -> bool {
        match obstacle {
            Obstacle::Sphere(s) => self.distance_to_point(&s.center) < s.radius,
            Obstacle::Box(b) => self.distance_to_box(b) < 1e-9,
        }
    }
}
