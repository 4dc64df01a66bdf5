//! Drone toric space: a safe surface of revolution around one or two targets.
//!
//! For two targets the base surface is the spindle torus of all points that
//! see the segment AB under the angle alpha. Near each target the torus is
//! replaced by a cap (sphere or plane) tangent both to the torus and to the
//! safety sphere of radius `d_S`, giving a composite C1 surface.
//!
//! Everything is computed in a profile half-plane `(x, rho)`: `x` along the
//! axis from A towards B (or along the facing direction of a single target),
//! `rho >= 0` the distance to that axis. The surface is the profile curve
//! revolved around the axis.

use nalgebra::{Rotation3, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::geometry::{any_perpendicular, Vec3, WORLD_UP};

type P2 = Vector2<f64>;

/// Relative tolerance under which a surface snaps to the plane-cap case.
pub const TYPE3_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub position: Vec3,
    /// Roll, pitch, yaw in radians.
    pub orientation: Vec3,
    /// Bounding radius used for collisions.
    pub radius: f64,
}

impl Target {
    pub fn new(position: Vec3) -> Self {
        Self {
            position,
            orientation: Vec3::zeros(),
            radius: 0.3,
        }
    }

    pub fn with_yaw(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            orientation: Vec3::new(0.0, 0.0, yaw),
            radius: 0.3,
        }
    }

    /// Unit vector the target is facing (body x axis).
    pub fn facing(&self) -> Vec3 {
        let o = self.orientation;
        Rotation3::from_euler_angles(o.x, o.y, o.z) * Vec3::x()
    }
}

/// A point of the toric chart. For single-target surfaces `alpha` is a
/// distance in meters rather than an angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToricCoord {
    pub alpha: f64,
    pub phi: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurfaceType {
    Type1,
    Type2,
    Type3,
    SingleSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cap {
    Sphere { center: Vec3, radius: f64 },
    Plane { point: Vec3, normal: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CameraRegion {
    ExternalB,
    ExternalApexB,
    Apex,
    ExternalApexA,
    ExternalA,
}

impl CameraRegion {
    pub const ALL: [CameraRegion; 5] = [
        CameraRegion::ExternalB,
        CameraRegion::ExternalApexB,
        CameraRegion::Apex,
        CameraRegion::ExternalApexA,
        CameraRegion::ExternalA,
    ];

    /// Interval in `|theta|`, closed on the left and open on the right
    /// (except the last one, which includes 1).
    pub fn interval(self) -> (f64, f64) {
        match self {
            CameraRegion::ExternalB => (0.0, 0.25),
            CameraRegion::ExternalApexB => (0.25, 0.375),
            CameraRegion::Apex => (0.375, 0.625),
            CameraRegion::ExternalApexA => (0.625, 0.75),
            CameraRegion::ExternalA => (0.75, 1.0),
        }
    }

    pub fn is_external(self) -> bool {
        matches!(self, CameraRegion::ExternalA | CameraRegion::ExternalB)
    }
}

/// Region of the chart for a given theta. The external regions are a
/// quarter wide each, the apex is a quarter wide centered on `|theta| = 0.5`
/// and the two external-apex bands fill the gaps.
pub fn camera_region(theta: f64) -> CameraRegion {
    let t = theta.abs();
    CameraRegion::ALL
        .into_iter()
        .find(|r| t < r.interval().1)
        .unwrap_or(CameraRegion::ExternalA)
}

/// Radius of the circle through A and B on which AB subtends `alpha`.
pub fn toric_radius(alpha: f64, ab: f64) -> f64 {
    ab / (2.0 * alpha.sin())
}

pub fn classify_surface(r: f64, ab: f64, d_s: f64, tol: f64) -> SurfaceType {
    let threshold = r - ab / 2.0;
    if (d_s - threshold).abs() <= tol {
        SurfaceType::Type3
    } else if d_s < threshold {
        SurfaceType::Type1
    } else {
        SurfaceType::Type2
    }
}

/// Angle subtended by segment `ab` as seen from `p`.
pub fn subtended_angle(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let va = a - p;
    let vb = b - p;
    let c = va.dot(&vb) / (va.norm() * vb.norm());
    c.clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProfileSegment {
    /// Circular arc swept linearly from angle `a0` to `a1`.
    Arc { center: P2, radius: f64, a0: f64, a1: f64 },
    Line { p0: P2, p1: P2 },
}

impl ProfileSegment {
    pub fn length(&self) -> f64 {
        match self {
            ProfileSegment::Arc { radius, a0, a1, .. } => radius * (a1 - a0).abs(),
            ProfileSegment::Line { p0, p1 } => (p1 - p0).norm(),
        }
    }

    /// Point and unit tangent at arc length `s` from the segment start.
    fn eval(&self, s: f64) -> (P2, P2) {
        match *self {
            ProfileSegment::Arc { center, radius, a0, a1 } => {
                let dir = (a1 - a0).signum();
                let a = a0 + dir * s / radius;
                let (sn, cs) = a.sin_cos();
                (center + P2::new(cs, sn) * radius, P2::new(-sn, cs) * dir)
            }
            ProfileSegment::Line { p0, p1 } => {
                let t = (p1 - p0).normalize();
                (p0 + t * s, t)
            }
        }
    }
}

/// The composite profile curve from the B-side axis point (`theta = 0`) to
/// the A-side axis point (`|theta| = 1`), parametrized by arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub segments: Vec<ProfileSegment>,
    starts: Vec<f64>,
    length: f64,
}

impl Profile {
    fn new(segments: Vec<ProfileSegment>) -> Self {
        let mut starts = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for seg in &segments {
            starts.push(acc);
            acc += seg.length();
        }
        Self {
            segments,
            starts,
            length: acc,
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Arc-length positions of the seams between segments.
    pub fn seams(&self) -> &[f64] {
        &self.starts[1..]
    }

    pub fn eval(&self, s: f64) -> (P2, P2) {
        let s = s.clamp(0.0, self.length);
        let i = self.starts.iter().rposition(|&st| st <= s).unwrap_or_default();
        self.segments[i].eval(s - self.starts[i])
    }
}

/// Orthonormal frame of the surface of revolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: Vec3,
    pub ex: Vec3,
    pub ey: Vec3,
    pub ez: Vec3,
}

impl LocalFrame {
    fn along(origin: Vec3, axis: Vec3) -> Self {
        let ex = axis.normalize();
        let mut ey = WORLD_UP.cross(&ex);
        if ey.norm() < 1e-9 {
            ey = any_perpendicular(&ex);
        }
        let ey = ey.normalize();
        let ez = ex.cross(&ey);
        Self { origin, ex, ey, ez }
    }

    fn to_world(self, x: f64, rho: f64, beta: f64) -> Vec3 {
        let (sb, cb) = beta.sin_cos();
        self.origin + self.ex * x + (self.ey * cb + self.ez * sb) * rho
    }

    /// Returns `(x, rho, beta)`.
    fn to_local(self, p: &Vec3) -> (f64, f64, f64) {
        let rel = p - self.origin;
        let x = rel.dot(&self.ex);
        let y = rel.dot(&self.ey);
        let z = rel.dot(&self.ez);
        (x, y.hypot(z), z.atan2(y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtsSurface {
    pub target_a: Target,
    pub target_b: Option<Target>,
    pub alpha: f64,
    pub safety: f64,
    pub kind: SurfaceType,
    pub cap_a: Cap,
    pub cap_b: Option<Cap>,
    /// Radius of the generating circle (sphere radius for one target).
    pub toric_radius: f64,
    /// True when both caps collapsed into one sphere around the midpoint.
    pub merged: bool,
    pub frame: LocalFrame,
    pub profile: Profile,
    /// Projection center on the axis, in profile coordinates.
    center_x: f64,
}

fn mirror_arc(seg: ProfileSegment, axis_x: f64) -> ProfileSegment {
    match seg {
        ProfileSegment::Arc { center, radius, a0, a1 } => ProfileSegment::Arc {
            center: P2::new(2.0 * axis_x - center.x, center.y),
            radius,
            a0: PI - a1,
            a1: PI - a0,
        },
        ProfileSegment::Line { p0, p1 } => ProfileSegment::Line {
            p0: P2::new(2.0 * axis_x - p1.x, p1.y),
            p1: P2::new(2.0 * axis_x - p0.x, p0.y),
        },
    }
}

/// Cap geometry on the A side, in profile coordinates. Returns the cap
/// segment (oriented from the torus seam towards the A axis point), the
/// angle of the seam on the generating circle, and the cap descriptor.
enum ACap {
    Sphere { seg: ProfileSegment, seam_angle: f64, center_x: f64, radius: f64 },
    Plane { seg: ProfileSegment, seam_angle: f64, x: f64 },
}

fn a_cap(kind: SurfaceType, r: f64, u: f64, c: f64, d: f64) -> ACap {
    let o = P2::new(u, c);
    match kind {
        SurfaceType::Type1 => {
            // Sphere outside the torus, externally tangent to it and to the
            // safety sphere at (-d, 0). Its radius is |x_A| - d.
            let delta = r - d;
            let xa = -(r * r - delta * delta) / (2.0 * (delta - u));
            let radius = -xa - d;
            let ca = P2::new(xa, 0.0);
            let dir = (o - ca).normalize();
            let t = ca + dir * radius;
            ACap::Sphere {
                seg: ProfileSegment::Arc {
                    center: ca,
                    radius,
                    a0: t.y.atan2(t.x - xa),
                    a1: 0.0,
                },
                seam_angle: (t - o).y.atan2((t - o).x) + 2.0 * PI,
                center_x: xa,
                radius,
            }
        }
        SurfaceType::Type2 => {
            // Sphere enclosing the safety sphere, the generating circle being
            // internally tangent to it. The closed form follows from
            // |O - C_A| = R - r and R = x_A + d.
            let e = d - r;
            let xa = (r * r - e * e) / (2.0 * (e + u));
            let radius = xa + d;
            let ca = P2::new(xa, 0.0);
            let dir = (o - ca).normalize();
            let t = o + dir * r;
            ACap::Sphere {
                seg: ProfileSegment::Arc {
                    center: ca,
                    radius,
                    a0: t.y.atan2(t.x - xa),
                    a1: PI,
                },
                seam_angle: dir.y.atan2(dir.x),
                center_x: xa,
                radius,
            }
        }
        _ => {
            // Plane through the leftmost point of the generating circle.
            let x = u - r;
            ACap::Plane {
                seg: ProfileSegment::Line {
                    p0: P2::new(x, c),
                    p1: P2::new(x, 0.0),
                },
                seam_angle: PI,
                x,
            }
        }
    }
}

pub fn build_surface(a: &Target, b: Option<&Target>, alpha: f64, safety: f64) -> Result<DtsSurface> {
    // Written to reject NaN as well.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(safety > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha={alpha}, d_S={safety}")));
    }
    let Some(b) = b else {
        return Ok(single_target_surface(a, alpha, safety));
    };
    if !(alpha > 0.0 && alpha < PI) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside (0, pi)")));
    }
    let axis = b.position - a.position;
    let ab = axis.norm();
    if ab < 1e-9 {
        return Err(Error::CoincidentTargets);
    }
    let frame = LocalFrame::along(a.position, axis);
    let u = ab / 2.0;
    let r = toric_radius(alpha, ab);
    let c = (r * r - u * u).max(0.0).sqrt() * if alpha < FRAC_PI_2 { 1.0 } else { -1.0 };
    let kind = classify_surface(r, ab, safety, TYPE3_REL_TOL * r);

    // Separate caps need the seam to stay on the upper half of the
    // generating circle, left of the midpoint. Past that, both caps fuse into
    // one sphere around the midpoint, which is where the two-cap
    // construction converges at the threshold.
    let merged = c <= 0.0 || (kind == SurfaceType::Type2 && safety >= r - u + c);
    let to_world_x = |x: f64| a.position + frame.ex * x;

    if merged {
        let radius = u + safety;
        let seg = ProfileSegment::Arc {
            center: P2::new(u, 0.0),
            radius,
            a0: 0.0,
            a1: PI,
        };
        let cap = Cap::Sphere {
            center: to_world_x(u),
            radius,
        };
        return Ok(DtsSurface {
            target_a: *a,
            target_b: Some(*b),
            alpha,
            safety,
            kind,
            cap_a: cap,
            cap_b: Some(cap),
            toric_radius: r,
            merged: true,
            frame,
            profile: Profile::new(vec![seg]),
            center_x: u,
        });
    }

    let cap = a_cap(kind, r, u, c, safety);
    let (a_seg, seam, cap_a, cap_b) = match cap {
        ACap::Sphere { seg, seam_angle, center_x, radius } => (
            seg,
            seam_angle,
            Cap::Sphere { center: to_world_x(center_x), radius },
            Cap::Sphere { center: to_world_x(ab - center_x), radius },
        ),
        ACap::Plane { seg, seam_angle, x } => (
            seg,
            seam_angle,
            Cap::Plane { point: to_world_x(x), normal: -frame.ex },
            Cap::Plane { point: to_world_x(ab - x), normal: frame.ex },
        ),
    };
    let torus = ProfileSegment::Arc {
        center: P2::new(u, c),
        radius: r,
        a0: PI - seam,
        a1: seam,
    };
    let b_seg = mirror_arc(a_seg, u);
    Ok(DtsSurface {
        target_a: *a,
        target_b: Some(*b),
        alpha,
        safety,
        kind,
        cap_a,
        cap_b: Some(cap_b),
        toric_radius: r,
        merged: false,
        frame,
        profile: Profile::new(vec![b_seg, torus, a_seg]),
        center_x: u,
    })
}

fn single_target_surface(a: &Target, alpha: f64, safety: f64) -> DtsSurface {
    let radius = alpha.max(safety);
    let frame = LocalFrame::along(a.position, a.facing());
    let seg = ProfileSegment::Arc {
        center: P2::zeros(),
        radius,
        a0: 0.0,
        a1: PI,
    };
    DtsSurface {
        target_a: *a,
        target_b: None,
        alpha,
        safety,
        kind: SurfaceType::SingleSphere,
        cap_a: Cap::Sphere {
            center: a.position,
            radius,
        },
        cap_b: None,
        toric_radius: radius,
        merged: false,
        frame,
        profile: Profile::new(vec![seg]),
        center_x: 0.0,
    }
}

/// Azimuth around the axis for a chart point. Positive theta covers the
/// `+e_y` half, negative theta the other half, so that `(phi, theta)` and
/// `(phi, -theta)` meet at `phi = +-1`.
fn azimuth(phi: f64, theta: f64) -> f64 {
    if theta >= 0.0 {
        phi * FRAC_PI_2
    } else {
        PI - phi * FRAC_PI_2
    }
}

impl DtsSurface {
    pub fn targets(&self) -> Vec<Target> {
        let mut v = vec![self.target_a];
        v.extend(self.target_b);
        v
    }

    /// World position of a chart point.
    pub fn dts_to_world(&self, phi: f64, theta: f64) -> Vec3 {
        let phi = phi.clamp(-1.0, 1.0);
        let theta = theta.clamp(-1.0, 1.0);
        let (p, _) = self.profile.eval(theta.abs() * self.profile.length());
        self.frame.to_world(p.x, p.y, azimuth(phi, theta))
    }

    /// Partial derivatives of the embedding with respect to phi and theta.
    pub fn tangents(&self, phi: f64, theta: f64) -> (Vec3, Vec3) {
        let len = self.profile.length();
        let (p, t) = self.profile.eval(theta.abs() * len);
        let beta = azimuth(phi, theta);
        let (sb, cb) = beta.sin_cos();
        let radial = self.frame.ey * cb + self.frame.ez * sb;
        let around = self.frame.ez * cb - self.frame.ey * sb;
        let dbeta = if theta >= 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        let d_phi = around * (p.y * dbeta);
        let d_theta = (self.frame.ex * t.x + radial * t.y) * (len * sign);
        (d_phi, d_theta)
    }

    pub fn toric(&self, phi: f64, theta: f64) -> ToricCoord {
        ToricCoord {
            alpha: self.alpha,
            phi,
            theta,
        }
    }

    /// Chart coordinates of the radial projection of `p` onto the surface,
    /// seen from the projection center on the axis.
    pub fn world_to_dts(&self, p: &Vec3) -> Result<(f64, f64)> {
        let (x, rho, beta) = self.frame.to_local(p);
        let dx = x - self.center_x;
        if dx.hypot(rho) < 1e-12 {
            return Err(Error::ProjectionCenter);
        }
        let target = rho.atan2(dx);
        // The profile is star-shaped from the center, so its polar angle is
        // monotone in arc length.
        let polar = |s: f64| {
            let (q, _) = self.profile.eval(s);
            q.y.atan2(q.x - self.center_x)
        };
        let (mut lo, mut hi) = (0.0, self.profile.length());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if polar(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 * self.profile.length() {
                break;
            }
        }
        let t_abs = (0.5 * (lo + hi) / self.profile.length()).clamp(0.0, 1.0);
        let beta = if rho < 1e-12 { 0.0 } else { beta };
        let (theta, phi) = if beta.cos() >= 0.0 {
            (t_abs, beta / FRAC_PI_2)
        } else {
            let b = if beta < 0.0 { beta + 2.0 * PI } else { beta };
            (-t_abs, (PI - b) / FRAC_PI_2)
        };
        Ok((phi.clamp(-1.0, 1.0), theta))
    }

    /// Radial projection of `p` onto the surface.
    pub fn project(&self, p: &Vec3) -> Result<Vec3> {
        let (phi, theta) = self.world_to_dts(p)?;
        Ok(self.dts_to_world(phi, theta))
    }

    /// Minimum distance from a world point to any target center.
    pub fn target_clearance(&self, p: &Vec3) -> f64 {
        self.targets()
            .iter()
            .map(|t| (p - t.position).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Seam positions expressed in `|theta|`.
    pub fn seam_thetas(&self) -> Vec<f64> {
        let len = self.profile.length();
        self.profile.seams().iter().map(|s| s / len).collect()
    }

    /// Profile coordinates `(x, rho)` of a chart point.
    pub fn profile_point(&self, theta: f64) -> (f64, f64) {
        let (p, _) = self.profile.eval(theta.abs() * self.profile.length());
        (p.x, p.y)
    }

    pub fn distance_ab(&self) -> Option<f64> {
        self.target_b
            .map(|b| (b.position - self.target_a.position).norm())
    }
}
