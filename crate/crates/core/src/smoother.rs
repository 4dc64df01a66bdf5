//! C4 quintic interpolation of a node path and jerk minimization with the
//! interior knots free to slide inside their portal disks.
//!
//! Every piece is parameterized on `t` in `[0, 1]`. The spline coefficients
//! are a linear function of the knots, so the jerk objective is a fixed
//! quadratic form `H` in the knot coordinates, shared by the three axes.
//! Restricting each interior knot to its portal plane and disk leaves a
//! convex quadratic program with one disk constraint per knot, solved with a
//! log-barrier Newton method.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::geometry::{any_perpendicular, Disk, Vec3};

/// Quadratic form of the jerk objective in (d, e, f); equals the integral
/// of the squared third derivative divided by 12.
const JERK_FORM: [[f64; 3]; 3] = [[3.0, 6.0, 10.0], [6.0, 16.0, 30.0], [10.0, 30.0, 60.0]];

pub const MAX_ITERATIONS: usize = 200;
const DUPLICATE_TOL: f64 = 1e-9;

/// Piecewise quintic trajectory. `coeffs[i][axis]` holds `a..f` of piece `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpline {
    pub coeffs: Vec<[[f64; 6]; 3]>,
    pub knots: Vec<Vec3>,
    /// Disk constraint per knot; endpoints have radius 0.
    pub portals: Vec<Disk>,
}

fn falling(j: usize, r: usize) -> f64 {
    ((j - r + 1)..=j).map(|x| x as f64).product()
}

fn poly(c: &[f64; 6], t: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for j in (order..6).rev() {
        acc = acc * t + c[j] * falling(j, order);
    }
    acc
}

impl TrajectorySpline {
    pub fn piece_count(&self) -> usize {
        self.coeffs.len()
    }

    /// Derivative of `order` of piece `i` at local `t`.
    pub fn piece_eval(&self, i: usize, t: f64, order: usize) -> Vec3 {
        let c = &self.coeffs[i];
        Vec3::new(poly(&c[0], t, order), poly(&c[1], t, order), poly(&c[2], t, order))
    }

    /// Evaluate at global parameter `s` in `[0, pieces]`.
    pub fn eval(&self, s: f64, order: usize) -> Vec3 {
        let (i, t) = self.locate(s);
        self.piece_eval(i, t, order)
    }

    pub fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.piece_count();
        let s = s.clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        (i, s - i as f64)
    }

    pub fn start(&self) -> Vec3 {
        self.piece_eval(0, 0.0, 0)
    }

    pub fn end(&self) -> Vec3 {
        self.piece_eval(self.piece_count() - 1, 1.0, 0)
    }

    /// Rows of the export table: one line per piece and axis,
    /// `piece axis a b c d e f`.
    pub fn export_rows(&self) -> Vec<(usize, usize, [f64; 6])> {
        let mut rows = Vec::with_capacity(self.coeffs.len() * 3);
        for (i, c) in self.coeffs.iter().enumerate() {
            for (axis, row) in c.iter().enumerate() {
                rows.push((i, axis, *row));
            }
        }
        rows
    }
}

/// Knot-to-coefficient map for `n` keypoints: a `6(n-1) x n` matrix giving
/// every coefficient of one axis from that axis' knot coordinates.
fn coefficient_map(n: usize) -> DMatrix<f64> {
    let pieces = n - 1;
    let size = 6 * pieces;
    let mut m = DMatrix::<f64>::zeros(size, size);
    let mut b = DMatrix::<f64>::zeros(size, n);
    let mut row = 0;
    for i in 0..pieces {
        m[(row, 6 * i)] = 1.0;
        b[(row, i)] = 1.0;
        row += 1;
        for j in 0..6 {
            m[(row, 6 * i + j)] = 1.0;
        }
        b[(row, i + 1)] = 1.0;
        row += 1;
    }
    for i in 0..pieces.saturating_sub(1) {
        for r in 1..=4 {
            for j in r..6 {
                m[(row, 6 * i + j)] = falling(j, r);
            }
            m[(row, 6 * (i + 1) + r)] = -falling(r, r);
            row += 1;
        }
    }
    for r in 1..=2 {
        m[(row, r)] = falling(r, r);
        row += 1;
    }
    let last = 6 * (pieces - 1);
    for r in 1..=2 {
        for j in r..6 {
            m[(row, last + j)] = falling(j, r);
        }
        row += 1;
    }
    debug_assert_eq!(row, size);
    m.lu().solve(&b).expect("the C4 interpolation system is nonsingular")
}

/// The jerk form `H` (n x n) with `objective = sum over axes of k^T H k`.
fn jerk_matrix(a: &DMatrix<f64>) -> DMatrix<f64> {
    let pieces = a.nrows() / 6;
    let mut qa = DMatrix::<f64>::zeros(a.nrows(), a.ncols());
    for i in 0..pieces {
        for r in 0..3 {
            for c in 0..3 {
                let w = JERK_FORM[r][c];
                for col in 0..a.ncols() {
                    qa[(6 * i + 3 + r, col)] += w * a[(6 * i + 3 + c, col)];
                }
            }
        }
    }
    a.transpose() * qa
}

fn collapse(keypoints: &[Vec3]) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::with_capacity(keypoints.len());
    for k in keypoints {
        if out.last().is_none_or(|l| (k - l).norm() > DUPLICATE_TOL) {
            out.push(*k);
        }
    }
    out
}

fn spline_from_map(a: &DMatrix<f64>, knots: &[Vec3], portals: Vec<Disk>) -> TrajectorySpline {
    let n = knots.len();
    let pieces = n - 1;
    let mut coeffs = vec![[[0.0; 6]; 3]; pieces];
    for axis in 0..3 {
        let k = DVector::from_iterator(n, knots.iter().map(|p| p[axis]));
        let c = a * k;
        for i in 0..pieces {
            for j in 0..6 {
                coeffs[i][axis][j] = c[6 * i + j];
            }
        }
    }
    TrajectorySpline {
        coeffs,
        knots: knots.to_vec(),
        portals,
    }
}

fn point_disk(p: Vec3) -> Disk {
    Disk {
        center: p,
        normal: Vec3::x(),
        radius: 0.0,
    }
}

/// Interpolating C4 quintic spline with zero velocity and acceleration at
/// both ends. Consecutive duplicate keypoints are merged first; a single
/// remaining point gives one constant piece.
pub fn fit_c4_spline(keypoints: &[Vec3]) -> TrajectorySpline {
    assert!(!keypoints.is_empty(), "no keypoints");
    let knots = collapse(keypoints);
    if knots.len() == 1 {
        let p = knots[0];
        let mut c = [[0.0; 6]; 3];
        for axis in 0..3 {
            c[axis][0] = p[axis];
        }
        return TrajectorySpline {
            coeffs: vec![c],
            knots: vec![p, p],
            portals: vec![point_disk(p), point_disk(p)],
        };
    }
    let portals = knots.iter().map(|&p| point_disk(p)).collect();
    spline_from_map(&coefficient_map(knots.len()), &knots, portals)
}

/// Jerk objective: the simplified quadratic form summed over pieces and axes.
pub fn jerk_objective(spline: &TrajectorySpline) -> f64 {
    spline
        .coeffs
        .iter()
        .flat_map(|c| c.iter())
        .map(|c| jerk_form(c[3], c[4], c[5]))
        .sum()
}

pub fn jerk_form(d: f64, e: f64, f: f64) -> f64 {
    3.0 * d * d + 12.0 * d * e + 20.0 * d * f + 16.0 * e * e + 60.0 * e * f + 60.0 * f * f
}

/// Largest mismatch of the derivative of `order` across interior knots,
/// relative to the derivative magnitude when that exceeds 1.
pub fn continuity_residual(spline: &TrajectorySpline, order: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..spline.piece_count().saturating_sub(1) {
        let l = spline.piece_eval(i, 1.0, order);
        let r = spline.piece_eval(i + 1, 0.0, order);
        let scale = l.amax().max(r.amax()).max(1.0);
        worst = worst.max((l - r).amax() / scale);
    }
    worst
}

/// Largest interpolation error at the knots.
pub fn interpolation_residual(spline: &TrajectorySpline) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..spline.piece_count() {
        worst = worst
            .max((spline.piece_eval(i, 0.0, 0) - spline.knots[i]).amax())
            .max((spline.piece_eval(i, 1.0, 0) - spline.knots[i + 1]).amax());
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub spline: TrajectorySpline,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stationarity residual of the final iterate with barrier multipliers.
    pub kkt_residual: f64,
}

struct Free {
    knot: usize,
    center: Vec3,
    basis: [Vec3; 2],
    radius: f64,
}

/// Minimize the jerk objective over interior knot positions, each confined
/// to its portal disk. Endpoints stay pinned. Knots outside their disks in
/// the initial spline are first projected onto them.
pub fn optimize_spline(initial: &TrajectorySpline, portals: &[Disk]) -> OptimizeResult {
    let n = initial.knots.len();
    assert_eq!(portals.len(), n, "one portal per knot");
    let initial_objective = jerk_objective(initial);
    let unchanged = |iterations| OptimizeResult {
        spline: initial.clone(),
        initial_objective,
        objective: initial_objective,
        iterations,
        converged: true,
        kkt_residual: 0.0,
    };
    if n < 3 || initial.piece_count() + 1 != n {
        return unchanged(0);
    }

    let mut free = Vec::new();
    let mut knots = initial.knots.clone();
    for i in 1..n - 1 {
        let d = &portals[i];
        // Feasibility restoration: onto the plane, then into the disk.
        knots[i] = d.closest_point(&knots[i]);
        if d.radius > 1e-12 {
            let u = any_perpendicular(&d.normal);
            let v = d.normal.cross(&u).normalize();
            free.push(Free {
                knot: i,
                center: d.center,
                basis: [u, v],
                radius: d.radius,
            });
        } else {
            knots[i] = d.center;
        }
    }
    let a = coefficient_map(n);
    let h = jerk_matrix(&a);
    let restored = spline_from_map(&a, &knots, portals.to_vec());
    let restored_objective = jerk_objective(&restored);
    if free.is_empty() {
        let mut r = unchanged(0);
        if restored.knots != initial.knots {
            r.spline = restored;
            r.objective = restored_objective;
        } else {
            r.spline.portals = portals.to_vec();
        }
        return r;
    }

    let m = free.len();
    // Strictly interior start for the barrier.
    let mut w = DVector::<f64>::zeros(2 * m);
    for (j, f) in free.iter().enumerate() {
        let rel = knots[f.knot] - f.center;
        let mut p = Vector2::new(rel.dot(&f.basis[0]), rel.dot(&f.basis[1]));
        let lim = 0.99 * f.radius;
        if p.norm() > lim {
            p *= lim / p.norm();
        }
        w[2 * j] = p.x;
        w[2 * j + 1] = p.y;
    }
    let place = |w: &DVector<f64>, knots: &mut Vec<Vec3>| {
        for (j, f) in free.iter().enumerate() {
            knots[f.knot] = f.center + f.basis[0] * w[2 * j] + f.basis[1] * w[2 * j + 1];
        }
    };
    let objective = |knots: &[Vec3]| -> f64 {
        let mut total = 0.0;
        for axis in 0..3 {
            let k = DVector::from_iterator(n, knots.iter().map(|p| p[axis]));
            total += k.dot(&(&h * &k));
        }
        total
    };
    // Gradient of the objective with respect to every knot (n x 3).
    let knot_gradient = |knots: &[Vec3]| -> Vec<Vec3> {
        let mut g = vec![Vec3::zeros(); n];
        for axis in 0..3 {
            let k = DVector::from_iterator(n, knots.iter().map(|p| p[axis]));
            let hk = &h * &k;
            for i in 0..n {
                g[i][axis] = 2.0 * hk[i];
            }
        }
        g
    };
    // Hessian in w is constant.
    let mut hess_j = DMatrix::<f64>::zeros(2 * m, 2 * m);
    for (p, fp) in free.iter().enumerate() {
        for (q, fq) in free.iter().enumerate() {
            let hij = 2.0 * h[(fp.knot, fq.knot)];
            if hij == 0.0 {
                continue;
            }
            for x in 0..2 {
                for y in 0..2 {
                    hess_j[(2 * p + x, 2 * q + y)] = hij * fp.basis[x].dot(&fq.basis[y]);
                }
            }
        }
    }
    let slack = |w: &DVector<f64>| -> Vec<f64> {
        free.iter()
            .enumerate()
            .map(|(j, f)| f.radius * f.radius - w[2 * j] * w[2 * j] - w[2 * j + 1] * w[2 * j + 1])
            .collect()
    };
    let grad_w = |knots: &[Vec3]| -> DVector<f64> {
        let g = knot_gradient(knots);
        let mut out = DVector::zeros(2 * m);
        for (j, f) in free.iter().enumerate() {
            out[2 * j] = g[f.knot].dot(&f.basis[0]);
            out[2 * j + 1] = g[f.knot].dot(&f.basis[1]);
        }
        out
    };

    place(&w, &mut knots);
    let scale = objective(&knots).abs().max(restored_objective.abs()).max(1e-9);
    let mut mu = 1e-2 * scale / m as f64;
    let mu_min = 1e-12 * scale.max(1.0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        // Newton steps on J - mu * sum log(slack) at fixed mu.
        let mut inner = 0;
        loop {
            if iterations >= MAX_ITERATIONS {
                break;
            }
            iterations += 1;
            inner += 1;
            let s = slack(&w);
            let mut g = grad_w(&knots);
            let mut hess = hess_j.clone();
            for j in 0..m {
                let wj = Vector2::new(w[2 * j], w[2 * j + 1]);
                // d/dw [-mu log(r^2 - |w|^2)] = 2 mu w / s
                let gj = wj * (2.0 * mu / s[j]);
                g[2 * j] += gj.x;
                g[2 * j + 1] += gj.y;
                let outer = wj * wj.transpose() * (4.0 * mu / (s[j] * s[j]));
                for x in 0..2 {
                    for y in 0..2 {
                        let diag = if x == y { 2.0 * mu / s[j] } else { 0.0 };
                        hess[(2 * j + x, 2 * j + y)] += outer[(x, y)] + diag;
                    }
                }
            }
            let step = match hess.clone().cholesky() {
                Some(c) => -c.solve(&g),
                None => -g.clone() / hess.diagonal().amax().max(1e-12),
            };
            let decrement = -g.dot(&step);
            if decrement.abs() < 1e-14 * scale {
                break;
            }
            let merit = |w: &DVector<f64>, knots: &[Vec3]| -> f64 {
                objective(knots) - mu * slack(w).iter().map(|s| s.ln()).sum::<f64>()
            };
            let f0 = merit(&w, &knots);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &w + &step * t;
                if slack(&cand).iter().all(|&s| s > 0.0) {
                    let mut k2 = knots.clone();
                    place(&cand, &mut k2);
                    if merit(&cand, &k2) <= f0 - 0.25 * t * decrement {
                        w = cand;
                        knots = k2;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted || decrement < 1e-10 * scale || inner > 50 {
                break;
            }
        }
        if mu <= mu_min {
            converged = true;
            break;
        }
        mu = (mu * 0.1).max(mu_min);
    }

    // KKT residual with least-squares multipliers: stationarity
    // grad + 2 lambda w = 0 and complementarity lambda * slack = 0.
    let s = slack(&w);
    let g = grad_w(&knots);
    let mut kkt: f64 = 0.0;
    for j in 0..m {
        let (wx, wy) = (w[2 * j], w[2 * j + 1]);
        let ww = wx * wx + wy * wy;
        let lambda = if ww > 0.0 { (-(g[2 * j] * wx + g[2 * j + 1] * wy) / (2.0 * ww)).max(0.0) } else { 0.0 };
        let rx = g[2 * j] + 2.0 * lambda * wx;
        let ry = g[2 * j + 1] + 2.0 * lambda * wy;
        kkt = kkt.max(rx.hypot(ry)).max(lambda * s[j]);
    }
    let spline = spline_from_map(&a, &knots, portals.to_vec());
    let obj = jerk_objective(&spline);
    if obj > initial_objective {
        let mut r = unchanged(iterations);
        r.converged = converged;
        r.kkt_residual = kkt;
        return r;
    }
    OptimizeResult {
        spline,
        initial_objective,
        objective: obj,
        iterations,
        converged,
        kkt_residual: kkt,
    }
}
