//! Spline export: per-piece coefficient rows, axis-major, with knot and
//! portal metadata. Used in snapshots and in the metrics directory.

use std::io::Write;

use serde::{Deserialize, Serialize};
use skyframe_core::geometry::{Disk, Vec3};
use skyframe_core::smoother::TrajectorySpline;

use crate::error::{SimError, SimResult};

pub const SPLINE_EXPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineRow {
    pub piece: usize,
    /// 0 = x, 1 = y, 2 = z.
    pub axis: usize,
    /// Coefficients a..f of `a + b t + c t^2 + d t^3 + e t^4 + f t^5`,
    /// `t` in [0, 1] on every piece.
    pub coeffs: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineExport {
    pub version: u32,
    pub pieces: usize,
    pub rows: Vec<SplineRow>,
    pub knots: Vec<Vec3>,
    pub portals: Vec<Disk>,
}

impl SplineExport {
    pub fn from_spline(s: &TrajectorySpline) -> Self {
        Self {
            version: SPLINE_EXPORT_VERSION,
            pieces: s.piece_count(),
            rows: s
                .export_rows()
                .into_iter()
                .map(|(piece, axis, coeffs)| SplineRow { piece, axis, coeffs })
                .collect(),
            knots: s.knots.clone(),
            portals: s.portals.clone(),
        }
    }

    pub fn to_spline(&self) -> SimResult<TrajectorySpline> {
        if self.version != SPLINE_EXPORT_VERSION {
            return Err(SimError::Invalid(format!("spline export version {}", self.version)));
        }
        if self.rows.len() != 3 * self.pieces || self.knots.len() != self.pieces + 1 {
            return Err(SimError::Invalid("spline export row or knot count mismatch".into()));
        }
        let mut coeffs = vec![[[0.0; 6]; 3]; self.pieces];
        let mut seen = vec![[false; 3]; self.pieces];
        for r in &self.rows {
            if r.piece >= self.pieces || r.axis > 2 || seen[r.piece][r.axis] {
                return Err(SimError::Invalid(format!("bad spline row piece {} axis {}", r.piece, r.axis)));
            }
            seen[r.piece][r.axis] = true;
            coeffs[r.piece][r.axis] = r.coeffs;
        }
        Ok(TrajectorySpline {
            coeffs,
            knots: self.knots.clone(),
            portals: self.portals.clone(),
        })
    }

    /// Delimited rows `piece,axis,a,b,c,d,e,f` with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> SimResult<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["piece", "axis", "a", "b", "c", "d", "e", "f"])?;
        for r in &self.rows {
            let mut rec = vec![r.piece.to_string(), r.axis.to_string()];
            rec.extend(r.coeffs.iter().map(|c| c.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Polyline with `per_piece` segments per piece, for overlays.
    pub fn sample(spline: &TrajectorySpline, per_piece: usize) -> Vec<Vec3> {
        let n = spline.piece_count() * per_piece;
        (0..=n).map(|k| spline.eval(k as f64 / per_piece as f64, 0)).collect()
    }
}
