//! Framing and tracking metrics, written as delimited files to a metrics
//! directory. Every column except the plan timings can be recomputed from a
//! recorded trace.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use skyframe_core::camera::{project, CameraIntrinsics, DroneConfig};
use skyframe_core::dts::Target;

use crate::error::SimResult;
use crate::sim::{apparent_size, PlanLog};
use crate::telemetry::{DroneRecord, TickRecord};

/// Screen distance charged for a target behind the camera.
pub const BEHIND_PENALTY: f64 = 2.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FramingErrors {
    /// RMS distance between projected and desired screen positions.
    pub screen: f64,
    /// Absolute difference of apparent sizes (fraction of the horizontal FOV).
    pub size: f64,
    /// Angle between the current and desired view directions, radians.
    pub angle: f64,
}

/// Errors of a drone against its desired framing, `None` without one.
pub fn framing_errors(drone: &DroneRecord, targets: &[Target], intr: &CameraIntrinsics) -> Option<FramingErrors> {
    let spec = drone.desired.as_ref()?;
    let cfg = DroneConfig::looking(drone.position, drone.yaw, drone.tilt);
    let mut sq = 0.0;
    for (&t, want) in spec.targets.iter().zip(&spec.screens) {
        let e = match project(&cfg, intr, &targets.get(t)?.position) {
            Ok(p) if !p.behind => (p.screen - want).norm(),
            _ => BEHIND_PENALTY,
        };
        sq += e * e;
    }
    let screen = (sq / spec.targets.len().max(1) as f64).sqrt();
    let primary = targets.get(*spec.targets.first()?)?;
    let size = (apparent_size(&drone.position, primary, intr) - spec.size).abs();
    let v = drone.position - primary.position;
    let angle = if v.norm() > 1e-12 {
        v.normalize().dot(&spec.view).clamp(-1.0, 1.0).acos()
    } else {
        std::f64::consts::PI
    };
    Some(FramingErrors { screen, size, angle })
}

pub fn record_targets(r: &TickRecord) -> Vec<Target> {
    r.targets
        .iter()
        .map(|t| Target {
            radius: t.radius,
            ..Target::with_yaw(t.position, t.yaw)
        })
        .collect()
}

pub const TICK_COLUMNS: [&str; 9] = [
    "tick",
    "t",
    "drone",
    "mode",
    "tracking_error",
    "screen_error",
    "size_error",
    "angle_error",
    "speed",
];
pub const CONFLICT_COLUMNS: [&str; 4] = ["tick", "t", "hard", "soft"];
pub const PLAN_COLUMNS: [&str; 9] = [
    "tick",
    "drone",
    "kind",
    "reason",
    "ok",
    "nodes",
    "search_ms",
    "smooth_ms",
    "smooth_iterations",
];

fn label<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|x| x.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows of `ticks.csv` for one record.
pub fn tick_rows(r: &TickRecord, intr: &CameraIntrinsics) -> Vec<Vec<String>> {
    let targets = record_targets(r);
    r.drones
        .iter()
        .map(|d| {
            let e = framing_errors(d, &targets, intr);
            vec![
                r.tick.to_string(),
                r.t.to_string(),
                d.id.to_string(),
                label(&d.mode),
                d.tracking_error.to_string(),
                opt(e.map(|e| e.screen)),
                opt(e.map(|e| e.size)),
                opt(e.map(|e| e.angle)),
                d.velocity.norm().to_string(),
            ]
        })
        .collect()
}

/// Writer for a metrics directory.
pub struct MetricsWriter {
    intrinsics: CameraIntrinsics,
    ticks: csv::Writer<BufWriter<File>>,
    conflicts: csv::Writer<BufWriter<File>>,
    plans: csv::Writer<BufWriter<File>>,
    splines: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(dir: &Path, intrinsics: CameraIntrinsics) -> SimResult<Self> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str, header: &[&str]| -> SimResult<csv::Writer<BufWriter<File>>> {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?));
            w.write_record(header)?;
            Ok(w)
        };
        Ok(Self {
            intrinsics,
            ticks: open("ticks.csv", &TICK_COLUMNS)?,
            conflicts: open("conflicts.csv", &CONFLICT_COLUMNS)?,
            plans: open("plans.csv", &PLAN_COLUMNS)?,
            splines: BufWriter::new(File::create(dir.join("splines.jsonl"))?),
        })
    }

    pub fn tick(&mut self, r: &TickRecord) -> SimResult<()> {
        for row in tick_rows(r, &self.intrinsics) {
            self.ticks.write_record(&row)?;
        }
        self.conflicts.write_record([
            r.tick.to_string(),
            r.t.to_string(),
            r.conflicts.hard.to_string(),
            r.conflicts.soft.to_string(),
        ])?;
        Ok(())
    }

    pub fn plans(&mut self, logs: &[PlanLog]) -> SimResult<()> {
        for p in logs {
            self.plans.write_record([
                p.tick.to_string(),
                p.drone.to_string(),
                label(&p.kind),
                label(&p.reason),
                p.ok.to_string(),
                p.nodes.to_string(),
                format!("{:.3}", p.search_ms),
                format!("{:.3}", p.smooth_ms),
                p.smooth_iterations.to_string(),
            ])?;
            if let Some(s) = &p.spline {
                let line = serde_json::json!({ "tick": p.tick, "drone": p.drone, "kind": p.kind, "spline": s });
                writeln!(self.splines, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> SimResult<()> {
        self.ticks.flush()?;
        self.conflicts.flush()?;
        self.plans.flush()?;
        self.splines.flush()?;
        Ok(())
    }
}
