//! Operator wire protocol: JSON messages behind a 4-byte big-endian length
//! prefix, plus the command schema shared with recorded traces.

use std::io::{ErrorKind, Read, Write};

use serde::{Deserialize, Serialize};
use skyframe_core::camera::CameraIntrinsics;
use skyframe_core::manipulators::WorldMove;

use crate::error::{SimError, SimResult};
use crate::telemetry::{Snapshot, TickRecord};

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest accepted frame body.
pub const MAX_FRAME: usize = 16 << 20;

/// How a drone is driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroneMode {
    /// Framing chosen by the coordinator.
    Auto,
    /// Framing chosen by the operator.
    Framing,
    /// Flying a submitted sketch.
    Sketch,
    /// Positioned through manipulators.
    Manual,
}

/// Through-the-lens and world manipulations. Screen quantities are in
/// normalized screen units (the frame spans [-1, 1] on both axes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Manipulation {
    /// Orbit drag: `dx` moves along the view angle (chart theta), `dy`
    /// along the elevation (chart phi).
    ViewAngle { dx: f64, dy: f64 },
    /// Drag of one target's on-screen position.
    Position { target: usize, dx: f64, dy: f64 },
    /// Change of the distance to the primary target, meters.
    Dolly { dz: f64 },
    World { axis: WorldMove, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetMode { drone: usize, mode: DroneMode },
    Manipulate { drone: usize, manipulation: Manipulation },
    /// Top-down points with one height each.
    SketchSubmit { drone: usize, points: Vec<[f64; 2]>, heights: Vec<f64> },
    /// Along-path acceleration command, clamped to amax.
    SetAccel { drone: usize, accel: f64 },
    SwitchMaster { drone: usize },
    AssignFraming { drone: usize, framing: String },
    Pause,
    Resume,
    /// Advance a paused simulation.
    Step {
        #[serde(default = "one")]
        ticks: u32,
    },
}

fn one() -> u32 {
    1
}

impl Command {
    /// Pause, resume and step act immediately even when paused.
    pub fn is_control(&self) -> bool {
        matches!(self, Command::Pause | Command::Resume | Command::Step { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::SetMode { .. } => "set_mode",
            Command::Manipulate { .. } => "manipulate",
            Command::SketchSubmit { .. } => "sketch_submit",
            Command::SetAccel { .. } => "set_accel",
            Command::SwitchMaster { .. } => "switch_master",
            Command::AssignFraming { .. } => "assign_framing",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Step { .. } => "step",
        }
    }

    pub fn drone(&self) -> Option<usize> {
        match self {
            Command::SetMode { drone, .. }
            | Command::Manipulate { drone, .. }
            | Command::SketchSubmit { drone, .. }
            | Command::SetAccel { drone, .. }
            | Command::SwitchMaster { drone }
            | Command::AssignFraming { drone, .. } => Some(*drone),
            _ => None,
        }
    }

    /// Schema checks that do not need simulation state.
    pub fn validate(&self, drone_count: usize) -> SimResult<()> {
        let bad = |m: String| Err(SimError::Command(m));
        if let Some(d) = self.drone() {
            if d >= drone_count {
                return bad(format!("unknown drone {d}"));
            }
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            Command::Manipulate { manipulation, .. } => {
                let ok = match *manipulation {
                    Manipulation::ViewAngle { dx, dy } => finite(&[dx, dy]),
                    Manipulation::Position { dx, dy, target } => finite(&[dx, dy]) && target < 2,
                    Manipulation::Dolly { dz } => dz.is_finite(),
                    Manipulation::World { delta, .. } => delta.is_finite(),
                };
                if !ok {
                    return bad("manipulation values must be finite (position target 0 or 1)".into());
                }
            }
            Command::SketchSubmit { points, heights, .. } => {
                if points.len() < 2 {
                    return bad("a sketch needs at least two points".into());
                }
                if points.len() != heights.len() {
                    return bad(format!("{} points but {} heights", points.len(), heights.len()));
                }
                if !points.iter().all(|p| finite(p)) || !finite(heights) {
                    return bad("sketch coordinates must be finite".into());
                }
            }
            Command::SetAccel { accel, .. } if !accel.is_finite() => return bad("accel must be finite".into()),
            Command::Step { ticks: 0 } => return bad("step needs at least one tick".into()),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub protocol_version: u32,
    /// "skyframe" from the server, free text from a client.
    pub peer: String,
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub drones: Option<usize>,
    #[serde(default)]
    pub intrinsics: Option<CameraIntrinsics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    StateSnapshot(Box<Snapshot>),
    StateDelta(Box<TickRecord>),
    Command { id: u64, command: Command },
    /// The command with this id was applied at `tick`.
    Ack { id: u64, tick: u64 },
    Error {
        #[serde(default)]
        id: Option<u64>,
        message: String,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::StateSnapshot(_) => "state_snapshot",
            Message::StateDelta(_) => "state_delta",
            Message::Command { .. } => "command",
            Message::Ack { .. } => "ack",
            Message::Error { .. } => "error",
        }
    }
}

pub fn encode(msg: &Message) -> SimResult<Vec<u8>> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(SimError::FrameTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> SimResult<()> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> SimResult<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(SimError::Protocol("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(SimError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => SimError::Protocol("stream ended inside a frame body".into()),
        _ => e.into(),
    })?;
    Ok(Some(body))
}

pub fn decode(body: &[u8]) -> SimResult<Message> {
    serde_json::from_slice(body).map_err(|e| SimError::Protocol(e.to_string()))
}

pub fn read_message<R: Read>(r: &mut R) -> SimResult<Option<Message>> {
    match read_frame(r)? {
        Some(body) => decode(&body).map(Some),
        None => Ok(None),
    }
}
