//! Recorded runs: one JSON object per line. A header carries the scenario
//! and seed, command lines carry the tick at which they were submitted and
//! telemetry lines carry the tick records. Replaying re-submits every
//! command before the tick that followed it and compares the telemetry.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::protocol::Command;
use crate::scenario::Scenario;
use crate::sim::Sim;
use crate::telemetry::TickRecord;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header {
        version: u32,
        scenario: Box<Scenario>,
        seed: u64,
        #[serde(default)]
        ticks: Option<u64>,
    },
    Command {
        /// Simulation tick when the command was submitted.
        tick: u64,
        #[serde(default)]
        id: Option<u64>,
        command: Command,
    },
    Telemetry(Box<TickRecord>),
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl TraceWriter<BufWriter<File>> {
    pub fn create(path: &Path, scenario: &Scenario, ticks: Option<u64>) -> SimResult<Self> {
        Self::new(BufWriter::new(File::create(path)?), scenario, ticks)
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, scenario: &Scenario, ticks: Option<u64>) -> SimResult<Self> {
        let mut w = Self { out };
        w.line(&TraceLine::Header {
            version: TRACE_VERSION,
            scenario: Box::new(scenario.clone()),
            seed: scenario.params.seed,
            ticks,
        })?;
        Ok(w)
    }

    fn line(&mut self, l: &TraceLine) -> SimResult<()> {
        serde_json::to_writer(&mut self.out, l)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn command(&mut self, tick: u64, id: Option<u64>, command: &Command) -> SimResult<()> {
        self.line(&TraceLine::Command {
            tick,
            id,
            command: command.clone(),
        })
    }

    pub fn telemetry(&mut self, r: &TickRecord) -> SimResult<()> {
        self.line(&TraceLine::Telemetry(Box::new(r.clone())))
    }

    pub fn finish(mut self) -> SimResult<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// A parsed trace.
#[derive(Debug, Clone)]
pub struct Trace {
    pub scenario: Scenario,
    pub seed: u64,
    pub ticks: Option<u64>,
    /// Commands keyed by submission tick, in submission order.
    pub commands: BTreeMap<u64, Vec<(Option<u64>, Command)>>,
    pub telemetry: Vec<TickRecord>,
}

impl Trace {
    pub fn read<R: BufRead>(r: R) -> SimResult<Self> {
        let mut header = None;
        let mut commands: BTreeMap<u64, Vec<(Option<u64>, Command)>> = BTreeMap::new();
        let mut telemetry = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine =
                serde_json::from_str(&line).map_err(|e| SimError::Trace(format!("line {}: {e}", n + 1)))?;
            match parsed {
                TraceLine::Header { version, scenario, seed, ticks } => {
                    if n != 0 || header.is_some() {
                        return Err(SimError::Trace("header must be the first line".into()));
                    }
                    if version != TRACE_VERSION {
                        return Err(SimError::Trace(format!("unsupported trace version {version}")));
                    }
                    header = Some((*scenario, seed, ticks));
                }
                TraceLine::Command { tick, id, command } => commands.entry(tick).or_default().push((id, command)),
                TraceLine::Telemetry(r) => telemetry.push(*r),
            }
        }
        let (mut scenario, seed, ticks) = header.ok_or_else(|| SimError::Trace("missing header".into()))?;
        scenario.params.seed = seed;
        Ok(Self {
            scenario,
            seed,
            ticks,
            commands,
            telemetry,
        })
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub ticks: usize,
    /// First tick whose telemetry differed, with both serializations.
    pub mismatch: Option<(u64, String, String)>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Re-run a trace and compare every telemetry line.
pub fn replay(trace: &Trace) -> SimResult<ReplayReport> {
    let mut sim = Sim::new(trace.scenario.clone())?;
    let mut ticks = 0;
    for expected in &trace.telemetry {
        if let Some(cmds) = trace.commands.get(&sim.state.tick) {
            for (id, c) in cmds {
                // Rejections are part of the recorded behavior.
                let _ = sim.submit(*id, c.clone());
            }
        }
        let Some(actual) = sim.tick() else {
            return Err(SimError::Trace(format!("replay stalled while paused at tick {}", sim.state.tick)));
        };
        ticks += 1;
        let (a, e) = (serde_json::to_string(&actual)?, serde_json::to_string(expected)?);
        if a != e {
            return Ok(ReplayReport {
                ticks,
                mismatch: Some((actual.tick, e, a)),
            });
        }
    }
    Ok(ReplayReport { ticks, mismatch: None })
}
