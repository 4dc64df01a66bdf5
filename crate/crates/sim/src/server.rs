//! TCP server for a single operator. The simulation loop owns the state;
//! each connection gets a reader and a writer thread joined to the loop by
//! bounded channels. Deltas are dropped when the writer falls behind and a
//! snapshot is sent instead once there is room.

use std::io::{BufReader, BufWriter, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TryRecvError, TrySendError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{SimError, SimResult};
use crate::metrics::MetricsWriter;
use crate::protocol::{decode, encode, read_frame, write_message, Command, Hello, Message, PROTOCOL_VERSION};
use crate::sim::{Sim, Submitted, SNAPSHOT_EVERY};
use crate::telemetry::{Event, TickRecord};
use crate::trace::TraceWriter;

/// Queue depth of decoded operator messages.
pub const COMMAND_QUEUE: usize = 256;
/// Queue depth of outgoing frames.
pub const OUTGOING_QUEUE: usize = 512;
/// Snapshot period while paused.
pub const PAUSED_SNAPSHOT: Duration = Duration::from_millis(100);
const POLL: Duration = Duration::from_millis(1);

pub struct ServeOptions {
    /// Stop after this many ticks.
    pub ticks: Option<u64>,
    /// Pace ticks to wall-clock time.
    pub realtime: bool,
    pub record: Option<TraceWriter<BufWriter<std::fs::File>>>,
    pub metrics: Option<MetricsWriter>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub commands: u64,
    pub connections: u64,
}

struct Operator {
    incoming: Receiver<Result<Message, String>>,
    outgoing: Option<SyncSender<Vec<u8>>>,
    writer: Option<JoinHandle<()>>,
    /// A delta was dropped; send a snapshot when possible.
    resync: bool,
}

impl Operator {
    fn connect(stream: TcpStream) -> SimResult<Self> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        let (in_tx, in_rx) = sync_channel(COMMAND_QUEUE);
        let (out_tx, out_rx) = sync_channel::<Vec<u8>>(OUTGOING_QUEUE);
        std::thread::spawn(move || {
            let mut r = BufReader::new(read_half);
            loop {
                match read_frame(&mut r) {
                    Ok(Some(body)) => {
                        if in_tx.send(decode(&body).map_err(|e| e.to_string())).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = in_tx.send(Err(e.to_string()));
                        break;
                    }
                }
            }
        });
        let writer = std::thread::spawn(move || {
            let mut w = BufWriter::new(stream);
            'outer: while let Ok(frame) = out_rx.recv() {
                let mut next = Some(frame);
                // Write everything queued, then flush once.
                while let Some(f) = next {
                    if std::io::Write::write_all(&mut w, &f).is_err() {
                        break 'outer;
                    }
                    next = out_rx.try_recv().ok();
                }
                if std::io::Write::flush(&mut w).is_err() {
                    break;
                }
            }
            let _ = w.get_ref().shutdown(std::net::Shutdown::Both);
        });
        Ok(Self {
            incoming: in_rx,
            outgoing: Some(out_tx),
            writer: Some(writer),
            resync: false,
        })
    }

    /// Send without dropping. False when the connection is gone.
    fn send(&mut self, msg: &Message) -> bool {
        match (encode(msg), &self.outgoing) {
            (Ok(f), Some(tx)) => tx.send(f).is_ok(),
            _ => false,
        }
    }

    /// Send, dropping the frame when the writer is behind.
    fn offer(&mut self, msg: &Message) -> bool {
        let Some(tx) = &self.outgoing else { return false };
        let Ok(frame) = encode(msg) else { return true };
        match tx.try_send(frame) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                self.resync = true;
                true
            }
            Err(TrySendError::Disconnected(_)) => false,
        }
    }

    fn close(mut self) {
        self.outgoing = None;
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

pub fn hello(sim: &Sim) -> Hello {
    Hello {
        protocol_version: PROTOCOL_VERSION,
        peer: "skyframe".into(),
        scenario: Some(sim.scenario.name.clone()),
        dt: Some(sim.dt()),
        drones: Some(sim.state.drones.len()),
        intrinsics: Some(sim.intrinsics),
    }
}

/// Acks and errors for queued commands resolved in this record.
fn outcomes(r: &TickRecord) -> Vec<Message> {
    r.events
        .iter()
        .filter_map(|e| match e {
            Event::CommandApplied { id: Some(id), command } if !is_control_name(command) => {
                Some(Message::Ack { id: *id, tick: r.tick })
            }
            Event::CommandRejected { id, message, .. } => Some(Message::Error {
                id: *id,
                message: message.clone(),
            }),
            _ => None,
        })
        .collect()
}

fn is_control_name(name: &str) -> bool {
    matches!(name, "pause" | "resume" | "step")
}

fn bind(addr: impl ToSocketAddrs) -> SimResult<TcpListener> {
    let l = TcpListener::bind(addr)?;
    l.set_nonblocking(true)?;
    Ok(l)
}

pub struct Server {
    listener: TcpListener,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs) -> SimResult<Self> {
        Ok(Self { listener: bind(addr)? })
    }

    pub fn local_addr(&self) -> SimResult<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Run the simulation loop until the tick limit (forever without one).
    pub fn run(self, mut sim: Sim, mut opts: ServeOptions) -> SimResult<ServeSummary> {
        let mut summary = ServeSummary::default();
        let mut operator: Option<Operator> = None;
        let dt = Duration::from_secs_f64(sim.dt());
        let mut next_tick = Instant::now();
        let mut last_paused_snapshot = Instant::now();
        let limit_reached = |s: &ServeSummary| opts.ticks.is_some_and(|n| s.ticks >= n);
        while !limit_reached(&summary) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    if operator.is_some() {
                        let mut s = stream;
                        let _ = s.set_nonblocking(false);
                        let _ = write_message(
                            &mut s,
                            &Message::Error {
                                id: None,
                                message: "an operator is already connected".into(),
                            },
                        );
                    } else {
                        let mut op = Operator::connect(stream)?;
                        op.send(&Message::Hello(hello(&sim)));
                        op.send(&Message::StateSnapshot(Box::new(sim.snapshot())));
                        operator = Some(op);
                        summary.connections += 1;
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {}
                Err(e) => return Err(e.into()),
            }

            let mut drop_operator = false;
            if let Some(op) = operator.as_mut() {
                loop {
                    let msg = match op.incoming.try_recv() {
                        Ok(m) => m,
                        Err(TryRecvError::Empty) => break,
                        Err(TryRecvError::Disconnected) => {
                            drop_operator = true;
                            break;
                        }
                    };
                    match msg {
                        Ok(Message::Command { id, command }) => {
                            summary.commands += 1;
                            if let Some(rec) = opts.record.as_mut() {
                                rec.command(sim.state.tick, Some(id), &command)?;
                            }
                            let reply = match sim.submit(Some(id), command) {
                                Ok(Submitted::Applied) => Some(Message::Ack { id, tick: sim.state.tick }),
                                Ok(Submitted::Queued) => None,
                                Err(e) => Some(Message::Error {
                                    id: Some(id),
                                    message: e.to_string(),
                                }),
                            };
                            if let Some(m) = reply {
                                drop_operator |= !op.send(&m);
                            }
                        }
                        Ok(Message::Hello(h)) if h.protocol_version == PROTOCOL_VERSION => {}
                        Ok(Message::Hello(h)) => {
                            op.send(&Message::Error {
                                id: None,
                                message: format!("protocol version {} not supported", h.protocol_version),
                            });
                            drop_operator = true;
                        }
                        Ok(other) => {
                            drop_operator |= !op.send(&Message::Error {
                                id: None,
                                message: format!("unexpected {} message", other.kind()),
                            });
                        }
                        Err(e) => {
                            op.send(&Message::Error { id: None, message: e });
                            drop_operator = true;
                        }
                    }
                    if drop_operator {
                        break;
                    }
                }
            }
            if drop_operator {
                if let Some(op) = operator.take() {
                    op.close();
                }
            }

            let now = Instant::now();
            if sim.can_advance() && (!opts.realtime || now >= next_tick) {
                let r = sim.tick().expect("tick advances");
                summary.ticks += 1;
                next_tick = if opts.realtime { next_tick.max(now - dt) + dt } else { now };
                if let Some(rec) = opts.record.as_mut() {
                    rec.telemetry(&r)?;
                }
                if let Some(m) = opts.metrics.as_mut() {
                    m.tick(&r)?;
                    m.plans(&sim.plan_log)?;
                }
                sim.plan_log.clear();
                if let Some(op) = operator.as_mut() {
                    let mut alive = true;
                    for m in outcomes(&r) {
                        alive &= op.send(&m);
                    }
                    if op.resync || r.tick.is_multiple_of(SNAPSHOT_EVERY) {
                        op.resync = false;
                        alive &= op.offer(&Message::StateSnapshot(Box::new(sim.snapshot())));
                    } else {
                        alive &= op.offer(&Message::StateDelta(Box::new(r)));
                    }
                    if !alive {
                        operator.take().unwrap().close();
                    }
                }
            } else if !sim.can_advance() {
                next_tick = now;
                if now.duration_since(last_paused_snapshot) >= PAUSED_SNAPSHOT {
                    last_paused_snapshot = now;
                    if let Some(op) = operator.as_mut() {
                        if !op.offer(&Message::StateSnapshot(Box::new(sim.snapshot()))) {
                            operator.take().unwrap().close();
                        }
                    }
                }
                std::thread::sleep(POLL);
            } else {
                std::thread::sleep((next_tick - now).min(POLL));
            }
        }
        if let Some(op) = operator.take() {
            op.close();
        }
        if let Some(rec) = opts.record.take() {
            rec.finish()?;
        }
        if let Some(m) = opts.metrics.take() {
            m.finish()?;
        }
        Ok(summary)
    }
}

/// Blocking operator client.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> SimResult<Self> {
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(s.try_clone()?),
            writer: s,
            next_id: 1,
        })
    }

    pub fn set_timeout(&self, t: Option<Duration>) -> SimResult<()> {
        self.writer.set_read_timeout(t)?;
        Ok(())
    }

    pub fn send(&mut self, msg: &Message) -> SimResult<()> {
        write_message(&mut self.writer, msg)
    }

    /// Send a command and return its id.
    pub fn command(&mut self, command: Command) -> SimResult<u64> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Message::Command { id, command })?;
        Ok(id)
    }

    /// Next message, `None` once the server closed the connection.
    pub fn recv(&mut self) -> SimResult<Option<Message>> {
        match read_frame(&mut self.reader)? {
            Some(body) => decode(&body).map(Some),
            None => Ok(None),
        }
    }

    /// Read until `pred` matches, failing on close.
    pub fn wait_for(&mut self, mut pred: impl FnMut(&Message) -> bool) -> SimResult<Message> {
        loop {
            match self.recv()? {
                Some(m) if pred(&m) => return Ok(m),
                Some(_) => {}
                None => return Err(SimError::Protocol("connection closed".into())),
            }
        }
    }
}
