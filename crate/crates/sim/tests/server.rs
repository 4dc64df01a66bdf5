mod common;

use std::io::Write;
use std::net::TcpStream;
use std::time::Duration;

use common::load;
use skyframe_sim::protocol::{read_message, Command, Hello, Message, PROTOCOL_VERSION};
use skyframe_sim::server::{Client, ServeOptions, ServeSummary, Server};
use skyframe_sim::Sim;

fn start(ticks: u64) -> (std::net::SocketAddr, std::thread::JoinHandle<ServeSummary>) {
    let server = Server::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let sim = Sim::new(load("two_actors.json")).unwrap();
    let h = std::thread::spawn(move || {
        server
            .run(
                sim,
                ServeOptions {
                    ticks: Some(ticks),
                    realtime: true,
                    record: None,
                    metrics: None,
                },
            )
            .unwrap()
    });
    (addr, h)
}

fn acked(c: &mut Client, id: u64) -> Message {
    c.wait_for(|m| matches!(m, Message::Ack { id: i, .. } | Message::Error { id: Some(i), .. } if *i == id))
        .unwrap()
}

#[test]
fn operator_session() {
    let (addr, server) = start(250);
    let mut c = Client::connect(addr).unwrap();
    c.set_timeout(Some(Duration::from_secs(10))).unwrap();
    match c.recv().unwrap().unwrap() {
        Message::Hello(h) => {
            assert_eq!(h.protocol_version, PROTOCOL_VERSION);
            assert_eq!(h.drones, Some(3));
            assert_eq!(h.scenario.as_deref(), Some("two_actors"));
        }
        m => panic!("expected hello, got {}", m.kind()),
    }
    assert!(matches!(c.recv().unwrap().unwrap(), Message::StateSnapshot(_)));
    c.send(&Message::Hello(Hello {
        protocol_version: PROTOCOL_VERSION,
        peer: "test".into(),
        scenario: None,
        dt: None,
        drones: None,
        intrinsics: None,
    }))
    .unwrap();

    // A second operator is turned away.
    let mut other = TcpStream::connect(addr).unwrap();
    other.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    assert!(matches!(read_message(&mut other).unwrap(), Some(Message::Error { id: None, .. })));

    let id = c.command(Command::SetAccel { drone: 0, accel: 0.5 }).unwrap();
    assert!(matches!(acked(&mut c, id), Message::Ack { .. }));
    let id = c.command(Command::SetAccel { drone: 9, accel: 0.5 }).unwrap();
    match acked(&mut c, id) {
        Message::Error { message, .. } => assert!(message.contains("unknown drone")),
        m => panic!("expected error, got {}", m.kind()),
    }
    let id = c.command(Command::AssignFraming { drone: 1, framing: "nope".into() }).unwrap();
    assert!(matches!(acked(&mut c, id), Message::Error { .. }));

    let id = c.command(Command::Pause).unwrap();
    let paused_at = match acked(&mut c, id) {
        Message::Ack { tick, .. } => tick,
        m => panic!("{}", m.kind()),
    };
    let snap = c.wait_for(|m| matches!(m, Message::StateSnapshot(s) if s.paused)).unwrap();
    let Message::StateSnapshot(snap) = snap else { unreachable!() };
    assert!(snap.record.tick <= paused_at + 1);
    let queued = c.command(Command::SwitchMaster { drone: 1 }).unwrap();
    let step = c.command(Command::Step { ticks: 1 }).unwrap();
    assert!(matches!(acked(&mut c, step), Message::Ack { .. }));
    match acked(&mut c, queued) {
        Message::Ack { tick, .. } => assert!(tick > paused_at),
        m => panic!("{}", m.kind()),
    }
    let snap = c
        .wait_for(|m| matches!(m, Message::StateSnapshot(s) if s.paused && s.record.master == 1))
        .unwrap();
    let Message::StateSnapshot(snap) = snap else { unreachable!() };
    let frozen = snap.record.tick;
    let again = c.wait_for(|m| matches!(m, Message::StateSnapshot(_))).unwrap();
    let Message::StateSnapshot(again) = again else { unreachable!() };
    assert_eq!(again.record.tick, frozen);

    c.send(&Message::Ack { id: 1, tick: 1 }).unwrap();
    c.wait_for(|m| matches!(m, Message::Error { id: None, message } if message.contains("unexpected"))).unwrap();

    let id = c.command(Command::Resume).unwrap();
    acked(&mut c, id);
    let mut deltas = 0;
    let mut last = frozen;
    while let Some(m) = c.recv().unwrap() {
        match m {
            Message::StateDelta(r) => {
                assert!(r.tick > last);
                last = r.tick;
                deltas += 1;
            }
            Message::StateSnapshot(s) => {
                assert!(s.record.tick >= last);
                last = s.record.tick;
            }
            _ => {}
        }
    }
    let summary = server.join().unwrap();
    assert_eq!(summary.ticks, 250);
    assert_eq!(summary.connections, 1);
    assert_eq!(summary.commands, 7);
    assert!(deltas > 50, "{deltas}");
}

#[test]
fn malformed_frames_end_the_session() {
    let (addr, server) = start(60);
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    assert!(matches!(read_message(&mut s).unwrap(), Some(Message::Hello(_))));
    let body = b"{broken";
    s.write_all(&(body.len() as u32).to_be_bytes()).unwrap();
    s.write_all(body).unwrap();
    let mut saw_error = false;
    while let Ok(Some(m)) = read_message(&mut s) {
        saw_error |= matches!(m, Message::Error { .. });
    }
    assert!(saw_error);
    server.join().unwrap();
}
