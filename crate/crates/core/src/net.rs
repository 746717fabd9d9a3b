//! Shared socket plumbing and per-node logging.
//!
//! Every node runs one logical event loop fed by per-connection reader
//! threads over an mpsc channel. All connections speak the framing from
//! [`crate::wire`]; the first frame on any connection must be a `HELLO`.
//!
//! Nodes append structured lines to a log file the testbed parses after a
//! run: `T` lines record the transcript (direction, message type, frame
//! size) observable at the node, `E` lines record timing events, and the
//! remaining kinds carry client round outputs and coordinator assignments.

use crate::crypto::HeParams;
use crate::wire::{self, Message, MessageType};
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, SocketAddrV4, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

/// Wall-clock microseconds since the UNIX epoch. Used for cross-process
/// timestamps under the synchronized-clocks assumption (all test processes
/// share one host clock).
pub fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or(Duration::ZERO)
        .as_micros() as u64
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    Send,
    Recv,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Send => "send",
            Direction::Recv => "recv",
        }
    }
}

/// Append-only structured log shared by all threads of one node.
pub struct NodeLog {
    out: Mutex<Option<BufWriter<std::fs::File>>>,
}

impl NodeLog {
    pub fn create(path: Option<&Path>) -> std::io::Result<Arc<Self>> {
        let out = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                Some(BufWriter::new(std::fs::File::create(p)?))
            }
            None => None,
        };
        Ok(Arc::new(NodeLog {
            out: Mutex::new(out),
        }))
    }

    pub fn disabled() -> Arc<Self> {
        Arc::new(NodeLog {
            out: Mutex::new(None),
        })
    }

    pub fn line(&self, s: &str) {
        let mut guard = self.out.lock().unwrap();
        if let Some(w) = guard.as_mut() {
            let _ = writeln!(w, "{s}");
            let _ = w.flush();
        }
    }

    pub fn transcript(&self, dir: Direction, msg_type: MessageType, frame_bytes: usize) {
        self.line(&format!(
            "T,{},{},{},{}",
            now_us(),
            dir.as_str(),
            msg_type as u8,
            frame_bytes
        ));
    }

    pub fn event(&self, epoch: u64, round: i64, key: &str, value: u64) {
        self.line(&format!("E,{},{epoch},{round},{key},{value}", now_us()));
    }
}

/// Handle for sending frames to one connected peer.
#[derive(Clone)]
pub struct Peer {
    pub id: usize,
    stream: Arc<Mutex<TcpStream>>,
    log: Arc<NodeLog>,
    params: HeParams,
}

impl Peer {
    pub fn send(&self, msg: &Message) -> std::io::Result<()> {
        let bytes = msg.encode(&self.params);
        {
            let mut s = self.stream.lock().unwrap();
            s.write_all(&bytes)?;
            s.flush()?;
        }
        self.log.transcript(Direction::Send, msg.msg_type(), bytes.len());
        Ok(())
    }

    pub fn peer_addr(&self) -> Option<SocketAddr> {
        self.stream.lock().unwrap().peer_addr().ok()
    }
}

/// One item on a node's event queue.
pub enum Event {
    /// A peer completed its hello (inbound or outbound connection).
    Connected(Peer, wire::Hello),
    Message {
        peer: usize,
        msg: Message,
    },
    Disconnected {
        peer: usize,
    },
}

fn spawn_reader(
    peer_id: usize,
    stream: TcpStream,
    tx: Sender<Event>,
    log: Arc<NodeLog>,
    max_frame: usize,
) {
    std::thread::spawn(move || {
        let mut stream = stream;
        while let Ok(frame) = wire::read_frame(&mut stream, max_frame) {
            let size = wire::FRAME_HEADER_LEN + frame.payload.len();
            log.transcript(Direction::Recv, frame.msg_type, size);
            match Message::decode(&frame) {
                Ok(msg) => {
                    if tx.send(Event::Message { peer: peer_id, msg }).is_err() {
                        break;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = tx.send(Event::Disconnected { peer: peer_id });
    });
}

/// Accept loop: every inbound connection must open with a `HELLO`, which is
/// surfaced as [`Event::Connected`] before any further frames.
pub fn spawn_acceptor(
    listener: TcpListener,
    tx: Sender<Event>,
    log: Arc<NodeLog>,
    params: HeParams,
    ids: Arc<AtomicUsize>,
    max_frame: usize,
) {
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            stream.set_nodelay(true).ok();
            let tx = tx.clone();
            let log = log.clone();
            let ids = ids.clone();
            std::thread::spawn(move || {
                let frame = match wire::read_frame(&mut stream, max_frame) {
                    Ok(f) => f,
                    Err(_) => return,
                };
                let size = wire::FRAME_HEADER_LEN + frame.payload.len();
                log.transcript(Direction::Recv, frame.msg_type, size);
                let hello = match Message::decode(&frame) {
                    Ok(Message::Hello(h)) => h,
                    _ => return,
                };
                let id = ids.fetch_add(1, Ordering::Relaxed);
                let peer = Peer {
                    id,
                    stream: Arc::new(Mutex::new(stream.try_clone().expect("clone stream"))),
                    log: log.clone(),
                    params,
                };
                if tx.send(Event::Connected(peer, hello)).is_err() {
                    return;
                }
                spawn_reader(id, stream, tx, log, max_frame);
            });
        }
    });
}

/// Connect to `addr`, retrying until `timeout`, send our hello, and pump
/// incoming frames into the event queue.
#[allow(clippy::too_many_arguments)]
pub fn connect(
    addr: SocketAddrV4,
    hello: wire::Hello,
    tx: Sender<Event>,
    log: Arc<NodeLog>,
    params: HeParams,
    ids: Arc<AtomicUsize>,
    timeout: Duration,
    max_frame: usize,
) -> std::io::Result<Peer> {
    let deadline = std::time::Instant::now() + timeout;
    let stream = loop {
        match TcpStream::connect(addr) {
            Ok(s) => break s,
            Err(e) => {
                if std::time::Instant::now() >= deadline {
                    return Err(e);
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    };
    stream.set_nodelay(true).ok();
    let id = ids.fetch_add(1, Ordering::Relaxed);
    let peer = Peer {
        id,
        stream: Arc::new(Mutex::new(stream.try_clone()?)),
        log: log.clone(),
        params,
    };
    peer.send(&Message::Hello(hello))?;
    spawn_reader(id, stream, tx, log, max_frame);
    Ok(peer)
}

/// Zero IPv4 address used in hello messages of nodes that do not listen.
pub fn no_addr() -> SocketAddrV4 {
    SocketAddrV4::new([0, 0, 0, 0].into(), 0)
}

/// Parse `host:port` into a V4 socket address.
pub fn parse_addr(s: &str) -> Result<SocketAddrV4, String> {
    s.parse::<SocketAddrV4>()
        .map_err(|e| format!("bad address {s:?}: {e}"))
}
