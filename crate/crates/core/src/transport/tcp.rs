//! Star network over TCP: the server accepts one connection per client and
//! relays everything; clients only ever talk to the server.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{read_frame, write_frame, MsgType, ReadError, WireMessage};
use super::transcript::{Link, Timings, Transcript};
use crate::protocol::payload::text_payload;
use crate::protocol::{Outgoing, Party, Phase, ProtocolError, SERVER};

#[derive(Clone, Copy, Debug)]
pub struct TcpOptions {
    /// Longest wait for any single frame or connection.
    pub timeout: Duration,
}

impl Default for TcpOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TcpError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("malformed frame from {peer}: {detail}")]
    Malformed { peer: String, detail: String },
    #[error("connection to party {peer} lost before the session finished")]
    ConnectionLost { peer: u16 },
    #[error("timed out: {0}")]
    Timeout(String),
}

pub struct TcpRun {
    /// Frames this party sent and received, plus its local entries.
    pub transcript: Transcript,
    pub timings: Timings,
}

enum Event {
    Accepted(usize, TcpStream),
    Frame(usize, WireMessage),
    Bad(usize, String),
    Closed(usize),
}

fn abort_frame(receiver: u16, reason: &str) -> WireMessage {
    WireMessage::new(MsgType::Abort, 0, SERVER, receiver, 0, text_payload(reason))
}

struct ServerLinks {
    writers: HashMap<usize, BufWriter<TcpStream>>,
    conn_of: HashMap<u16, usize>,
    party_of: HashMap<usize, u16>,
}

impl ServerLinks {
    fn abort_all(&mut self, reason: &str) {
        for (&party, conn) in &self.conn_of {
            if let Some(w) = self.writers.get_mut(conn) {
                let _ = write_frame(w, &abort_frame(party, reason));
            }
        }
    }
}

/// Runs the server role on `listener` until the session finishes.
pub fn serve(listener: TcpListener, server: &mut dyn Party, clients: usize, opts: TcpOptions) -> Result<TcpRun, TcpError> {
    let (tx, rx) = mpsc::channel::<Event>();
    thread::spawn(move || {
        for conn in 0..clients {
            let Ok((stream, _)) = listener.accept() else { return };
            let _ = stream.set_nodelay(true);
            let Ok(reader) = stream.try_clone() else { return };
            if tx.send(Event::Accepted(conn, stream)).is_err() {
                return;
            }
            let tx = tx.clone();
            thread::spawn(move || {
                let mut r = BufReader::new(reader);
                loop {
                    let ev = match read_frame(&mut r) {
                        Ok(Some((m, _))) => Event::Frame(conn, m),
                        Ok(None) => Event::Closed(conn),
                        Err(ReadError::Frame(e)) => Event::Bad(conn, e.to_string()),
                        Err(ReadError::Io(_)) => Event::Closed(conn),
                    };
                    let stop = !matches!(ev, Event::Frame(..));
                    if tx.send(ev).is_err() || stop {
                        return;
                    }
                }
            });
        }
    });

    let mut links = ServerLinks {
        writers: HashMap::new(),
        conn_of: HashMap::new(),
        party_of: HashMap::new(),
    };
    let mut transcript = Transcript::default();
    let mut timings = Timings::new();
    let started = Instant::now();
    let outs = server.start()?;
    *timings.entry((SERVER, Phase::Setup)).or_default() += started.elapsed();
    debug_assert!(outs.is_empty());

    while !server.is_finished() {
        let ev = rx.recv_timeout(opts.timeout).map_err(|_| {
            links.abort_all("server timed out");
            TcpError::Timeout(format!("server waiting on clients: {}", server.status()))
        })?;
        match ev {
            Event::Accepted(conn, stream) => {
                links.writers.insert(conn, BufWriter::new(stream));
            }
            Event::Bad(conn, detail) => {
                let peer = links.party_of.get(&conn).map_or(format!("connection {conn}"), |p| format!("client {p}"));
                links.abort_all(&format!("malformed frame from {peer}"));
                return Err(TcpError::Malformed { peer, detail });
            }
            Event::Closed(conn) => {
                let peer = links.party_of.get(&conn).copied().unwrap_or(0);
                links.abort_all(&format!("connection to client {peer} lost"));
                return Err(TcpError::ConnectionLost { peer });
            }
            Event::Frame(conn, msg) => {
                let bound = links.party_of.get(&conn).copied();
                let valid_new = bound.is_none()
                    && msg.sender != SERVER
                    && usize::from(msg.sender) <= clients
                    && !links.conn_of.contains_key(&msg.sender);
                if bound != Some(msg.sender) && !valid_new {
                    let peer = bound.map_or(format!("connection {conn}"), |p| format!("client {p}"));
                    links.abort_all(&format!("frame from {peer} claims sender {}", msg.sender));
                    return Err(TcpError::Malformed {
                        peer,
                        detail: format!("claims sender {}", msg.sender),
                    });
                }
                if bound.is_none() {
                    links.party_of.insert(conn, msg.sender);
                    links.conn_of.insert(msg.sender, conn);
                }
                transcript.push(Link::Wire { from: msg.sender, to: SERVER }, msg.clone());
                let t0 = Instant::now();
                let result = server.handle(&msg);
                *timings.entry((SERVER, Phase::of(msg.msg_type))).or_default() += t0.elapsed();
                let outs = match result {
                    Ok(o) => o,
                    Err(e) => {
                        links.abort_all(&e.to_string());
                        return Err(e.into());
                    }
                };
                for o in outs {
                    match o {
                        Outgoing::Send(m) => {
                            let Some(w) = links.conn_of.get(&m.receiver).and_then(|c| links.writers.get_mut(c)) else {
                                links.abort_all("internal routing failure");
                                return Err(TcpError::ConnectionLost { peer: m.receiver });
                            };
                            write_frame(w, &m)?;
                            transcript.push(Link::Wire { from: SERVER, to: m.receiver }, m);
                        }
                        Outgoing::Local(m) => transcript.push(Link::Local(SERVER), m),
                    }
                }
            }
        }
    }
    Ok(TcpRun { transcript, timings })
}

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream, TcpError> {
    let deadline = Instant::now() + timeout;
    loop {
        let target = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("cannot resolve {addr}")))?;
        match TcpStream::connect_timeout(&target, timeout) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline && e.kind() == io::ErrorKind::ConnectionRefused => {
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Runs one client role against the server at `addr`.
pub fn run_client(addr: &str, client: &mut dyn Party, opts: TcpOptions) -> Result<TcpRun, TcpError> {
    let stream = connect(addr, opts.timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(opts.timeout))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let id = client.id();
    let mut transcript = Transcript::default();
    let mut timings = Timings::new();

    let emit = |outs: Vec<Outgoing>, w: &mut BufWriter<TcpStream>, tr: &mut Transcript| -> io::Result<()> {
        for o in outs {
            match o {
                Outgoing::Send(m) => {
                    write_frame(w, &m)?;
                    tr.push(Link::Wire { from: id, to: SERVER }, m);
                }
                Outgoing::Local(m) => tr.push(Link::Local(id), m),
            }
        }
        Ok(())
    };

    let t0 = Instant::now();
    let outs = client.start()?;
    *timings.entry((id, Phase::Setup)).or_default() += t0.elapsed();
    emit(outs, &mut writer, &mut transcript)?;

    while !client.is_finished() {
        let msg = match read_frame(&mut reader) {
            Ok(Some((m, _))) => m,
            Ok(None) => return Err(TcpError::ConnectionLost { peer: SERVER }),
            Err(ReadError::Frame(e)) => {
                return Err(TcpError::Malformed {
                    peer: "server".into(),
                    detail: e.to_string(),
                })
            }
            Err(ReadError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Err(TcpError::Timeout(format!("client {id}: {}", client.status())))
            }
            Err(ReadError::Io(_)) => return Err(TcpError::ConnectionLost { peer: SERVER }),
        };
        transcript.push(Link::Wire { from: SERVER, to: id }, msg.clone());
        let t0 = Instant::now();
        let result = client.handle(&msg);
        *timings.entry((id, Phase::of(msg.msg_type))).or_default() += t0.elapsed();
        match result {
            Ok(outs) => emit(outs, &mut writer, &mut transcript)?,
            Err(e) => {
                if msg.msg_type != MsgType::Abort {
                    let abort = WireMessage::new(MsgType::Abort, msg.round, id, SERVER, 0, text_payload(&e.to_string()));
                    let _ = write_frame(&mut writer, &abort);
                }
                return Err(e.into());
            }
        }
    }
    Ok(TcpRun { transcript, timings })
}
