//! Framed message transports: TCP and an in-memory loopback with the same
//! contract. Frames are a 4-byte big-endian length followed by one encoded
//! [`Envelope`]; each connection delivers frames in order.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use log::{debug, warn};

use super::protocol::{Envelope, Message, UNREGISTERED};
use super::ClusterError;
use crate::codec::{read_frame, write_frame};

pub type ConnId = u64;

/// Outgoing half of a connection.
pub trait FrameSink: Send {
    fn send(&mut self, payload: &[u8]) -> io::Result<()>;
}

/// What the master's event loop receives from its transports.
pub enum Inbound {
    Opened(ConnId, Box<dyn FrameSink>),
    Frame(ConnId, Vec<u8>),
    Closed(ConnId),
}

impl std::fmt::Debug for Inbound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Inbound::Opened(c, _) => write!(f, "Opened({c})"),
            Inbound::Frame(c, b) => write!(f, "Frame({c}, {} bytes)", b.len()),
            Inbound::Closed(c) => write!(f, "Closed({c})"),
        }
    }
}

struct TxState {
    sink: Box<dyn FrameSink>,
    seq: u64,
    sender: u64,
    sent_bytes: u64,
}

/// Cloneable sending half of a worker connection. Stamps every message with
/// the next sequence number.
#[derive(Clone)]
pub struct EndpointTx {
    state: Arc<Mutex<TxState>>,
}

impl EndpointTx {
    fn new(sink: Box<dyn FrameSink>) -> Self {
        EndpointTx {
            state: Arc::new(Mutex::new(TxState {
                sink,
                seq: 0,
                sender: UNREGISTERED,
                sent_bytes: 0,
            })),
        }
    }

    pub fn set_sender(&self, id: u64) {
        self.state.lock().unwrap().sender = id;
    }

    /// Sends `msg`; returns the framed size.
    pub fn send(&self, msg: Message) -> Result<usize, ClusterError> {
        let mut s = self.state.lock().unwrap();
        s.seq += 1;
        let bytes = Envelope {
            seq: s.seq,
            sender: s.sender,
            msg,
        }
        .encode();
        s.sink.send(&bytes)?;
        s.sent_bytes += bytes.len() as u64 + 4;
        Ok(bytes.len() + 4)
    }

    pub fn sent_bytes(&self) -> u64 {
        self.state.lock().unwrap().sent_bytes
    }
}

/// A worker's connection to the master.
pub struct Endpoint {
    tx: EndpointTx,
    rx: Receiver<Vec<u8>>,
}

impl Endpoint {
    pub fn tx(&self) -> &EndpointTx {
        &self.tx
    }

    pub fn send(&self, msg: Message) -> Result<usize, ClusterError> {
        self.tx.send(msg)
    }

    /// Next message, or `None` after `timeout`.
    pub fn recv(&self, timeout: Duration) -> Result<Option<Envelope>, ClusterError> {
        match self.rx.recv_timeout(timeout) {
            Ok(bytes) => Ok(Some(Envelope::decode(&bytes)?)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ClusterError::Disconnected),
        }
    }
}

struct ChannelSink(Sender<Vec<u8>>);

impl FrameSink for ChannelSink {
    fn send(&mut self, payload: &[u8]) -> io::Result<()> {
        self.0
            .send(payload.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))
    }
}

struct LoopbackSink {
    conn: ConnId,
    inbound: Sender<Inbound>,
}

impl FrameSink for LoopbackSink {
    fn send(&mut self, payload: &[u8]) -> io::Result<()> {
        self.inbound
            .send(Inbound::Frame(self.conn, payload.to_vec()))
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "master gone"))
    }
}

impl Drop for LoopbackSink {
    fn drop(&mut self) {
        let _ = self.inbound.send(Inbound::Closed(self.conn));
    }
}

/// In-memory transport. Every [`Loopback::connect`] opens a connection to
/// the master reading [`Loopback::inbound`].
#[derive(Clone)]
pub struct Loopback {
    tx: Sender<Inbound>,
    next: Arc<AtomicU64>,
}

impl Loopback {
    pub fn new() -> (Self, Receiver<Inbound>) {
        let (tx, rx) = unbounded();
        (
            Loopback {
                tx,
                next: Arc::new(AtomicU64::new(0)),
            },
            rx,
        )
    }

    pub fn connect(&self) -> Result<Endpoint, ClusterError> {
        let conn = self.next.fetch_add(1, Ordering::Relaxed);
        let (to_worker, rx) = unbounded();
        self.tx
            .send(Inbound::Opened(conn, Box::new(ChannelSink(to_worker))))
            .map_err(|_| ClusterError::Disconnected)?;
        Ok(Endpoint {
            tx: EndpointTx::new(Box::new(LoopbackSink {
                conn,
                inbound: self.tx.clone(),
            })),
            rx,
        })
    }
}

struct TcpSink {
    w: BufWriter<TcpStream>,
}

impl FrameSink for TcpSink {
    fn send(&mut self, payload: &[u8]) -> io::Result<()> {
        write_frame(&mut self.w, payload)?;
        self.w.flush()
    }
}

impl Drop for TcpSink {
    fn drop(&mut self) {
        let _ = self.w.get_ref().shutdown(Shutdown::Both);
    }
}

fn read_loop(stream: TcpStream, mut deliver: impl FnMut(Vec<u8>) -> bool) {
    let mut r = BufReader::new(stream);
    loop {
        match read_frame(&mut r) {
            Ok(Some(frame)) => {
                if !deliver(frame) {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                debug!("connection closed: {e}");
                return;
            }
        }
    }
}

/// Connects to a master over TCP.
pub fn connect_tcp(addr: impl ToSocketAddrs) -> Result<Endpoint, ClusterError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let (tx, rx) = unbounded();
    std::thread::Builder::new()
        .name("tcp-reader".into())
        .spawn(move || read_loop(reader, |f| tx.send(f).is_ok()))?;
    Ok(Endpoint {
        tx: EndpointTx::new(Box::new(TcpSink {
            w: BufWriter::new(stream),
        })),
        rx,
    })
}

/// Accepts TCP connections and feeds their frames to the master loop.
pub struct TcpAcceptor {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TcpAcceptor {
    pub fn bind(addr: impl ToSocketAddrs, inbound: Sender<Inbound>) -> Result<Self, ClusterError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let s = stop.clone();
        let thread = std::thread::Builder::new()
            .name("tcp-accept".into())
            .spawn(move || accept_loop(listener, inbound, s))?;
        Ok(TcpAcceptor {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for TcpAcceptor {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, inbound: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut next: ConnId = 0;
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = next;
                next += 1;
                debug!("connection {conn} from {peer}");
                let opened = (|| -> io::Result<()> {
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    let reader = stream.try_clone()?;
                    let sink = TcpSink {
                        w: BufWriter::new(stream),
                    };
                    if inbound.send(Inbound::Opened(conn, Box::new(sink))).is_err() {
                        return Ok(());
                    }
                    let tx = inbound.clone();
                    std::thread::Builder::new()
                        .name(format!("tcp-conn-{conn}"))
                        .spawn(move || {
                            read_loop(reader, |f| tx.send(Inbound::Frame(conn, f)).is_ok());
                            let _ = tx.send(Inbound::Closed(conn));
                        })?;
                    Ok(())
                })();
                if let Err(e) = opened {
                    warn!("connection {conn}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(e) => {
                warn!("accept: {e}");
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
}
