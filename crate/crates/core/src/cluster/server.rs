//! The master's event loop.

use std::collections::HashMap;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};
use log::{debug, info, warn};

use super::master::{Liveness, Master};
use super::protocol::{Envelope, Message, MASTER_ID};
use super::transport::{ConnId, FrameSink, Inbound};
use super::ClusterError;
use crate::clock::RunClock;
use crate::model::WorkerId;
use crate::Micros;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Liveness poll period.
    pub poll: Duration,
    /// How long to keep answering after every task is resolved, so workers
    /// can collect their `Shutdown`.
    pub linger: Duration,
    /// Give up after this long without finishing.
    pub deadline: Option<Duration>,
}

impl ServeOptions {
    pub fn for_master(master: &Master) -> Self {
        let hb = master.timeouts().heartbeat_interval_ms.max(1);
        ServeOptions {
            poll: Duration::from_millis((hb / 4).max(5)),
            linger: Duration::from_millis((2 * hb).max(200)),
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServeStats {
    pub frames_in: u64,
    pub frames_out: u64,
    pub decode_errors: u64,
    pub finished_at_us: Option<Micros>,
}

struct Conn {
    sink: Box<dyn FrameSink>,
    seq: u64,
}

struct Loop<'a> {
    master: &'a mut Master,
    clock: RunClock,
    conns: HashMap<ConnId, Conn>,
    route: HashMap<WorkerId, ConnId>,
    stats: ServeStats,
}

impl Loop<'_> {
    fn send(&mut self, conn: ConnId, msg: Message) {
        let Some(c) = self.conns.get_mut(&conn) else { return };
        c.seq += 1;
        let bytes = Envelope {
            seq: c.seq,
            sender: MASTER_ID,
            msg,
        }
        .encode();
        match c.sink.send(&bytes) {
            Ok(()) => {
                self.stats.frames_out += 1;
                self.master.note_egress(bytes.len() + 4);
            }
            Err(e) => {
                debug!("connection {conn}: send failed: {e}");
                self.conns.remove(&conn);
            }
        }
    }

    fn handle(&mut self, ev: Inbound) {
        let now = self.clock.now_us();
        match ev {
            Inbound::Opened(conn, sink) => {
                self.conns.insert(conn, Conn { sink, seq: 0 });
            }
            Inbound::Closed(conn) => {
                self.conns.remove(&conn);
                self.route.retain(|_, c| *c != conn);
            }
            Inbound::Frame(conn, bytes) => {
                self.stats.frames_in += 1;
                match Envelope::decode(&bytes) {
                    Ok(env) => self.message(conn, env, now),
                    Err(e) => {
                        self.stats.decode_errors += 1;
                        warn!("connection {conn}: undecodable frame: {e}");
                    }
                }
            }
        }
    }

    fn message(&mut self, conn: ConnId, env: Envelope, now: Micros) {
        match env.msg {
            Message::Register(reg) => match self.master.register(&reg, now) {
                Ok(id) => {
                    self.route.insert(id, conn);
                    self.send(conn, Message::Registered { worker: id });
                }
                Err(e) => self.send(conn, Message::Rejected { reason: e.to_string() }),
            },
            Message::Heartbeat { worker, .. } => {
                if let Err(e) = self.master.heartbeat(worker, env.seq, now) {
                    debug!("{e}");
                }
            }
            Message::TaskRequest { worker } => {
                self.route.insert(worker, conn);
                match self.master.request(worker) {
                    Ok(()) => {}
                    Err(ClusterError::WorkerNotAlive {
                        state: Liveness::Suspect,
                        ..
                    }) => {
                        let retry = self.master.retry_after_ms();
                        self.send(conn, Message::NoTask { retry_after_ms: retry });
                    }
                    Err(e) => self.send(conn, Message::Rejected { reason: e.to_string() }),
                }
            }
            Message::TaskDone(c) => {
                self.master.complete(*c, now);
            }
            Message::TaskAbort {
                worker,
                task_id,
                reason,
                ..
            } => {
                self.master.abort(worker, task_id, &reason, now);
            }
            other => debug!("connection {conn}: ignoring {:?}", other.kind()),
        }
    }

    fn dispatch(&mut self) {
        let now = self.clock.now_us();
        let retry = self.master.retry_after_ms();
        for (worker, reply) in self.master.dispatch(now) {
            if let Some(&conn) = self.route.get(&worker) {
                self.send(conn, reply.into_message(retry));
            }
        }
    }
}

/// Runs `master` until every task is resolved and the workers have left (or
/// the linger period passed). Messages from all connections are applied one
/// at a time, in per-connection order.
pub fn serve(
    master: &mut Master,
    inbound: &Receiver<Inbound>,
    clock: RunClock,
    opts: &ServeOptions,
) -> Result<ServeStats, ClusterError> {
    let poll_us = opts.poll.as_micros().max(1) as Micros;
    let mut lp = Loop {
        master,
        clock,
        conns: HashMap::new(),
        route: HashMap::new(),
        stats: ServeStats::default(),
    };
    let mut next_poll = clock.now_us() + poll_us;
    let mut connected = true;
    loop {
        let now = clock.now_us();
        if let Some(d) = opts.deadline {
            if now > d.as_micros() as Micros {
                return Err(ClusterError::Timeout(d));
            }
        }
        if now >= next_poll {
            next_poll = now + poll_us;
            let requeued = lp.master.poll_liveness(now);
            if !requeued.is_empty() {
                info!("requeued {} tasks of dead workers", requeued.len());
            }
        }
        if lp.master.is_finished() {
            let at = *lp.stats.finished_at_us.get_or_insert(now);
            let lingered = now.saturating_sub(at) >= opts.linger.as_micros() as Micros;
            if lp.conns.is_empty() || lingered || !connected {
                break;
            }
        }
        if !connected {
            std::thread::sleep(Duration::from_micros(next_poll.saturating_sub(now).min(poll_us)));
            lp.dispatch();
            continue;
        }
        match inbound.recv_timeout(Duration::from_micros(next_poll.saturating_sub(now).max(1))) {
            Ok(ev) => {
                lp.handle(ev);
                while let Ok(ev) = inbound.try_recv() {
                    lp.handle(ev);
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => connected = false,
        }
        lp.dispatch();
    }
    for conn in lp.conns.keys().copied().collect::<Vec<_>>() {
        lp.send(conn, Message::Shutdown);
    }
    Ok(lp.stats)
}
