//! Master/worker global load balancing.
//!
//! Workers register with the master, report liveness by heartbeat and pull
//! tasks with `TaskRequest`. The master grants the next pending task to the
//! least relatively loaded requester. Grants carry task metadata only;
//! workers load scene contexts lazily from a shared store. Workers silent
//! past the dead timeout have their tasks requeued.
//!
//! The master assigns whole tasks to worker slots. Reallocating planner and
//! renderer roles inside a node is the executor's concern.

mod master;
mod node;
pub mod protocol;
mod server;
mod store;
mod transport;
mod virtual_time;

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

pub use master::{
    verify_single_ownership, AssignmentStatus, Dispatch, Liveness, LogEntry, LogKind, Master, Reply, TaskAssignment,
    WorkerDescriptor,
};
pub use node::{run_node, Connector, Node, NodeOptions, NodeReport};
pub use protocol::{Completion, Envelope, Message, Registration, GRANT_SIZE_CAP};
pub use server::{serve, ServeOptions, ServeStats};
pub use store::{ContextStore, SHARED_DIR_ENV};
pub use transport::{connect_tcp, ConnId, Endpoint, EndpointTx, FrameSink, Inbound, Loopback, TcpAcceptor};
pub use virtual_time::{config_tasks, pool_tasks, run_virtual, VirtualCluster, VirtualReport, VirtualTask};

use crate::clock::RunClock;
use crate::codec::CodecError;
use crate::metrics::{Policy, RunHeader, RunMetrics, Source};
use crate::model::{StageSet, SyntheticStages, ValidatedConfig, WorkerId};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("worker id {0} is already registered with a different descriptor")]
    DuplicateWorkerId(WorkerId),
    #[error("unknown worker {0}")]
    UnknownWorker(WorkerId),
    #[error("worker {worker} is {state:?}")]
    WorkerNotAlive { worker: WorkerId, state: Liveness },
    #[error("context `{0}` not found in the shared store")]
    ContextNotFound(String),
    #[error("rejected by master: {0}")]
    Rejected(String),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("connection closed")]
    Disconnected,
    #[error("invalid cluster setup: {0}")]
    Config(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PartialEq for ClusterError {
    fn eq(&self, other: &Self) -> bool {
        use ClusterError::*;
        match (self, other) {
            (DuplicateWorkerId(a), DuplicateWorkerId(b)) | (UnknownWorker(a), UnknownWorker(b)) => a == b,
            (WorkerNotAlive { worker: a, state: s }, WorkerNotAlive { worker: b, state: t }) => a == b && s == t,
            (ContextNotFound(a), ContextNotFound(b)) | (Rejected(a), Rejected(b)) | (Config(a), Config(b)) => a == b,
            (Timeout(a), Timeout(b)) => a == b,
            (Disconnected, Disconnected) => true,
            _ => false,
        }
    }
}

/// Master for every task of `cfg`; round-robin unless `cfg.dynload`.
pub fn master_for(cfg: &ValidatedConfig, workers: u32) -> Master {
    let dispatch = if cfg.dynload {
        Dispatch::LeastLoaded
    } else {
        Dispatch::RoundRobin { workers }
    };
    Master::new(cfg.tasks(), cfg.cluster.clone(), dispatch)
}

/// Metrics of a finished cluster run, on the master's clock.
pub fn cluster_metrics(cfg: &ValidatedConfig, master: &Master) -> RunMetrics {
    let policy = if cfg.dynload {
        Policy::DynamicPipeline
    } else {
        Policy::StaticPipeline
    };
    let header = RunHeader::for_config(cfg, Source::Cluster, policy);
    let mut events = master.events().to_vec();
    events.sort_by(|a, b| a.at_ms().total_cmp(&b.at_ms()));
    RunMetrics::new(header, master.task_records(), events)
}

/// A master serving loopback connections on its own thread.
pub struct LocalMaster {
    net: Loopback,
    thread: JoinHandle<(Master, Result<ServeStats, ClusterError>)>,
}

impl LocalMaster {
    pub fn start(mut master: Master, opts: ServeOptions) -> std::io::Result<Self> {
        let (net, inbound) = Loopback::new();
        let thread = std::thread::Builder::new().name("master".into()).spawn(move || {
            let r = serve(&mut master, &inbound, RunClock::start(), &opts);
            (master, r)
        })?;
        Ok(LocalMaster { net, thread })
    }

    pub fn connector(&self) -> Connector {
        let net = self.net.clone();
        Arc::new(move || net.connect())
    }

    pub fn join(self) -> (Master, Result<ServeStats, ClusterError>) {
        let LocalMaster { net, thread } = self;
        drop(net);
        thread.join().expect("master thread panicked")
    }
}

/// A master bound to a TCP address, not yet serving.
pub struct TcpMaster {
    master: Master,
    acceptor: TcpAcceptor,
    inbound: crossbeam_channel::Receiver<Inbound>,
    opts: ServeOptions,
}

impl TcpMaster {
    pub fn bind(master: Master, addr: impl std::net::ToSocketAddrs, opts: ServeOptions) -> Result<Self, ClusterError> {
        let (tx, inbound) = crossbeam_channel::unbounded();
        let acceptor = TcpAcceptor::bind(addr, tx)?;
        Ok(TcpMaster {
            master,
            acceptor,
            inbound,
            opts,
        })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.acceptor.local_addr()
    }

    /// Serves until every task is resolved.
    pub fn run(self) -> (Master, Result<ServeStats, ClusterError>) {
        let TcpMaster {
            mut master,
            acceptor,
            inbound,
            opts,
        } = self;
        let r = serve(&mut master, &inbound, RunClock::start(), &opts);
        drop(acceptor);
        (master, r)
    }
}

/// Runs `cfg` on `nodes` in-process nodes against a loopback master.
pub fn run_local(
    cfg: Arc<ValidatedConfig>,
    nodes: &[NodeOptions],
    opts: ServeOptions,
) -> Result<(Master, Vec<NodeReport>), ClusterError> {
    let slots = nodes.iter().map(|n| n.slots).sum();
    let local = LocalMaster::start(master_for(&cfg, slots), opts)?;
    let stages: Arc<dyn StageSet> = Arc::new(SyntheticStages::new(cfg.clone()));
    let started: Vec<Node> = nodes
        .iter()
        .map(|n| Node::start(cfg.clone(), stages.clone(), n.clone(), local.connector()))
        .collect::<Result<_, _>>()?;
    let reports = started.into_iter().map(Node::wait).collect();
    let (master, r) = local.join();
    r?;
    Ok((master, reports))
}

#[cfg(test)]
mod tests;
