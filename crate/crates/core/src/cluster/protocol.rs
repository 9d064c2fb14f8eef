//! Master/worker protocol messages and their wire encoding.
//!
//! Every frame carries one envelope:
//!
//! | tag | type   | field                                   |
//! |-----|--------|-----------------------------------------|
//! | 1   | u64    | sender sequence number (strictly rising)|
//! | 2   | u64    | sender id (`MASTER_ID` for the master, `UNREGISTERED` before registration) |
//! | 3   | u64    | message kind (see [`Kind`])             |
//! | 4   | nested | message body                            |
//!
//! Body fields per kind:
//!
//! | kind | message      | fields |
//! |------|--------------|--------|
//! | 1    | Register     | 1 node_id (bytes), 2 role, 3 slot, 4 capacity_slots, 5 incarnation, 6 requested worker_id (optional) |
//! | 2    | Registered   | 1 worker_id |
//! | 3    | Heartbeat    | 1 worker_id, 2 in_flight, 3 completed |
//! | 4    | TaskRequest  | 1 worker_id |
//! | 5    | TaskGrant    | 1 task spec (nested), 2 attempt |
//! | 6    | NoTask       | 1 retry_after_ms |
//! | 7    | TaskDone     | 1 worker_id, 2 task_id, 3 attempt, 4 outcome, 5 stored record (bytes holding an encoded record, optional), 6 task record JSON (bytes, optional) |
//! | 8    | TaskAbort    | 1 worker_id, 2 task_id, 3 attempt, 4 reason (bytes) |
//! | 9    | Shutdown     | none |
//! | 10   | Rejected     | 1 reason (bytes) |
//!
//! Roles are 0 planner, 1 renderer, 2 fused; outcomes 0 completed, 1 pruned,
//! 2 lost. Unknown body tags are skipped.

use crate::codec::{CodecError, Encoder, Record};
use crate::metrics::{Outcome, TaskRecord};
use crate::model::wire::{decode_spec, encode_spec};
use crate::model::{decode_record, encode_record};
use crate::model::{StoredRecord, TaskId, TaskSpec, WorkerId, WorkerRole};

/// Sender id of the master.
pub const MASTER_ID: u64 = u64::MAX;
/// Sender id of a worker that has not registered yet.
pub const UNREGISTERED: u64 = u64::MAX - 1;

/// Upper bound on a grant frame; grants carry metadata only.
pub const GRANT_SIZE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Register = 1,
    Registered = 2,
    Heartbeat = 3,
    TaskRequest = 4,
    TaskGrant = 5,
    NoTask = 6,
    TaskDone = 7,
    TaskAbort = 8,
    Shutdown = 9,
    Rejected = 10,
}

impl Kind {
    fn from_u64(v: u64) -> Option<Kind> {
        use Kind::*;
        [
            Register,
            Registered,
            Heartbeat,
            TaskRequest,
            TaskGrant,
            NoTask,
            TaskDone,
            TaskAbort,
            Shutdown,
            Rejected,
        ]
        .into_iter()
        .find(|k| *k as u64 == v)
    }
}

/// What a worker announces about itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub node_id: String,
    pub role: WorkerRole,
    pub slot: u32,
    pub capacity_slots: u32,
    pub incarnation: u32,
    /// Asks for a specific id, e.g. after a master restart.
    pub worker_id: Option<WorkerId>,
}

impl Registration {
    pub fn new(node_id: impl Into<String>, role: WorkerRole, slot: u32, capacity_slots: u32) -> Self {
        Registration {
            node_id: node_id.into(),
            role,
            slot,
            capacity_slots,
            incarnation: 0,
            worker_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub worker: WorkerId,
    pub task_id: TaskId,
    pub attempt: u32,
    pub outcome: Outcome,
    pub stored: Option<StoredRecord>,
    pub record: Option<TaskRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Register(Registration),
    Registered {
        worker: WorkerId,
    },
    Heartbeat {
        worker: WorkerId,
        in_flight: u32,
        completed: u64,
    },
    TaskRequest {
        worker: WorkerId,
    },
    TaskGrant {
        spec: TaskSpec,
        attempt: u32,
    },
    NoTask {
        retry_after_ms: u64,
    },
    TaskDone(Box<Completion>),
    TaskAbort {
        worker: WorkerId,
        task_id: TaskId,
        attempt: u32,
        reason: String,
    },
    Shutdown,
    Rejected {
        reason: String,
    },
}

impl Message {
    pub fn kind(&self) -> Kind {
        match self {
            Message::Register(_) => Kind::Register,
            Message::Registered { .. } => Kind::Registered,
            Message::Heartbeat { .. } => Kind::Heartbeat,
            Message::TaskRequest { .. } => Kind::TaskRequest,
            Message::TaskGrant { .. } => Kind::TaskGrant,
            Message::NoTask { .. } => Kind::NoTask,
            Message::TaskDone(_) => Kind::TaskDone,
            Message::TaskAbort { .. } => Kind::TaskAbort,
            Message::Shutdown => Kind::Shutdown,
            Message::Rejected { .. } => Kind::Rejected,
        }
    }

    fn body(&self) -> Encoder {
        let mut e = Encoder::new();
        match self {
            Message::Register(r) => {
                e.str(1, &r.node_id)
                    .u64(2, u64::from(r.role.index()))
                    .u64(3, u64::from(r.slot))
                    .u64(4, u64::from(r.capacity_slots))
                    .u64(5, u64::from(r.incarnation));
                if let Some(id) = r.worker_id {
                    e.u64(6, u64::from(id));
                }
            }
            Message::Registered { worker } | Message::TaskRequest { worker } => {
                e.u64(1, u64::from(*worker));
            }
            Message::Heartbeat {
                worker,
                in_flight,
                completed,
            } => {
                e.u64(1, u64::from(*worker))
                    .u64(2, u64::from(*in_flight))
                    .u64(3, *completed);
            }
            Message::TaskGrant { spec, attempt } => {
                e.nested(1, &encode_spec(spec)).u64(2, u64::from(*attempt));
            }
            Message::NoTask { retry_after_ms } => {
                e.u64(1, *retry_after_ms);
            }
            Message::TaskDone(c) => {
                e.u64(1, u64::from(c.worker))
                    .u64(2, c.task_id)
                    .u64(3, u64::from(c.attempt))
                    .u64(4, outcome_code(c.outcome));
                if let Some(s) = &c.stored {
                    e.bytes(5, &encode_record(s));
                }
                if let Some(r) = &c.record {
                    e.bytes(6, &serde_json::to_vec(r).expect("task records serialize"));
                }
            }
            Message::TaskAbort {
                worker,
                task_id,
                attempt,
                reason,
            } => {
                e.u64(1, u64::from(*worker))
                    .u64(2, *task_id)
                    .u64(3, u64::from(*attempt))
                    .str(4, reason);
            }
            Message::Shutdown => {}
            Message::Rejected { reason } => {
                e.str(1, reason);
            }
        }
        e
    }

    fn decode_body(kind: Kind, r: &Record<'_>) -> Result<Message, CodecError> {
        Ok(match kind {
            Kind::Register => Message::Register(Registration {
                node_id: r.str(1)?.to_string(),
                role: role_of(r.u64(2)?)?,
                slot: r.u32(3)?,
                capacity_slots: r.u32(4)?,
                incarnation: r.u32(5)?,
                worker_id: match r.get(6) {
                    Some(_) => Some(r.u32(6)?),
                    None => None,
                },
            }),
            Kind::Registered => Message::Registered { worker: r.u32(1)? },
            Kind::Heartbeat => Message::Heartbeat {
                worker: r.u32(1)?,
                in_flight: r.u32(2)?,
                completed: r.u64(3)?,
            },
            Kind::TaskRequest => Message::TaskRequest { worker: r.u32(1)? },
            Kind::TaskGrant => Message::TaskGrant {
                spec: decode_spec(&r.nested(1)?)?,
                attempt: r.u32(2)?,
            },
            Kind::NoTask => Message::NoTask {
                retry_after_ms: r.u64(1)?,
            },
            Kind::TaskDone => Message::TaskDone(Box::new(Completion {
                worker: r.u32(1)?,
                task_id: r.u64(2)?,
                attempt: r.u32(3)?,
                outcome: outcome_of(r.u64(4)?)?,
                stored: match r.get(5) {
                    Some(_) => Some(decode_record(r.bytes(5)?)?),
                    None => None,
                },
                record: match r.get(6) {
                    Some(_) => Some(serde_json::from_slice(r.bytes(6)?).map_err(|e| CodecError::Invalid {
                        tag: 6,
                        reason: e.to_string(),
                    })?),
                    None => None,
                },
            })),
            Kind::TaskAbort => Message::TaskAbort {
                worker: r.u32(1)?,
                task_id: r.u64(2)?,
                attempt: r.u32(3)?,
                reason: r.str(4)?.to_string(),
            },
            Kind::Shutdown => Message::Shutdown,
            Kind::Rejected => Message::Rejected {
                reason: r.str(1)?.to_string(),
            },
        })
    }
}

fn role_of(v: u64) -> Result<WorkerRole, CodecError> {
    u8::try_from(v)
        .ok()
        .and_then(WorkerRole::from_index)
        .ok_or(CodecError::Invalid {
            tag: 2,
            reason: format!("unknown role {v}"),
        })
}

fn outcome_code(o: Outcome) -> u64 {
    match o {
        Outcome::Completed => 0,
        Outcome::Pruned => 1,
        Outcome::Lost => 2,
    }
}

fn outcome_of(v: u64) -> Result<Outcome, CodecError> {
    match v {
        0 => Ok(Outcome::Completed),
        1 => Ok(Outcome::Pruned),
        2 => Ok(Outcome::Lost),
        _ => Err(CodecError::Invalid {
            tag: 4,
            reason: format!("unknown outcome {v}"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: u64,
    pub sender: u64,
    pub msg: Message,
}

impl Envelope {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u64(1, self.seq)
            .u64(2, self.sender)
            .u64(3, self.msg.kind() as u64)
            .nested(4, &self.msg.body());
        e.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Envelope, CodecError> {
        let r = Record::parse(buf)?;
        let code = r.u64(3)?;
        let kind = Kind::from_u64(code).ok_or(CodecError::Invalid {
            tag: 3,
            reason: format!("unknown message kind {code}"),
        })?;
        Ok(Envelope {
            seq: r.u64(1)?,
            sender: r.u64(2)?,
            msg: Message::decode_body(kind, &r.nested(4)?)?,
        })
    }
}
