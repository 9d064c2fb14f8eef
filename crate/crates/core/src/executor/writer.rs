//! Asynchronous batch writer: accepts finished renders, batches them, and
//! persists each batch on a small pool of I/O threads.
//!
//! A dispatcher thread owns the batching state and the metrics stream.
//! Submissions are batched until `batch_size` records are pending, the
//! oldest pending record is `flush_interval` old, or every expected task is
//! accounted for. Records become durable when their batch lands in the
//! output log, which is also when the `flush` event is emitted.

use std::collections::HashSet;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use log::warn;

use super::pace::RealPace;
use crate::clock::RunClock;
use crate::metrics::{Line, MetricsWriter, Outcome, RunEvent, SpanRecord, TaskRecord};
use crate::model::{
    ObservationBatch, OutputLog, StageKind, StageSet, StoredRecord, TaskId, TaskSpec, TrajectorySequence, WorkerId,
};
use crate::sim::IO_WORKER_BASE;
use crate::supervisor::UnitControl;
use crate::{us_to_ms, Micros};

/// A rendered task waiting to be stored.
#[derive(Debug, Clone)]
pub struct StoreJob {
    pub spec: TaskSpec,
    pub sequence: TrajectorySequence,
    pub obs: ObservationBatch,
    pub record: TaskRecord,
}

type Stored = (TaskRecord, Option<StoredRecord>);

enum Msg {
    Submit(StoreJob),
    Done(TaskRecord, Option<StoredRecord>),
    Event(RunEvent),
    BatchDone {
        batch: u64,
        at_us: Micros,
        results: Vec<Stored>,
    },
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriterParams {
    pub batch_size: usize,
    pub flush_interval_us: Micros,
    pub io_workers: u32,
    /// Tasks the run will account for; the last one triggers a final flush.
    pub expected: usize,
}

/// Cheap sending side of the writer.
#[derive(Clone)]
pub struct WriterHandle {
    tx: Sender<Msg>,
}

impl WriterHandle {
    /// Hands a rendered task over for asynchronous storage.
    pub fn submit(&self, job: StoreJob) {
        let _ = self.tx.send(Msg::Submit(job));
    }

    /// Reports a task resolved without the writer: pruned, lost, or stored
    /// synchronously (`stored` set).
    pub fn done(&self, record: TaskRecord, stored: Option<StoredRecord>) {
        let _ = self.tx.send(Msg::Done(record, stored));
    }

    pub fn event(&self, event: RunEvent) {
        let _ = self.tx.send(Msg::Event(event));
    }
}

#[derive(Debug)]
pub struct WriterReport {
    /// Task records in the order they were resolved.
    pub tasks: Vec<TaskRecord>,
    pub events: Vec<RunEvent>,
    pub metrics: Option<MetricsWriter>,
    pub batches: u64,
    /// Reports dropped because the task was already resolved.
    pub duplicates: u64,
    pub error: Option<String>,
}

pub struct BatchWriter {
    tx: Sender<Msg>,
    thread: JoinHandle<WriterReport>,
}

impl BatchWriter {
    pub fn start(
        params: WriterParams,
        stages: Arc<dyn StageSet>,
        clock: RunClock,
        output: Arc<OutputLog>,
        metrics: Option<MetricsWriter>,
    ) -> std::io::Result<Self> {
        let (tx, rx) = unbounded();
        let (io_tx, io_rx) = unbounded::<(u64, Vec<StoreJob>)>();
        for i in 0..params.io_workers.max(1) {
            let rx = io_rx.clone();
            let back = tx.clone();
            let stages = stages.clone();
            std::thread::Builder::new()
                .name(format!("io-{i}"))
                .spawn(move || io_worker(IO_WORKER_BASE + i, rx, back, stages, clock))?;
        }
        let state = Dispatcher {
            params,
            clock,
            output,
            metrics,
            io_tx: Some(io_tx),
            pending: Vec::new(),
            pending_since: None,
            in_io: 0,
            batches: 0,
            resolved: HashSet::new(),
            tasks: Vec::new(),
            events: Vec::new(),
            duplicates: 0,
            error: None,
        };
        let thread = std::thread::Builder::new()
            .name("writer".into())
            .spawn(move || state.run(rx))?;
        Ok(BatchWriter { tx, thread })
    }

    pub fn handle(&self) -> WriterHandle {
        WriterHandle { tx: self.tx.clone() }
    }

    /// Flushes what is pending, waits for every batch to land and returns
    /// the records.
    pub fn finish(self) -> WriterReport {
        let _ = self.tx.send(Msg::Finish);
        self.thread.join().expect("writer thread panicked")
    }
}

fn io_worker(
    worker: WorkerId,
    rx: Receiver<(u64, Vec<StoreJob>)>,
    back: Sender<Msg>,
    stages: Arc<dyn StageSet>,
    clock: RunClock,
) {
    let ctl = UnitControl::new();
    for (batch, jobs) in rx {
        let mut results = Vec::with_capacity(jobs.len());
        for mut job in jobs {
            let mut pace = RealPace::new(ctl.clone(), clock);
            let start = clock.now_us();
            let res = stages.store(&job.spec, &job.sequence, &job.obs, &mut pace);
            let end = clock.now_us();
            if pace.last_requested_us() > 0 {
                job.record
                    .spans
                    .push(SpanRecord::new(StageKind::Store, worker, start, end));
                job.record.latency_ms.insert(StageKind::Store, us_to_ms(end - start));
            }
            match res {
                Ok(stored) => {
                    job.record.outcome = Outcome::Completed;
                    results.push((job.record, Some(stored)));
                }
                Err(e) => {
                    warn!("store: {e}");
                    job.record.outcome = Outcome::Lost;
                    results.push((job.record, None));
                }
            }
        }
        let at_us = clock.now_us();
        if back.send(Msg::BatchDone { batch, at_us, results }).is_err() {
            return;
        }
    }
}

struct Dispatcher {
    params: WriterParams,
    clock: RunClock,
    output: Arc<OutputLog>,
    metrics: Option<MetricsWriter>,
    io_tx: Option<Sender<(u64, Vec<StoreJob>)>>,
    pending: Vec<StoreJob>,
    pending_since: Option<Micros>,
    in_io: usize,
    batches: u64,
    resolved: HashSet<TaskId>,
    tasks: Vec<TaskRecord>,
    events: Vec<RunEvent>,
    duplicates: u64,
    error: Option<String>,
}

impl Dispatcher {
    fn run(mut self, rx: Receiver<Msg>) -> WriterReport {
        let mut finishing = false;
        loop {
            if finishing && self.pending.is_empty() && self.in_io == 0 {
                break;
            }
            let msg = match self.pending_since {
                Some(t) if !finishing => {
                    let due = t + self.params.flush_interval_us;
                    let now = self.clock.now_us();
                    if now >= due {
                        self.flush();
                        continue;
                    }
                    match rx.recv_timeout(Duration::from_micros(due - now)) {
                        Ok(m) => m,
                        Err(RecvTimeoutError::Timeout) => continue,
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
                _ => match rx.recv() {
                    Ok(m) => m,
                    Err(_) => break,
                },
            };
            match msg {
                Msg::Submit(job) => {
                    if !self.resolved.insert(job.spec.task_id) {
                        self.duplicates += 1;
                        continue;
                    }
                    if self.pending.is_empty() {
                        self.pending_since = Some(self.clock.now_us());
                    }
                    self.pending.push(job);
                    if self.pending.len() >= self.params.batch_size {
                        self.flush();
                    }
                }
                Msg::Done(rec, stored) => {
                    if !self.resolved.insert(rec.task_id) {
                        self.duplicates += 1;
                        continue;
                    }
                    if let Some(s) = stored {
                        if let Err(e) = self.output.append(&s) {
                            self.fail(format!("output log: {e}"));
                        }
                    }
                    self.record(rec);
                }
                Msg::Event(e) => self.event(e),
                Msg::BatchDone { batch, at_us, results } => {
                    self.in_io -= 1;
                    let stored: Vec<StoredRecord> = results.iter().filter_map(|(_, s)| s.clone()).collect();
                    if let Err(e) = self.output.append_batch(&stored) {
                        self.fail(format!("output log: {e}"));
                    }
                    self.event(RunEvent::Flush {
                        at_ms: us_to_ms(at_us),
                        batch,
                        records: results.len() as u32,
                    });
                    for (rec, _) in results {
                        self.record(rec);
                    }
                }
                Msg::Finish => finishing = true,
            }
            if !self.pending.is_empty() && (finishing || self.resolved.len() >= self.params.expected) {
                self.flush();
            }
        }
        self.io_tx = None;
        WriterReport {
            tasks: self.tasks,
            events: self.events,
            metrics: self.metrics,
            batches: self.batches,
            duplicates: self.duplicates,
            error: self.error,
        }
    }

    fn flush(&mut self) {
        self.pending_since = None;
        if self.pending.is_empty() {
            return;
        }
        self.batches += 1;
        self.in_io += 1;
        let batch = std::mem::take(&mut self.pending);
        let tx = self.io_tx.as_ref().expect("io pool alive");
        tx.send((self.batches, batch)).expect("io pool alive");
    }

    fn write(&mut self, line: Line) {
        if let Some(m) = &mut self.metrics {
            if let Err(e) = m.write(&line) {
                self.error.get_or_insert(format!("metrics: {e}"));
            }
        }
    }

    fn fail(&mut self, msg: String) {
        warn!("{msg}");
        self.error.get_or_insert(msg);
    }

    fn record(&mut self, rec: TaskRecord) {
        self.write(Line::Task(rec.clone()));
        self.tasks.push(rec);
    }

    fn event(&mut self, e: RunEvent) {
        self.write(Line::Event(e.clone()));
        self.events.push(e);
    }
}
