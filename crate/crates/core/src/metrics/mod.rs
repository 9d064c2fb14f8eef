//! Run metrics: per-task records, run events, the derived summary, and
//! their JSON-lines serialization.

mod check;
mod jsonl;
mod records;
mod report;
mod summary;

use std::path::Path;

pub use check::{compare_summaries, self_consistency_check, Violation, TOLERANCE};
pub use jsonl::{LineError, MetricsWriter, ParsedMetrics};
pub use records::{
    Line, Outcome, Policy, ReallocDecision, RunEvent, RunHeader, Source, SpanRecord, Summary, TaskRecord,
};
pub use report::{analyze, compare, Analysis, Comparison, ReportError, RunReport};
pub use summary::{compute_summary, makespan_ms};

use crate::scheduler::ThroughputModel;

/// Everything a run produced. Tasks are in completion order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub header: RunHeader,
    pub tasks: Vec<TaskRecord>,
    pub events: Vec<RunEvent>,
    pub summary: Summary,
}

impl RunMetrics {
    pub fn new(header: RunHeader, tasks: Vec<TaskRecord>, events: Vec<RunEvent>) -> Self {
        let summary = compute_summary(&tasks, &events);
        RunMetrics {
            header,
            tasks,
            events,
            summary,
        }
    }

    pub fn makespan_ms(&self) -> f64 {
        self.summary.makespan_ms
    }

    pub fn count(&self, outcome: Outcome) -> u64 {
        self.tasks.iter().filter(|t| t.outcome == outcome).count() as u64
    }

    pub fn throughput_model(&self) -> ThroughputModel {
        ThroughputModel::from_records(&self.tasks, self.summary.makespan_ms)
    }

    pub fn events_named(&self, name: &str) -> Vec<&RunEvent> {
        self.events.iter().filter(|e| e.name() == name).collect()
    }

    pub fn lines(&self) -> Vec<Line> {
        let mut out = Vec::with_capacity(self.tasks.len() + self.events.len() + 2);
        out.push(Line::Header(self.header.clone()));
        out.extend(self.tasks.iter().cloned().map(Line::Task));
        out.extend(self.events.iter().cloned().map(Line::Event));
        out.push(Line::Summary(self.summary.clone()));
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = MetricsWriter::create(path)?;
        for line in self.lines() {
            w.write(&line)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for line in self.lines() {
            s.push_str(&serde_json::to_string(&line).expect("metrics serialize"));
            s.push('\n');
        }
        s
    }

    pub fn parsed(&self) -> ParsedMetrics {
        ParsedMetrics::parse(&self.to_jsonl())
    }
}
