//! Run reports, baseline comparison and analytics.

use serde::Serialize;
use thiserror::Error;

use super::check::{self_consistency_check, Violation};
use super::jsonl::ParsedMetrics;
use super::records::{Policy, Source, Summary};
use super::summary::makespan_ms;
use crate::scheduler::ThroughputModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline_config_hash: String,
    pub baseline_policy: Policy,
    pub baseline_makespan_ms: f64,
    pub candidate_makespan_ms: f64,
    /// baseline makespan / candidate makespan.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub workload_hash: String,
    pub source: Source,
    pub mode: String,
    pub policy: Policy,
    pub summary: Summary,
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("{0}: metrics file has no header line")]
    MissingHeader(&'static str),
    #[error("{0}: metrics file has no summary line (incomplete run?)")]
    MissingSummary(&'static str),
    #[error("workload hashes differ (baseline {baseline}, candidate {candidate}); runs are not comparable")]
    WorkloadMismatch { baseline: String, candidate: String },
    #[error("candidate makespan is zero")]
    ZeroMakespan,
}

impl RunReport {
    pub fn from_metrics(m: &ParsedMetrics, which: &'static str) -> Result<Self, ReportError> {
        let h = m.header.as_ref().ok_or(ReportError::MissingHeader(which))?;
        let s = m.summary.clone().ok_or(ReportError::MissingSummary(which))?;
        Ok(RunReport {
            config_hash: h.config_hash.clone(),
            workload_hash: h.workload_hash.clone(),
            source: h.source,
            mode: h.mode.clone(),
            policy: h.policy,
            summary: s,
            comparison: None,
        })
    }
}

/// Report of `candidate` with its speedup over `baseline`.
pub fn compare(baseline: &ParsedMetrics, candidate: &ParsedMetrics) -> Result<RunReport, ReportError> {
    let base = RunReport::from_metrics(baseline, "baseline")?;
    let mut cand = RunReport::from_metrics(candidate, "candidate")?;
    if base.workload_hash != cand.workload_hash {
        return Err(ReportError::WorkloadMismatch {
            baseline: base.workload_hash,
            candidate: cand.workload_hash,
        });
    }
    if !(cand.summary.makespan_ms > 0.0) {
        return Err(ReportError::ZeroMakespan);
    }
    cand.comparison = Some(Comparison {
        baseline_config_hash: base.config_hash,
        baseline_policy: base.policy,
        baseline_makespan_ms: base.summary.makespan_ms,
        candidate_makespan_ms: cand.summary.makespan_ms,
        speedup: base.summary.makespan_ms / cand.summary.makespan_ms,
    });
    Ok(cand)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub makespan_ms: f64,
    pub mu_plan: Option<f64>,
    pub mu_render: Option<f64>,
    pub lambda_theory: Option<f64>,
    pub lambda_base: Option<f64>,
    pub lambda_succ: f64,
    pub throughput_fps: f64,
    /// Measured frame throughput over λ_theory; at most 1 by the bottleneck law.
    pub throughput_over_theory: Option<f64>,
    /// λ_succ over λ_theory expressed in tasks/s.
    pub succ_over_theory: Option<f64>,
    /// T_total over T̂.
    pub total_over_estimate: Option<f64>,
    pub violations: Vec<String>,
}

/// Throughput analytics of a metrics file. The same path serves simulated
/// and real-time runs.
pub fn analyze(m: &ParsedMetrics) -> Analysis {
    let makespan = makespan_ms(&m.tasks, &m.events);
    let model = ThroughputModel::from_records(&m.tasks, makespan);
    let ratio = |a: f64, b: Option<f64>| b.filter(|b| *b > 0.0).map(|b| a / b);
    let violations = match self_consistency_check(m) {
        Ok(()) => Vec::new(),
        Err(v) => v.iter().map(describe).collect(),
    };
    Analysis {
        makespan_ms: makespan,
        mu_plan: model.plan.mu,
        mu_render: model.render.mu,
        lambda_theory: model.lambda_theory,
        lambda_base: model.lambda_base,
        lambda_succ: model.lambda_succ,
        throughput_fps: model.throughput_fps(),
        throughput_over_theory: ratio(model.throughput_fps(), model.lambda_theory),
        succ_over_theory: ratio(model.lambda_succ, model.lambda_theory_tasks()),
        total_over_estimate: ratio(makespan, model.t_hat_ms),
        violations,
    }
}

fn describe(v: &Violation) -> String {
    format!("{}: recorded {}, recomputed {}", v.field, v.recorded, v.recomputed)
}
