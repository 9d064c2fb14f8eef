use std::collections::BTreeMap;

use super::records::{Outcome, RunEvent, Summary, TaskRecord};
use crate::scheduler::ThroughputModel;

/// End of the run: the last span end or flush, whichever is later.
pub fn makespan_ms(tasks: &[TaskRecord], events: &[RunEvent]) -> f64 {
    let spans = tasks
        .iter()
        .flat_map(|t| t.spans.iter())
        .map(|s| s.end_ms)
        .fold(0.0, f64::max);
    let flushes = events
        .iter()
        .filter(|e| matches!(e, RunEvent::Flush { .. }))
        .map(|e| e.at_ms())
        .fold(0.0, f64::max);
    spans.max(flushes)
}

pub fn compute_summary(tasks: &[TaskRecord], events: &[RunEvent]) -> Summary {
    let makespan = makespan_ms(tasks, events);
    let mut counts: BTreeMap<Outcome, u64> = BTreeMap::new();
    for t in tasks {
        *counts.entry(t.outcome).or_default() += 1;
    }
    let m = ThroughputModel::from_records(tasks, makespan);
    Summary {
        makespan_ms: makespan,
        completed: counts.get(&Outcome::Completed).copied().unwrap_or(0),
        pruned: counts.get(&Outcome::Pruned).copied().unwrap_or(0),
        lost: counts.get(&Outcome::Lost).copied().unwrap_or(0),
        n_bar_plan: m.plan.n_bar,
        n_bar_render: m.render.n_bar,
        ell_plan_ms: m.plan.ell_ms,
        ell_render_ms: m.render.ell_ms,
        mu_plan: m.plan.mu,
        mu_render: m.render.mu,
        lambda_theory: m.lambda_theory,
        lambda_base: m.lambda_base,
        lambda_succ: m.lambda_succ,
        throughput_fps: m.throughput_fps(),
        successes: m.successes(),
        rendered_frames: m.rendered_frames,
        frames_per_render: m.frames_per_render,
        t_hat_ms: m.t_hat_ms,
    }
}
