//! Recomputes a metrics file's summary from its raw lines.

use std::collections::HashSet;

use super::jsonl::ParsedMetrics;
use super::records::Summary;
use super::summary::compute_summary;

/// Relative tolerance of recomputed fields.
pub const TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub recorded: String,
    pub recomputed: String,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOLERANCE * a.abs().max(b.abs()) + 1e-9
}

fn cmp_f(out: &mut Vec<Violation>, field: &str, rec: f64, re: f64) {
    if !close(rec, re) {
        out.push(Violation {
            field: field.into(),
            recorded: rec.to_string(),
            recomputed: re.to_string(),
        });
    }
}

fn cmp_opt(out: &mut Vec<Violation>, field: &str, rec: Option<f64>, re: Option<f64>) {
    let ok = match (rec, re) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    };
    if !ok {
        out.push(Violation {
            field: field.into(),
            recorded: format!("{rec:?}"),
            recomputed: format!("{re:?}"),
        });
    }
}

fn cmp_u(out: &mut Vec<Violation>, field: &str, rec: u64, re: u64) {
    if rec != re {
        out.push(Violation {
            field: field.into(),
            recorded: rec.to_string(),
            recomputed: re.to_string(),
        });
    }
}

pub fn compare_summaries(recorded: &Summary, recomputed: &Summary) -> Vec<Violation> {
    let mut v = Vec::new();
    let (a, b) = (recorded, recomputed);
    cmp_f(&mut v, "makespan_ms", a.makespan_ms, b.makespan_ms);
    cmp_u(&mut v, "completed", a.completed, b.completed);
    cmp_u(&mut v, "pruned", a.pruned, b.pruned);
    cmp_u(&mut v, "lost", a.lost, b.lost);
    cmp_f(&mut v, "n_bar_plan", a.n_bar_plan, b.n_bar_plan);
    cmp_f(&mut v, "n_bar_render", a.n_bar_render, b.n_bar_render);
    cmp_f(&mut v, "ell_plan_ms", a.ell_plan_ms, b.ell_plan_ms);
    cmp_f(&mut v, "ell_render_ms", a.ell_render_ms, b.ell_render_ms);
    cmp_opt(&mut v, "mu_plan", a.mu_plan, b.mu_plan);
    cmp_opt(&mut v, "mu_render", a.mu_render, b.mu_render);
    cmp_opt(&mut v, "lambda_theory", a.lambda_theory, b.lambda_theory);
    cmp_opt(&mut v, "lambda_base", a.lambda_base, b.lambda_base);
    cmp_f(&mut v, "lambda_succ", a.lambda_succ, b.lambda_succ);
    cmp_f(&mut v, "throughput_fps", a.throughput_fps, b.throughput_fps);
    cmp_u(&mut v, "successes", a.successes, b.successes);
    cmp_u(&mut v, "rendered_frames", a.rendered_frames, b.rendered_frames);
    cmp_f(&mut v, "frames_per_render", a.frames_per_render, b.frames_per_render);
    cmp_opt(&mut v, "t_hat_ms", a.t_hat_ms, b.t_hat_ms);
    v
}

/// Passes iff the file is complete, its task ids are unique, its outcome
/// counts cover every task of the header, and every summary field matches
/// its recomputation within [`TOLERANCE`].
pub fn self_consistency_check(m: &ParsedMetrics) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    for e in &m.errors {
        v.push(Violation {
            field: format!("line {}", e.line),
            recorded: e.message.clone(),
            recomputed: "parseable line".into(),
        });
    }
    let mut seen = HashSet::new();
    for t in &m.tasks {
        if !seen.insert(t.task_id) {
            v.push(Violation {
                field: format!("task {}", t.task_id),
                recorded: "duplicate task line".into(),
                recomputed: "one line per task".into(),
            });
        }
    }
    let recomputed = compute_summary(&m.tasks, &m.events);
    match (&m.header, &m.summary) {
        (Some(h), Some(s)) => {
            let total = s.completed + s.pruned + s.lost;
            if total != h.task_count {
                v.push(Violation {
                    field: "completed+pruned+lost".into(),
                    recorded: total.to_string(),
                    recomputed: h.task_count.to_string(),
                });
            }
            v.extend(compare_summaries(s, &recomputed));
        }
        (h, s) => {
            if h.is_none() {
                v.push(Violation {
                    field: "header".into(),
                    recorded: "missing".into(),
                    recomputed: "present".into(),
                });
            }
            if s.is_none() {
                v.push(Violation {
                    field: "summary".into(),
                    recorded: "missing".into(),
                    recomputed: "present".into(),
                });
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
