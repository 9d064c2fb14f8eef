//! Stage-throughput analytics.
//!
//! Per-stage concurrency N_s(t) is a right-continuous step function built
//! from the stage's execution spans. N̄_s averages it over the stage's own
//! window, from its first start to its last end. μ_s = N̄_s / ℓ_s in frames
//! per second with ℓ_s the mean per-frame latency.

use thiserror::Error;

use crate::metrics::{SpanRecord, TaskRecord};
use crate::model::StageKind;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ThroughputError {
    #[error("latency must be positive, got {0}")]
    NonpositiveLatency(f64),
    #[error("window must be positive, got {0}")]
    NonpositiveWindow(f64),
}

/// A right-continuous step function: `value(t) = n_i` for
/// `t_i <= t < t_{i+1}`, and 0 before the first point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepTrace {
    points: Vec<(f64, f64)>,
}

impl StepTrace {
    /// From `(time, value)` change points; times must be nondecreasing.
    /// Of several points at one time the last wins.
    pub fn from_points(points: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (t, n) in points {
            match out.last_mut() {
                Some(last) if last.0 == t => last.1 = n,
                Some(last) => {
                    assert!(t > last.0, "trace times must be nondecreasing");
                    out.push((t, n));
                }
                None => out.push((t, n)),
            }
        }
        StepTrace { points: out }
    }

    /// Concurrency of a set of intervals.
    pub fn from_intervals<I: IntoIterator<Item = (f64, f64)>>(intervals: I) -> Self {
        let mut edges: Vec<(f64, i64)> = Vec::new();
        for (s, e) in intervals {
            if e > s {
                edges.push((s, 1));
                edges.push((e, -1));
            }
        }
        edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut n = 0i64;
        let mut pts = Vec::with_capacity(edges.len());
        for (t, d) in edges {
            n += d;
            pts.push((t, n as f64));
        }
        Self::from_points(pts)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self.points.partition_point(|p| p.0 <= t) {
            0 => 0.0,
            i => self.points[i - 1].1,
        }
    }

    /// Exact integral over `[t0, t1]`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (i, &(t, n)) in self.points.iter().enumerate() {
            let next = self.points.get(i + 1).map_or(f64::INFINITY, |p| p.0);
            let lo = t.max(t0);
            let hi = next.min(t1);
            if hi > lo {
                acc += n * (hi - lo);
            }
        }
        acc
    }

    /// Time average over `[t0, t1]`.
    pub fn mean(&self, t0: f64, t1: f64) -> Result<f64, ThroughputError> {
        if !(t1 > t0) {
            return Err(ThroughputError::NonpositiveWindow(t1 - t0));
        }
        Ok(self.integral(t0, t1) / (t1 - t0))
    }

    pub fn max(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    /// First time the value becomes nonzero and last time it drops to zero.
    pub fn active_window(&self) -> Option<(f64, f64)> {
        let start = self.points.iter().find(|p| p.1 > 0.0)?.0;
        let end = self.points.iter().rev().find(|p| p.1 == 0.0).map_or(start, |p| p.0);
        Some((start, end))
    }
}

/// μ_s = N̄_s / ℓ_s in frames/s, with N̄_s the average of `trace` over
/// `[0, t_ms]` and `ell_ms` the per-frame latency.
pub fn effective_throughput(ell_ms: f64, trace: &StepTrace, t_ms: f64) -> Result<f64, ThroughputError> {
    if !(ell_ms > 0.0) {
        return Err(ThroughputError::NonpositiveLatency(ell_ms));
    }
    Ok(trace.mean(0.0, t_ms)? / (ell_ms / 1000.0))
}

/// λ_theory = min(μ_plan, μ_render).
pub fn theoretical_max(mu_plan: f64, mu_render: f64) -> Result<f64, ThroughputError> {
    for mu in [mu_plan, mu_render] {
        if !(mu > 0.0) {
            return Err(ThroughputError::NonpositiveLatency(mu));
        }
    }
    Ok(mu_plan.min(mu_render))
}

/// λ_base = 1 / Σ ℓ_i in tasks/s, with per-task stage latencies in ms.
pub fn baseline_throughput(ells_ms: &[f64]) -> Result<f64, ThroughputError> {
    let sum: f64 = ells_ms.iter().sum();
    if ells_ms.iter().any(|l| *l < 0.0) || !(sum > 0.0) {
        return Err(ThroughputError::NonpositiveLatency(sum));
    }
    Ok(1000.0 / sum)
}

/// λ_succ = ΣX_i / T_total in tasks/s. Zero when no time has passed.
pub fn successful_throughput(x: &[bool], t_total_s: f64) -> f64 {
    let s = x.iter().filter(|v| **v).count() as f64;
    if t_total_s > 0.0 {
        s / t_total_s
    } else {
        0.0
    }
}

/// T̂ = (ℓ_render / N̄_render) · ΣX_i, in the unit of `ell_render`.
pub fn estimate_total_time(ell_render: f64, n_bar_render: f64, x: &[bool]) -> f64 {
    let s = x.iter().filter(|v| **v).count() as f64;
    if n_bar_render > 0.0 {
        ell_render / n_bar_render * s
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    /// Mean per-frame latency, ms.
    pub ell_ms: f64,
    pub trace: StepTrace,
    /// Averaging window, ms.
    pub window: Option<(f64, f64)>,
    pub n_bar: f64,
    /// Frames/s; `None` without spans or with zero latency.
    pub mu: Option<f64>,
}

impl StageModel {
    fn from_records(tasks: &[TaskRecord], stage: StageKind) -> Self {
        let spans: Vec<&SpanRecord> = tasks
            .iter()
            .flat_map(|t| t.spans.iter())
            .filter(|s| s.stage == stage)
            .collect();
        let trace = StepTrace::from_intervals(spans.iter().map(|s| (s.start_ms, s.end_ms)));
        let window = trace.active_window();
        let n_bar = match window {
            Some((a, b)) if b > a => trace.integral(a, b) / (b - a),
            _ => 0.0,
        };
        let (lat, frames) = tasks
            .iter()
            .filter_map(|t| t.latency_ms.get(&stage).map(|l| (*l, f64::from(t.frames))))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let ell_ms = if frames > 0.0 { lat / frames } else { 0.0 };
        let mu = (ell_ms > 0.0 && n_bar > 0.0).then(|| n_bar / (ell_ms / 1000.0));
        StageModel {
            ell_ms,
            trace,
            window,
            n_bar,
            mu,
        }
    }
}

/// The throughput quantities of one run, derived from its task records.
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputModel {
    pub plan: StageModel,
    pub render: StageModel,
    pub lambda_theory: Option<f64>,
    pub lambda_base: Option<f64>,
    pub lambda_succ: f64,
    /// Planning success indicators in task order.
    pub x: Vec<bool>,
    pub m: usize,
    pub t_total_ms: f64,
    pub rendered_frames: u64,
    /// Mean frames per rendered task.
    pub frames_per_render: f64,
    /// T̂ in ms.
    pub t_hat_ms: Option<f64>,
}

impl ThroughputModel {
    pub fn from_records(tasks: &[TaskRecord], t_total_ms: f64) -> Self {
        let plan = StageModel::from_records(tasks, StageKind::Plan);
        let render = StageModel::from_records(tasks, StageKind::Render);
        let lambda_theory = match (plan.mu, render.mu) {
            (Some(p), Some(r)) => Some(p.min(r)),
            (Some(v), None) | (None, Some(v)) => Some(v),
            (None, None) => None,
        };
        let mut ells = Vec::new();
        for stage in StageKind::ALL {
            let xs: Vec<f64> = tasks.iter().filter_map(|t| t.latency_ms.get(&stage)).copied().collect();
            if !xs.is_empty() {
                ells.push(xs.iter().sum::<f64>() / xs.len() as f64);
            }
        }
        let lambda_base = baseline_throughput(&ells).ok();
        let mut sorted: Vec<&TaskRecord> = tasks.iter().collect();
        sorted.sort_by_key(|t| t.task_id);
        let x: Vec<bool> = sorted.iter().map(|t| t.valid).collect();
        let lambda_succ = successful_throughput(&x, t_total_ms / 1000.0);
        let rendered: Vec<&&TaskRecord> = sorted.iter().filter(|t| t.rendered()).collect();
        let rendered_frames: u64 = rendered.iter().map(|t| u64::from(t.frames)).sum();
        let frames_per_render = if rendered.is_empty() {
            0.0
        } else {
            rendered_frames as f64 / rendered.len() as f64
        };
        let t_hat_ms =
            (render.n_bar > 0.0).then(|| estimate_total_time(render.ell_ms * frames_per_render, render.n_bar, &x));
        ThroughputModel {
            plan,
            render,
            lambda_theory,
            lambda_base,
            lambda_succ,
            x,
            m: tasks.len(),
            t_total_ms,
            rendered_frames,
            frames_per_render,
            t_hat_ms,
        }
    }

    /// Rendered frames per second of run time.
    pub fn throughput_fps(&self) -> f64 {
        if self.t_total_ms > 0.0 {
            self.rendered_frames as f64 / (self.t_total_ms / 1000.0)
        } else {
            0.0
        }
    }

    /// λ_theory converted to successful tasks per second.
    pub fn lambda_theory_tasks(&self) -> Option<f64> {
        match (self.lambda_theory, self.frames_per_render) {
            (Some(l), f) if f > 0.0 => Some(l / f),
            _ => None,
        }
    }

    pub fn successes(&self) -> u64 {
        self.x.iter().filter(|v| **v).count() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_concurrency() {
        let tr = StepTrace::from_points([(0.0, 2.0)]);
        assert!((effective_throughput(500.0, &tr, 10_000.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn step_integration() {
        let tr = StepTrace::from_points([(0.0, 1.0), (500.0, 3.0)]);
        assert!((tr.mean(0.0, 1000.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((effective_throughput(1000.0, &tr, 1000.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(tr.value_at(499.9), 1.0);
        assert_eq!(tr.value_at(500.0), 3.0);
    }

    #[test]
    fn formulas() {
        assert!((theoretical_max(10.0, 3.33).unwrap() - 3.33).abs() < 1e-12);
        assert!((baseline_throughput(&[100.0, 300.0, 56.0]).unwrap() - 2.19).abs() < 0.01);
        assert_eq!(
            effective_throughput(0.0, &StepTrace::default(), 1.0),
            Err(ThroughputError::NonpositiveLatency(0.0))
        );
        assert!(baseline_throughput(&[0.0]).is_err());
        assert!(theoretical_max(0.0, 1.0).is_err());
        assert_eq!(successful_throughput(&[true; 100], 50.0), 2.0);
        assert_eq!(successful_throughput(&[false; 100], 50.0), 0.0);
        assert_eq!(estimate_total_time(300.0, 2.0, &[true, true, false, true]), 450.0);
    }

    #[test]
    fn intervals_to_trace() {
        let tr = StepTrace::from_intervals([(0.0, 10.0), (5.0, 15.0), (20.0, 30.0)]);
        assert_eq!(tr.value_at(7.0), 2.0);
        assert_eq!(tr.value_at(17.0), 0.0);
        assert_eq!(tr.active_window(), Some((0.0, 30.0)));
        assert_eq!(tr.integral(0.0, 30.0), 30.0);
        let touching = StepTrace::from_intervals([(0.0, 10.0), (10.0, 20.0)]);
        assert_eq!(touching.value_at(10.0), 1.0);
        assert_eq!(touching.max(), 1.0);
    }
}
