use super::*;
use crate::metrics::{Outcome, RunEvent};
use crate::model::{validate_config, Mode, PipelineConfig, StageKind, WorkerRole, WorkloadProfile};
use crate::sim::simulate_policy;
use crate::supervisor::SupervisorPolicy;
use crate::workloads::{FaultKind, FaultSchedule, FaultTarget, FaultTrigger};

fn two_stage(m: u64, p: u32, r: u32) -> PipelineConfig {
    let mut c = PipelineConfig::new()
        .stage_ms(StageKind::Plan, 100.0)
        .stage_ms(StageKind::Render, 300.0)
        .stage_ms(StageKind::Store, 0.0)
        .frames(1)
        .tasks(m)
        .workers(p, r)
        .mode(Mode::Realtime);
    c.spawn_latency_ms = Some(0.0);
    c
}

fn within(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol * expected
}

fn accounted(out: &RunOutput, m: u64) {
    let s = &out.metrics.summary;
    assert_eq!(s.completed + s.pruned + s.lost, m);
    assert_eq!(out.output.len() as u64, s.completed);
    assert_eq!(out.output.duplicates(), 0);
}

#[test]
fn serial_baseline_is_five_task_latencies() {
    let cfg = validate_config(
        &PipelineConfig::new()
            .stage_ms(StageKind::Load, 0.0)
            .stage_ms(StageKind::Plan, 100.0)
            .stage_ms(StageKind::Render, 300.0)
            .stage_ms(StageKind::Store, 56.0)
            .frames(1)
            .tasks(5)
            .mode(Mode::SerialBaseline),
    )
    .unwrap();
    let out = run(&cfg, RunOptions::default()).unwrap();
    assert!(within(out.makespan_ms(), 2280.0, 0.10), "{}", out.makespan_ms());
    accounted(&out, 5);
}

#[test]
fn zero_tasks() {
    let cfg = validate_config(&two_stage(0, 2, 2)).unwrap();
    let out = run(&cfg, RunOptions::default()).unwrap();
    assert!(out.makespan_ms() < 1.0);
    assert!(out.metrics.tasks.is_empty());
    assert!(out.output.is_empty());
    let out = run_serial_baseline(&cfg, RunOptions::default()).unwrap();
    assert!(out.metrics.tasks.is_empty());
}

#[test]
fn one_plus_one_matches_oracle() {
    let cfg = validate_config(&two_stage(10, 1, 1)).unwrap();
    let oracle = simulate_policy(&cfg, Policy::StaticPipeline).unwrap().makespan_ms();
    assert_eq!(oracle, 3100.0);
    let out = run_pipelined(&cfg, RunOptions::default()).unwrap();
    assert!(
        within(out.makespan_ms(), oracle, 0.10),
        "{} vs {oracle}",
        out.makespan_ms()
    );
    accounted(&out, 10);
    assert_eq!(out.queue.enqueued, 10);
    assert_eq!(out.queue.dequeued, 10);
    assert_eq!(out.queue.poisons_seen, 1);
}

#[test]
fn three_renderers_match_oracle() {
    let cfg = validate_config(&two_stage(10, 1, 3)).unwrap();
    let oracle = simulate_policy(&cfg, Policy::StaticPipeline).unwrap().makespan_ms();
    let out = run_pipelined(&cfg, RunOptions::default()).unwrap();
    assert!(
        within(out.makespan_ms(), oracle, 0.10),
        "{} vs {oracle}",
        out.makespan_ms()
    );
    accounted(&out, 10);
}

#[test]
fn async_store_goes_through_batches() {
    let mut c = two_stage(12, 2, 2)
        .stage_ms(StageKind::Plan, 10.0)
        .stage_ms(StageKind::Render, 20.0)
        .stage_ms(StageKind::Store, 5.0)
        .dynload(true);
    c.batch_writer = Some(crate::model::BatchWriterConfig {
        batch_size: 4,
        flush_interval_ms: 1000.0,
    });
    let cfg = validate_config(&c).unwrap();
    let out = run(&cfg, RunOptions::default()).unwrap();
    accounted(&out, 12);
    assert_eq!(out.metrics.summary.completed, 12);
    assert_eq!(out.batches, 3);
    for t in &out.metrics.tasks {
        let store = t.spans.iter().find(|s| s.stage == StageKind::Store).unwrap();
        assert!(store.worker >= crate::sim::IO_WORKER_BASE);
    }
    assert_eq!(out.metrics.events_named("realloc").len(), 2);
}

#[test]
fn pruned_tasks_never_reach_the_queue() {
    let c = two_stage(20, 1, 1)
        .stage_ms(StageKind::Render, 5.0)
        .stage(StageKind::Plan, WorkloadProfile::constant(5.0).with_failure(0.5));
    let cfg = validate_config(&c).unwrap();
    let out = run(&cfg, RunOptions::default()).unwrap();
    accounted(&out, 20);
    let s = &out.metrics.summary;
    assert!(s.pruned > 0);
    assert_eq!(out.queue.enqueued, s.completed + s.lost);
    let oracle = simulate_policy(&cfg, Policy::StaticPipeline).unwrap();
    assert_eq!((oracle.completed, oracle.pruned), (s.completed, s.pruned));
}

#[test]
fn metrics_file_streams_every_line() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.jsonl");
    let output = dir.path().join("out.log");
    let cfg = validate_config(
        &two_stage(6, 1, 2)
            .stage_ms(StageKind::Render, 10.0)
            .stage_ms(StageKind::Plan, 5.0),
    )
    .unwrap();
    let out = run(
        &cfg,
        RunOptions {
            metrics_path: Some(metrics.clone()),
            output_path: Some(output.clone()),
            ..RunOptions::default()
        },
    )
    .unwrap();
    let parsed = crate::metrics::ParsedMetrics::read(&metrics).unwrap();
    assert!(parsed.is_complete());
    assert_eq!(parsed.tasks.len(), 6);
    let summary = parsed.summary.unwrap();
    assert_eq!(summary.completed, 6);
    assert_eq!(summary.makespan_ms, out.metrics.summary.makespan_ms);
    let stored = crate::model::decode_records(&std::fs::read(&output).unwrap()).unwrap();
    assert_eq!(stored.len(), 6);
}

#[test]
fn hangs_without_supervisor_are_rejected() {
    let c = two_stage(2, 1, 1).stage(StageKind::Render, WorkloadProfile::constant(5.0).with_hang(0.5));
    let cfg = validate_config(&c).unwrap();
    assert!(matches!(
        run(&cfg, RunOptions::default()),
        Err(ExecError::NonterminatingConfig)
    ));
}

#[test]
fn hung_renderer_is_killed_and_task_retried() {
    let mut c = two_stage(6, 1, 1)
        .stage_ms(StageKind::Plan, 5.0)
        .stage(StageKind::Render, WorkloadProfile::constant(20.0).with_hang(0.3));
    c.supervisor = Some(SupervisorPolicy::fast(10, 80));
    let cfg = validate_config(&c).unwrap();
    let out = run(&cfg, RunOptions::default()).unwrap();
    accounted(&out, 6);
    let oracle = simulate_policy(&cfg, Policy::StaticPipeline).unwrap();
    assert_eq!(out.metrics.summary.lost, oracle.lost);
    let hangs = out.metrics.events_named("hang_detected");
    assert_eq!(
        hangs.len(),
        oracle.events.iter().filter(|e| e.name() == "hang_detected").count()
    );
    let policy = cfg.supervisor.clone().unwrap();
    let bound = (policy.liveness_timeout_ms + 2 * policy.poll_interval_ms + policy.heartbeat_interval_ms) as f64;
    for e in hangs {
        if let RunEvent::HangDetected {
            at_ms, last_seen_ms, ..
        } = e
        {
            assert!(at_ms - last_seen_ms <= bound, "{at_ms} - {last_seen_ms}");
        }
    }
    for t in out.metrics.tasks.iter().filter(|t| t.attempts > 1) {
        assert!(t.spans.iter().any(|s| s.killed));
    }
}

#[test]
fn crashed_planner_is_respawned() {
    let mut c = two_stage(8, 2, 1)
        .stage_ms(StageKind::Plan, 10.0)
        .stage_ms(StageKind::Render, 10.0);
    c.supervisor = Some(SupervisorPolicy::fast(10, 200));
    let cfg = validate_config(&c).unwrap();
    let faults = FaultSchedule::new(1).with(
        FaultTrigger::AtTask(2),
        FaultKind::Crash,
        FaultTarget::Worker {
            role: WorkerRole::Planner,
            index: 0,
        },
    );
    let out = run(
        &cfg,
        RunOptions {
            faults: Some(faults),
            ..RunOptions::default()
        },
    )
    .unwrap();
    accounted(&out, 8);
    assert_eq!(out.metrics.summary.completed, 8);
    assert_eq!(out.faults.len(), 1);
    assert!(out.metrics.events_named("crash_detected").len() == 1);
    assert!(out.metrics.events_named("respawned").len() == 1);
    let t2 = out.metrics.tasks.iter().find(|t| t.task_id == 2).unwrap();
    assert_eq!(t2.attempts, 2);
}

#[test]
fn dead_renderer_context_is_requeued() {
    let mut c = two_stage(6, 1, 2)
        .stage_ms(StageKind::Plan, 5.0)
        .stage_ms(StageKind::Render, 30.0);
    c.supervisor = Some(SupervisorPolicy::fast(10, 60).with_max_respawns(0));
    let cfg = validate_config(&c).unwrap();
    let faults = FaultSchedule::new(1).with(
        FaultTrigger::AtTimeMs(20.0),
        FaultKind::Hang,
        FaultTarget::Worker {
            role: WorkerRole::Renderer,
            index: 0,
        },
    );
    let out = run(
        &cfg,
        RunOptions {
            faults: Some(faults),
            ..RunOptions::default()
        },
    )
    .unwrap();
    accounted(&out, 6);
    assert_eq!(out.metrics.summary.completed, 6);
    assert_eq!(out.metrics.events_named("budget_exhausted").len(), 1);
    assert_eq!(out.metrics.events_named("requeued").len(), 1);
}

#[test]
fn dynamic_spawn_joins_before_drain() {
    let mut c = two_stage(12, 3, 1)
        .stage_ms(StageKind::Plan, 10.0)
        .stage_ms(StageKind::Render, 40.0)
        .dynload(true);
    c.spawn_latency_ms = Some(5.0);
    let cfg = validate_config(&c).unwrap();
    let out = run(&cfg, RunOptions::default()).unwrap();
    accounted(&out, 12);
    assert!(!out.metrics.events_named("worker_joined").is_empty());
    let renderers: std::collections::BTreeSet<_> = out
        .metrics
        .tasks
        .iter()
        .flat_map(|t| t.spans.iter())
        .filter(|s| s.stage == StageKind::Render)
        .map(|s| s.worker)
        .collect();
    assert!(renderers.len() > 1);
    let fixed = run(
        &validate_config(&c.clone().dynload(false)).unwrap(),
        RunOptions::default(),
    )
    .unwrap();
    assert!(out.makespan_ms() < fixed.makespan_ms());
    assert!(out.metrics.tasks.iter().all(|t| t.outcome == Outcome::Completed));
}
