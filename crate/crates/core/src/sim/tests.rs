use super::*;
use crate::metrics::Outcome;
use crate::model::{validate_config, PipelineConfig, WorkloadProfile};
use crate::supervisor::SupervisorPolicy;

fn two_stage(m: u64, p: u32, r: u32) -> PipelineConfig {
    let mut c = PipelineConfig::new()
        .stage_ms(StageKind::Plan, 100.0)
        .stage_ms(StageKind::Render, 300.0)
        .stage_ms(StageKind::Store, 0.0)
        .frames(1)
        .tasks(m)
        .workers(p, r)
        .mode(Mode::Simulated);
    c.spawn_latency_ms = Some(0.0);
    c
}

#[test]
fn serial_single_task_is_sum_of_latencies() {
    let cfg = validate_config(
        &PipelineConfig::new()
            .stage_ms(StageKind::Load, 0.0)
            .stage_ms(StageKind::Plan, 100.0)
            .stage_ms(StageKind::Render, 300.0)
            .stage_ms(StageKind::Store, 56.0)
            .frames(1)
            .tasks(1)
            .mode(Mode::SerialBaseline),
    )
    .unwrap();
    let r = simulate(&cfg).unwrap();
    assert_eq!(r.makespan_us, 456_000);
    assert_eq!(r.completed, 1);
}

#[test]
fn one_plus_one_pipeline_is_render_bound() {
    let cfg = validate_config(&two_stage(10, 1, 1)).unwrap();
    let r = simulate(&cfg).unwrap();
    assert_eq!(r.makespan_us, 3_100_000);
    assert_eq!(r.completed, 10);
    assert_eq!(r.peak(StageKind::Render), 1);
}

#[test]
fn dynamic_beats_static_two_planners() {
    let cfg = validate_config(&two_stage(10, 2, 1)).unwrap();
    let rows = compare_policies(&cfg, &[Policy::StaticPipeline, Policy::DynamicPipeline]).unwrap();
    assert!(
        rows[1].makespan_us < rows[0].makespan_us,
        "{} vs {}",
        rows[1].makespan_us,
        rows[0].makespan_us
    );
    assert!(rows[1].events.iter().any(|e| e.name() == "realloc"));
}

#[test]
fn single_policy_table_equals_simulate() {
    let cfg = validate_config(&two_stage(10, 1, 1)).unwrap();
    let rows = compare_policies(&cfg, &[Policy::StaticPipeline]).unwrap();
    assert_eq!(rows, vec![simulate(&cfg).unwrap()]);
}

#[test]
fn equal_latency_policies_within_one_task() {
    let mut c = two_stage(20, 2, 2);
    c = c.stage_ms(StageKind::Render, 100.0);
    let cfg = validate_config(&c).unwrap();
    let rows = compare_policies(&cfg, &[Policy::StaticPipeline, Policy::DynamicPipeline]).unwrap();
    let diff = rows[0].makespan_us.abs_diff(rows[1].makespan_us);
    assert!(diff <= 200_000, "diff {diff}");
}

#[test]
fn deterministic_and_conserving() {
    let mut c = two_stage(50, 2, 2)
        .stage(
            StageKind::Plan,
            WorkloadProfile::from_latency(crate::LatencyDist::Uniform { lo: 50.0, hi: 150.0 }).with_failure(0.3),
        )
        .stage_ms(StageKind::Store, 20.0)
        .dynload(true);
    c.seed = 9;
    let cfg = validate_config(&c).unwrap();
    let a = simulate(&cfg).unwrap();
    assert_eq!(a, simulate(&cfg).unwrap());
    assert_eq!(a.completed + a.pruned + a.lost, 50);
    assert!(a.pruned > 0);
    for t in a.tasks.iter().filter(|t| t.outcome == Outcome::Completed) {
        let spans: f64 = t.spans.iter().map(|s| s.duration_ms()).sum();
        let lat: f64 = t.latency_ms.values().sum();
        assert!((spans - lat).abs() < 1e-6);
    }
    let times: Vec<_> = a.timeline.iter().map(|e| e.time_us).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn hangs_need_a_supervisor() {
    let c = two_stage(5, 1, 1).stage(StageKind::Render, WorkloadProfile::constant(300.0).with_hang(0.5));
    let cfg = validate_config(&c).unwrap();
    assert_eq!(simulate(&cfg), Err(SimError::NonterminatingConfig));
    let mut c = c;
    c.supervisor = Some(SupervisorPolicy::fast(50, 500));
    let cfg = validate_config(&c).unwrap();
    let r = simulate(&cfg).unwrap();
    assert_eq!(r.completed + r.pruned + r.lost, 5);
    let policy = cfg.supervisor.clone().unwrap();
    for e in &r.events {
        if let RunEvent::HangDetected {
            at_ms, last_seen_ms, ..
        } = e
        {
            assert!(at_ms - last_seen_ms <= (policy.liveness_timeout_ms + policy.poll_interval_ms) as f64);
        }
    }
    assert!(r.events.iter().any(|e| e.name() == "killed"));
}

#[test]
fn records_match_metrics() {
    let cfg = validate_config(&two_stage(6, 1, 2)).unwrap();
    let r = simulate_with_records(&cfg).unwrap();
    assert_eq!(r.records.len(), 6);
    let m = r.to_metrics(&cfg);
    assert_eq!(m.summary.completed, 6);
    assert!((m.makespan_ms() - r.makespan_ms()).abs() < 1e-9);
}

#[test]
fn homogeneous_sweep_is_perfectly_efficient() {
    let pool = crate::workloads::TaskPool::homogeneous(2560, 100.0);
    let speeds = vec![1.0; 128];
    for p in scaling_sweep(&pool, &[8, 16, 32, 64, 128], true, &speeds) {
        assert_eq!(p.efficiency, 1.0);
    }
}
