//! Acceptance suite. Each test prints one `PASS` or `FAIL` line for its
//! criterion and then asserts it. Tests share one lock so timing-sensitive
//! realtime runs never compete with each other or with CPU-bound checks.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use pipegen_core::cluster::{run_local, NodeOptions, ServeOptions};
use pipegen_core::executor::{run_policy, BoundedQueue, Popped, QueueMessage, RunOptions};
use pipegen_core::metrics::{Outcome, Policy, RunEvent, RunMetrics, TaskRecord};
use pipegen_core::model::{
    validate_config, ClusterTimeouts, LatencyDist, Mode, PipelineConfig, RenderVariant, StageKind, ValidatedConfig,
    WorkerRole, WorkloadProfile,
};
use pipegen_core::sim::{scaling_sweep, simulate_policy};
use pipegen_core::supervisor::{SupervisorEvent, SupervisorPolicy};
use pipegen_core::workloads::{
    apply_faults, worker_speeds, FaultKind, FaultSchedule, FaultTarget, FaultTrigger, TaskPool, Topology,
    SCALING_COMPLEXITY_SIGMA,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "{} criterion {n:>2} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} {name}: {detail}");
}

fn validated(c: &PipelineConfig) -> ValidatedConfig {
    validate_config(c).expect("valid config")
}

fn realtime(cfg: &ValidatedConfig, policy: Policy) -> RunMetrics {
    run_policy(cfg, policy, RunOptions::default()).expect("run").metrics
}

/// Independent λ_theory in frames/s: for Plan and Render, the mean
/// concurrency over the stage's active window is total span time over the
/// window length, divided by the mean per-frame latency.
fn oracle_lambda_theory(tasks: &[TaskRecord]) -> f64 {
    let mu = |stage: StageKind| -> Option<f64> {
        let spans: Vec<(f64, f64)> = tasks
            .iter()
            .flat_map(|t| t.spans.iter())
            .filter(|s| s.stage == stage && s.end_ms > s.start_ms)
            .map(|s| (s.start_ms, s.end_ms))
            .collect();
        if spans.is_empty() {
            return None;
        }
        let busy: f64 = spans.iter().map(|(a, b)| b - a).sum();
        let lo = spans.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = spans.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let (lat, frames) = tasks
            .iter()
            .filter_map(|t| t.latency_ms.get(&stage).map(|l| (*l, f64::from(t.frames))))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let ell = lat / frames;
        Some(busy / (hi - lo) / (ell / 1000.0))
    };
    match (mu(StageKind::Plan), mu(StageKind::Render)) {
        (Some(p), Some(r)) => p.min(r),
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) => 0.0,
    }
}

fn rendered_fps(m: &RunMetrics) -> f64 {
    let frames: u64 = m
        .tasks
        .iter()
        .filter(|t| t.rendered())
        .map(|t| u64::from(t.frames))
        .sum();
    frames as f64 / (m.makespan_ms() / 1000.0)
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_speedup_band() {
    let _g = serial();
    let t0 = Instant::now();
    let mut detail = Vec::new();
    let mut pass = true;
    for preset in ["genmanip", "simbox"] {
        let cfg = validated(
            &PipelineConfig::from_preset(preset)
                .tasks(200)
                .dynload(true)
                .mode(Mode::Realtime),
        );
        let serial = realtime(&cfg, Policy::Serial);
        let piped = realtime(&cfg, Policy::DynamicPipeline);
        let s = serial.makespan_ms() / piped.makespan_ms();
        let done = |m: &RunMetrics| m.summary.completed + m.summary.pruned == 200 && m.summary.lost == 0;
        pass &= s >= 2.0 && done(&serial) && done(&piped);
        detail.push(format!(
            "{preset} {:.0}/{:.0} ms = {s:.2}x",
            serial.makespan_ms(),
            piped.makespan_ms()
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs <= 300.0;
    verdict(
        1,
        "speedup >= 2.0x",
        pass,
        &format!("{}; {secs:.0} s", detail.join(", ")),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_renderer_optimization() {
    let _g = serial();
    let mk = |v: RenderVariant| {
        let mut c = PipelineConfig::from_preset("nav_mesh");
        c.render_variant = Some(v);
        let cfg = validated(&c);
        let r = simulate_policy(&cfg, Policy::for_config(&cfg)).unwrap();
        (
            r.makespan_ms(),
            r.busy_ms(StageKind::Render) / f64::from(cfg.renderer_workers),
        )
    };
    let (base, portion) = mk(RenderVariant::Baseline);
    let (opt, _) = mk(RenderVariant::Optimized);
    let reduction = (base - opt) / portion;
    // With render dominating every unit, the reduction of the render portion
    // is the per-frame latency ratio.
    let closed = 1.0 - 159.46 / 446.29;
    let pass = (0.60..=0.68).contains(&reduction) && (reduction - closed).abs() < 0.01;
    verdict(
        2,
        "render optimization",
        pass,
        &format!(
            "makespan {base:.0} -> {opt:.0} ms, {:.1}% of render portion (closed form {:.1}%)",
            reduction * 100.0,
            closed * 100.0
        ),
    );
}

// ---------------------------------------------------------------- 3

fn io_config(store_ms: f64, async_store: bool) -> ValidatedConfig {
    let mut c = PipelineConfig::new()
        .stage_ms(StageKind::Load, 0.0)
        .stage_ms(StageKind::Plan, 50.0)
        .stage_ms(StageKind::Render, 300.0)
        .stage_ms(StageKind::Store, store_ms)
        .frames(1)
        .tasks(60)
        .workers(1, 1);
    c.async_store = Some(async_store);
    c.time_scale = Some(0.5);
    validated(&c)
}

#[test]
fn criterion_03_io_masking() {
    let _g = serial();
    let t0 = Instant::now();
    let change = |async_store: bool| {
        let lo = realtime(&io_config(56.0, async_store), Policy::StaticPipeline).makespan_ms();
        let hi = realtime(&io_config(560.0, async_store), Policy::StaticPipeline).makespan_ms();
        (lo, hi, (hi - lo) / lo)
    };
    let (al, ah, a) = change(true);
    let (sl, sh, s) = change(false);
    let secs = t0.elapsed().as_secs_f64();
    let pass = a.abs() < 0.05 && s > 0.30 && secs <= 120.0;
    verdict(
        3,
        "I/O masking",
        pass,
        &format!(
            "async {al:.0} -> {ah:.0} ms ({:+.1}%), sync {sl:.0} -> {sh:.0} ms ({:+.1}%); {secs:.0} s",
            a * 100.0,
            s * 100.0
        ),
    );
}

// ---------------------------------------------------------------- 4, 10

struct MatrixEntry {
    label: String,
    closed_form: f64,
    sim: RunMetrics,
    real: RunMetrics,
}

/// (planners, renderers, plan ms, render ms, tasks)
const MATRIX: [(u32, u32, f64, f64, u64); 5] = [
    (1, 1, 20.0, 60.0, 80),
    (1, 3, 20.0, 90.0, 160),
    (2, 1, 60.0, 20.0, 160),
    (2, 2, 30.0, 30.0, 400),
    (3, 2, 20.0, 50.0, 200),
];

fn matrix() -> &'static (Vec<MatrixEntry>, f64) {
    static CACHE: OnceLock<(Vec<MatrixEntry>, f64)> = OnceLock::new();
    CACHE.get_or_init(|| {
        let t0 = Instant::now();
        let entries = MATRIX
            .iter()
            .map(|&(p, r, plan, render, m)| {
                let mut c = PipelineConfig::new()
                    .stage_ms(StageKind::Load, 0.0)
                    .stage_ms(StageKind::Plan, plan)
                    .stage_ms(StageKind::Render, render)
                    .stage_ms(StageKind::Store, 5.0)
                    .frames(1)
                    .tasks(m)
                    .workers(p, r)
                    .dynload(false);
                c.spawn_latency_ms = Some(0.0);
                let cfg = validated(&c);
                let sim = simulate_policy(&cfg, Policy::StaticPipeline).unwrap().to_metrics(&cfg);
                let real = realtime(&cfg, Policy::StaticPipeline);
                MatrixEntry {
                    label: format!("P{p}R{r} {plan}/{render}ms M{m}"),
                    closed_form: (f64::from(p) / plan).min(f64::from(r) / render) * 1000.0,
                    sim,
                    real,
                }
            })
            .collect();
        (entries, t0.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_04_throughput_model_fidelity() {
    let _g = serial();
    let (entries, secs) = matrix();
    let mut pass = *secs <= 180.0;
    let mut detail = Vec::new();
    for e in entries {
        let ls = oracle_lambda_theory(&e.sim.tasks);
        let lr = oracle_lambda_theory(&e.real.tasks);
        let rs = rendered_fps(&e.sim) / ls;
        let rr = rendered_fps(&e.real) / lr;
        let lib = e.sim.summary.lambda_theory.unwrap_or(0.0);
        pass &= (0.98..=1.0).contains(&rs) && (0.85..=1.0).contains(&rr) && (lib - ls).abs() <= 1e-6 * ls;
        pass &= ls <= e.closed_form * (1.0 + 1e-9);
        detail.push(format!(
            "{} theory {ls:.2} (closed {:.2}) sim {rs:.3} real {rr:.3}",
            e.label, e.closed_form
        ));
    }
    verdict(
        4,
        "throughput model",
        pass,
        &format!("{}; {secs:.0} s", detail.join("; ")),
    );
}

#[test]
fn criterion_10_oracle_equivalence() {
    let _g = serial();
    let (entries, secs) = matrix();
    let mut pass = *secs <= 180.0;
    let mut detail = Vec::new();
    for e in entries {
        let d = (e.real.makespan_ms() - e.sim.makespan_ms()) / e.sim.makespan_ms();
        pass &= d.abs() <= 0.10;
        detail.push(format!("{} {:+.2}%", e.label, d * 100.0));
    }
    verdict(
        10,
        "oracle equivalence",
        pass,
        &format!("{}; {secs:.0} s", detail.join(", ")),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_lambda_succ_robustness() {
    let _g = serial();
    let mut pass = true;
    let mut detail = Vec::new();
    let mut runs: Vec<(u64, f64)> = Vec::new();
    for f in [0.0, 0.2, 0.5] {
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let mut c = PipelineConfig::new()
                .stage_ms(StageKind::Load, 0.0)
                .stage(StageKind::Plan, WorkloadProfile::constant(20.0).with_failure(f))
                .stage_ms(StageKind::Render, 100.0)
                .stage_ms(StageKind::Store, 5.0)
                .frames(1)
                .tasks(200)
                .workers(2, 1)
                .seed(seed);
            c.spawn_latency_ms = Some(0.0);
            let cfg = validated(&c);
            let m = simulate_policy(&cfg, Policy::StaticPipeline).unwrap().to_metrics(&cfg);
            let successes = m.tasks.iter().filter(|t| t.valid).count() as u64;
            let lambda_succ = successes as f64 / (m.makespan_ms() / 1000.0);
            let theory = oracle_lambda_theory(&m.tasks);
            let dev = (lambda_succ / theory - 1.0).abs();
            worst = worst.max(dev);
            pass &= dev <= 0.15 && (m.summary.lambda_succ - lambda_succ).abs() <= 1e-9 * lambda_succ.max(1.0);
            runs.push((successes, m.makespan_ms()));
        }
        detail.push(format!("f={f} worst |succ/theory - 1| {:.2}%", worst * 100.0));
    }
    runs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut inversions = 0;
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            if b.0 > a.0 && b.1 < a.1 {
                inversions += 1;
            }
        }
    }
    pass &= inversions == 0;
    detail.push(format!(
        "{} runs, {inversions} T_total inversions in sum(X)",
        runs.len()
    ));
    verdict(5, "lambda_succ robustness", pass, &detail.join(", "));
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_dynamic_vs_static() {
    let _g = serial();
    let mut improvements = Vec::new();
    let mut regressions = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(2..=4);
        let r = rng.random_range(1..=2);
        let plan = rng.random_range(10.0..30.0);
        let render = rng.random_range(40.0..120.0);
        let mut c = PipelineConfig::new()
            .stage_ms(StageKind::Load, 5.0)
            .stage(
                StageKind::Plan,
                WorkloadProfile::from_latency(LatencyDist::lognormal_with_mean(plan, 0.3)),
            )
            .stage(
                StageKind::Render,
                WorkloadProfile::from_latency(LatencyDist::lognormal_with_mean(render, 0.3)),
            )
            .stage_ms(StageKind::Store, 5.0)
            .frames(2)
            .tasks(100)
            .workers(p, r)
            .seed(seed);
        c.spawn_latency_ms = Some(20.0);
        let cfg = validated(&c);
        // Render-bound: planning capacity exceeds rendering capacity.
        assert!(f64::from(p) / plan > f64::from(r) / (2.0 * render));
        let st = simulate_policy(&cfg, Policy::StaticPipeline).unwrap().makespan_ms();
        let dy = simulate_policy(&cfg, Policy::DynamicPipeline).unwrap().makespan_ms();
        if dy > st {
            regressions += 1;
        }
        improvements.push(1.0 - dy / st);
    }
    let mean = improvements.iter().sum::<f64>() / improvements.len() as f64;
    let min = improvements.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = regressions == 0 && mean >= 0.10;
    verdict(
        6,
        "dynamic vs static",
        pass,
        &format!(
            "50 seeds, {regressions} regressions, mean improvement {:.1}%, min {:.1}%",
            mean * 100.0,
            min * 100.0
        ),
    );
}

// ---------------------------------------------------------------- 7

/// Earliest-free-worker (lowest id on ties) or round-robin placement.
fn oracle_makespan(work: &[u64], workers: usize, dynload: bool) -> u64 {
    let mut busy = vec![0u64; workers];
    for (k, w) in work.iter().enumerate() {
        let i = if dynload {
            (0..workers).min_by_key(|&i| (busy[i], i)).unwrap()
        } else {
            k % workers
        };
        busy[i] += w;
    }
    busy.into_iter().max().unwrap_or(0)
}

#[test]
fn criterion_07_scaling_efficiency() {
    let _g = serial();
    let counts = [8u32, 16, 32, 64, 128];
    let sweep = |preset: &str, seed: u64| {
        let cfg = validated(&PipelineConfig::from_preset(preset).seed(seed));
        let pool = TaskPool::heterogeneous(&cfg, 2560, SCALING_COMPLEXITY_SIGMA, seed);
        let speeds = worker_speeds(128, 0.0, seed);
        (
            pool.clone(),
            scaling_sweep(&pool, &counts, true, &speeds),
            scaling_sweep(&pool, &counts, false, &speeds),
        )
    };
    let (pool, on, off) = sweep("genmanip", 0);
    let work: Vec<u64> = pool.tasks.iter().map(|t| t.work_us).collect();
    let mut agree = true;
    for (i, &w) in counts.iter().enumerate() {
        agree &= oracle_makespan(&work, w as usize, true) == on[i].makespan_us;
        agree &= oracle_makespan(&work, w as usize, false) == off[i].makespan_us;
    }
    let eff = |pts: &[pipegen_core::sim::ScalingPoint]| {
        let (b, l) = (&pts[0], &pts[pts.len() - 1]);
        (b.makespan_us as f64 * f64::from(b.workers)) / (l.makespan_us as f64 * f64::from(l.workers))
    };
    let (e_on, e_off) = (eff(&on), eff(&off));
    let last = counts.len() - 1;
    let strictly_worse = off[last].makespan_us > on[last].makespan_us;
    let pass = agree && e_on >= 0.76 && strictly_worse && (on[last].efficiency - e_on).abs() < 1e-9;

    let mut spread = Vec::new();
    for seed in 0..20 {
        spread.push(eff(&sweep("genmanip", seed).1));
    }
    spread.sort_by(f64::total_cmp);
    let below = spread.iter().filter(|e| **e < 0.76).count();
    verdict(
        7,
        "scaling efficiency",
        pass,
        &format!(
            "seed 0: efficiency at 128 {e_on:.3} dynload on, {e_off:.3} off, makespan {:.0} vs {:.0} ms; \
             seeds 0-19 median {:.3}, min {:.3}, {below} below 0.76",
            on[last].makespan_us as f64 / 1000.0,
            off[last].makespan_us as f64 / 1000.0,
            spread[spread.len() / 2],
            spread[0]
        ),
    );
}

// ---------------------------------------------------------------- 8

fn chaos_config(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::new()
        .stage_ms(StageKind::Load, 2.0)
        .stage(
            StageKind::Plan,
            WorkloadProfile::constant(10.0).with_failure(0.1).with_hang(0.05),
        )
        .stage(StageKind::Render, WorkloadProfile::constant(30.0).with_hang(0.05))
        .stage_ms(StageKind::Store, 2.0)
        .frames(1)
        .tasks(200)
        .seed(seed);
    c.spawn_latency_ms = Some(0.0);
    c.supervisor = Some(SupervisorPolicy::fast(10, 100).with_max_respawns(20));
    c
}

#[test]
fn criterion_08_fault_tolerance() {
    let _g = serial();
    let t0 = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    let (mut hangs, mut within) = (0usize, 0usize);
    for seed in 0..3u64 {
        let cfg = validated(&chaos_config(seed).workers(5, 5));
        let policy = cfg.supervisor.clone().unwrap();
        let bound = (policy.liveness_timeout_ms + policy.poll_interval_ms) as f64;
        let mut faults = FaultSchedule::new(seed);
        for (role, at) in [(WorkerRole::Planner, 150.0), (WorkerRole::Renderer, 400.0)] {
            faults = faults.with(
                FaultTrigger::AtTimeMs(at),
                FaultKind::Crash,
                FaultTarget::Fraction { role, fraction: 0.1 },
            );
        }
        let out = run_policy(
            &cfg,
            Policy::StaticPipeline,
            RunOptions {
                faults: Some(faults),
                ..RunOptions::default()
            },
        )
        .expect("chaos run");
        let s = &out.metrics.summary;
        let crashes = out.faults.iter().filter(|f| f.kind == FaultKind::Crash).count();
        let ok = s.completed + s.pruned == 200 && s.lost == 0 && out.output.duplicates() == 0;
        let oracle_hangs = simulate_policy(&cfg, Policy::StaticPipeline)
            .unwrap()
            .events
            .iter()
            .filter(|e| e.name() == "hang_detected")
            .count();
        let mut run_hangs = 0;
        for e in out.metrics.events_named("hang_detected") {
            if let RunEvent::HangDetected {
                at_ms, last_seen_ms, ..
            } = e
            {
                run_hangs += 1;
                within += usize::from(at_ms - last_seen_ms <= bound);
            }
        }
        hangs += run_hangs;
        pass &= ok && crashes == 2 && out.metrics.events_named("crash_detected").len() == crashes && run_hangs > 0;
        detail.push(format!(
            "executor seed {seed}: {}+{} of 200, lost {}, {run_hangs} hangs (oracle {oracle_hangs}), {crashes} crashes",
            s.completed, s.pruned, s.lost
        ));
    }

    // The same chaos on the master-worker runtime: two nodes of five slots,
    // one slot per node crashes.
    let mut pc = chaos_config(7);
    pc.dynload = Some(true);
    pc.cluster = Some(ClusterTimeouts {
        heartbeat_interval_ms: 20,
        suspect_timeout_ms: 60,
        dead_timeout_ms: 300,
        max_attempts: 8,
    });
    let cfg = Arc::new(validated(&pc));
    let policy = cfg.supervisor.clone().unwrap();
    let bound_us = (policy.liveness_timeout_ms + policy.poll_interval_ms) * 1000;
    let nodes: Vec<NodeOptions> = (0..2)
        .map(|i| {
            let mut n = NodeOptions::new(format!("n{i}"), WorkerRole::Fused, 5);
            n.heartbeat_interval = Duration::from_millis(20);
            n.supervisor = Some(policy.clone());
            let schedule = FaultSchedule::new(i).with(
                FaultTrigger::AtTimeMs(200.0 + 100.0 * i as f64),
                FaultKind::Crash,
                FaultTarget::Fraction {
                    role: WorkerRole::Fused,
                    fraction: 0.1,
                },
            );
            let topo = Topology {
                fused: 5,
                tasks: 200,
                ..Topology::default()
            };
            n.faults = Arc::new(apply_faults(&schedule, &topo).unwrap());
            n
        })
        .collect();
    let opts = ServeOptions {
        poll: Duration::from_millis(5),
        linger: Duration::from_millis(300),
        deadline: Some(Duration::from_secs(120)),
    };
    let (master, reports) = run_local(cfg, &nodes, opts).expect("cluster chaos run");
    let (c, p, l) = (
        master.count(Outcome::Completed),
        master.count(Outcome::Pruned),
        master.count(Outcome::Lost),
    );
    let mut node_hangs = 0;
    for e in reports.iter().flat_map(|r| r.supervisor_events.iter()) {
        if let SupervisorEvent::HangDetected {
            at_us, last_seen_us, ..
        } = e
        {
            node_hangs += 1;
            within += usize::from(at_us - last_seen_us <= bound_us);
        }
    }
    hangs += node_hangs;
    let crashes: usize = reports.iter().map(|r| r.faults.len()).sum();
    pass &= c + p == 200 && l == 0 && node_hangs > 0 && crashes == 2;
    pass &= reports.iter().all(|r| r.errors.is_empty());
    detail.push(format!(
        "cluster: {c}+{p} of 200, lost {l}, {node_hangs} hangs, {crashes} crashes"
    ));

    let secs = t0.elapsed().as_secs_f64();
    pass &= within == hangs && secs <= 300.0;
    detail.push(format!(
        "{within}/{hangs} hangs detected within timeout + poll; {secs:.0} s"
    ));
    verdict(8, "fault tolerance", pass, &detail.join("; "));
}

// ---------------------------------------------------------------- 9

#[derive(Debug, Clone)]
struct Topo {
    producers: u32,
    consumers: u32,
    capacity: usize,
    items: Vec<u16>,
}

fn topo() -> impl Strategy<Value = Topo> {
    (1u32..=4, 1u32..=4, 1usize..=6).prop_flat_map(|(producers, consumers, capacity)| {
        proptest::collection::vec(0u16..=25, producers as usize).prop_map(move |items| Topo {
            producers,
            consumers,
            capacity,
            items,
        })
    })
}

/// Consumed ids, enqueued count, dequeued count.
type Drained = (Vec<(u32, u16)>, u64, u64);

/// Producers enqueue `(producer, k)` contexts then one poison each;
/// consumers pop until drained. Returns the consumed ids, or `None` when the
/// topology failed to drain in time.
fn drive(t: &Topo) -> Option<Drained> {
    let q = Arc::new(BoundedQueue::new(t.capacity));
    q.register_producers(u64::from(t.producers));
    let (tx, rx) = crossbeam_channel::unbounded();
    let mut handles = Vec::new();
    for p in 0..t.producers {
        let q = q.clone();
        let n = t.items[p as usize];
        handles.push(std::thread::spawn(move || {
            for k in 0..n {
                q.push(QueueMessage::Context((p, k)));
            }
            q.push(QueueMessage::Poison(p));
        }));
    }
    for _ in 0..t.consumers {
        let q = q.clone();
        let tx = tx.clone();
        handles.push(std::thread::spawn(move || {
            let mut got = Vec::new();
            loop {
                match q.pop() {
                    Popped::Context(c) => {
                        got.push(c);
                        q.done();
                    }
                    Popped::Poison(_) => {}
                    Popped::Drained => break,
                }
            }
            let _ = tx.send(got);
        }));
    }
    drop(tx);
    let deadline = Instant::now() + Duration::from_secs(10);
    let mut all = Vec::new();
    for _ in 0..t.consumers {
        let left = deadline.saturating_duration_since(Instant::now());
        all.extend(rx.recv_timeout(left).ok()?);
    }
    for h in handles {
        h.join().ok()?;
    }
    let st = q.stats();
    Some((all, st.enqueued, st.dequeued))
}

#[derive(Debug, Clone)]
struct RunTopo {
    planners: u32,
    renderers: u32,
    tasks: u64,
    capacity: usize,
    dynload: bool,
    failure: f64,
    seed: u64,
}

fn run_topo() -> impl Strategy<Value = RunTopo> {
    (
        1u32..=3,
        1u32..=3,
        0u64..=12,
        1usize..=4,
        any::<bool>(),
        prop_oneof![Just(0.0), Just(0.3)],
        any::<u64>(),
    )
        .prop_map(
            |(planners, renderers, tasks, capacity, dynload, failure, seed)| RunTopo {
                planners,
                renderers,
                tasks,
                capacity,
                dynload,
                failure,
                seed,
            },
        )
}

fn executor_output(t: &RunTopo) -> Result<(), TestCaseError> {
    let mut c = PipelineConfig::new()
        .stage_ms(StageKind::Load, 0.0)
        .stage(
            StageKind::Plan,
            WorkloadProfile::from_latency(LatencyDist::Uniform { lo: 0.0, hi: 1.0 }).with_failure(t.failure),
        )
        .stage(
            StageKind::Render,
            WorkloadProfile::from_latency(LatencyDist::Uniform { lo: 0.0, hi: 2.0 }),
        )
        .stage_ms(StageKind::Store, 0.0)
        .frames(1)
        .tasks(t.tasks)
        .workers(t.planners, t.renderers)
        .dynload(t.dynload)
        .seed(t.seed);
    c.queue_capacity = Some(t.capacity);
    c.spawn_latency_ms = Some(0.0);
    let cfg = validated(&c);
    let out = run_policy(&cfg, Policy::for_config(&cfg), RunOptions::default())
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    let ids: Vec<u64> = out.output.records().iter().map(|r| r.task_id).collect();
    let unique: HashSet<u64> = ids.iter().copied().collect();
    prop_assert_eq!(unique.len(), ids.len());
    prop_assert_eq!(out.output.duplicates(), 0);
    let s = &out.metrics.summary;
    prop_assert_eq!(s.completed + s.pruned, t.tasks);
    prop_assert_eq!(ids.len() as u64, s.completed);
    prop_assert_eq!(out.queue.enqueued, out.queue.dequeued);
    Ok(())
}

#[test]
fn criterion_09_exactly_once_and_queue_invariants() {
    let _g = serial();
    let t0 = Instant::now();
    let cases = 1000;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        ..PropConfig::default()
    });
    let queue = runner.run(&topo(), |t| {
        let (ids, enq, deq) = drive(&t).ok_or_else(|| TestCaseError::fail("queue did not drain"))?;
        let expected: BTreeSet<(u32, u16)> = (0..t.producers)
            .flat_map(|p| (0..t.items[p as usize]).map(move |k| (p, k)))
            .collect();
        let seen: BTreeSet<(u32, u16)> = ids.iter().copied().collect();
        prop_assert_eq!(seen.len(), ids.len());
        prop_assert_eq!(seen, expected);
        prop_assert_eq!(enq, deq);
        Ok(())
    });
    let mut runner = TestRunner::new(PropConfig {
        cases,
        ..PropConfig::default()
    });
    let exec = runner.run(&run_topo(), |t| executor_output(&t));
    let secs = t0.elapsed().as_secs_f64();
    let pass = queue.is_ok() && exec.is_ok() && secs <= 120.0;
    fn show<T: std::fmt::Debug>(r: &Result<(), proptest::test_runner::TestError<T>>) -> String {
        match r {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("{e}"),
        }
    }
    verdict(
        9,
        "exactly-once and queue invariants",
        pass,
        &format!(
            "{cases} queue topologies {}, {cases} executor topologies {}; {secs:.0} s",
            show(&queue),
            show(&exec)
        ),
    );
}
