use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use super::*;
use crate::metrics::Outcome;
use crate::model::{validate_config, ClusterTimeouts, PipelineConfig, StageKind, WorkerRole, WorkloadProfile};
use crate::supervisor::SupervisorPolicy;
use crate::workloads::{apply_faults, FaultKind, FaultSchedule, FaultTarget, FaultTrigger, Topology};

fn fast_timeouts() -> ClusterTimeouts {
    ClusterTimeouts {
        heartbeat_interval_ms: 20,
        suspect_timeout_ms: 60,
        dead_timeout_ms: 200,
        max_attempts: 3,
    }
}

fn small(m: u64, plan_ms: f64, render_ms: f64) -> PipelineConfig {
    let mut c = PipelineConfig::new()
        .stage_ms(StageKind::Load, 2.0)
        .stage_ms(StageKind::Plan, plan_ms)
        .stage_ms(StageKind::Render, render_ms)
        .stage_ms(StageKind::Store, 1.0)
        .frames(1)
        .tasks(m)
        .dynload(true);
    c.cluster = Some(fast_timeouts());
    c
}

fn node(name: &str, slots: u32) -> NodeOptions {
    let mut n = NodeOptions::new(name, WorkerRole::Fused, slots);
    n.heartbeat_interval = Duration::from_millis(20);
    n
}

fn serve_opts() -> ServeOptions {
    ServeOptions {
        poll: Duration::from_millis(5),
        linger: Duration::from_millis(300),
        deadline: Some(Duration::from_secs(60)),
    }
}

fn resolved(m: &Master) -> u64 {
    m.count(Outcome::Completed) + m.count(Outcome::Pruned) + m.count(Outcome::Lost)
}

#[test]
fn local_cluster_runs_every_task_once() {
    let mut pc = small(40, 3.0, 5.0);
    pc.stages
        .insert(StageKind::Plan, WorkloadProfile::constant(3.0).with_failure(0.2).into());
    let cfg = Arc::new(validate_config(&pc).unwrap());
    let (master, reports) = run_local(cfg.clone(), &[node("a", 2), node("b", 2)], serve_opts()).unwrap();
    assert!(master.is_finished());
    assert_eq!(resolved(&master), 40);
    assert_eq!(master.count(Outcome::Lost), 0);
    assert!(master.count(Outcome::Pruned) > 0);
    let stored: BTreeSet<_> = master.stored().map(|r| r.task_id).collect();
    assert_eq!(stored.len() as u64, master.count(Outcome::Completed));
    verify_single_ownership(master.log()).unwrap();
    let done: u64 = reports.iter().map(|r| r.completed + r.pruned).sum();
    assert_eq!(done, 40);
    assert!(reports.iter().all(|r| r.errors.is_empty()), "{reports:?}");
    let metrics = cluster_metrics(&cfg, &master);
    assert_eq!(metrics.summary.completed + metrics.summary.pruned, 40);
    assert!(metrics.makespan_ms() > 0.0);
}

#[test]
fn missing_context_is_requeued_then_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let store = ContextStore::new(dir.path());
    let spec = crate::model::TaskSpec::new(0, "scene-a", 1);
    let local = LocalMaster::start(
        Master::new(vec![spec], fast_timeouts(), Dispatch::LeastLoaded),
        serve_opts(),
    )
    .unwrap();
    let ep = (local.connector())().unwrap();
    ep.send(Message::Register(Registration::new("n", WorkerRole::Fused, 0, 1)))
        .unwrap();
    let recv = |ep: &Endpoint| loop {
        if let Some(env) = ep.recv(Duration::from_secs(5)).unwrap() {
            break env.msg;
        }
    };
    let Message::Registered { worker } = recv(&ep) else {
        panic!()
    };
    ep.tx().set_sender(u64::from(worker));
    ep.send(Message::TaskRequest { worker }).unwrap();
    let Message::TaskGrant { spec, attempt } = recv(&ep) else {
        panic!()
    };
    assert_eq!(attempt, 1);
    assert!(matches!(
        store.load(&spec.scene_ref),
        Err(ClusterError::ContextNotFound(_))
    ));
    ep.send(Message::TaskAbort {
        worker,
        task_id: 0,
        attempt,
        reason: "context_not_found".into(),
    })
    .unwrap();
    store.put("scene-a", b"restored").unwrap();
    ep.send(Message::TaskRequest { worker }).unwrap();
    let Message::TaskGrant { spec, attempt } = recv(&ep) else {
        panic!()
    };
    assert_eq!(attempt, 2);
    assert_eq!(store.load(&spec.scene_ref).unwrap(), b"restored");
    ep.send(Message::TaskDone(Box::new(Completion {
        worker,
        task_id: 0,
        attempt,
        outcome: Outcome::Completed,
        stored: None,
        record: None,
    })))
    .unwrap();
    ep.send(Message::TaskRequest { worker }).unwrap();
    assert_eq!(recv(&ep), Message::Shutdown);
    drop(ep);
    let (master, r) = local.join();
    r.unwrap();
    let a = master.assignment(0).unwrap();
    assert_eq!((a.status, a.attempt), (AssignmentStatus::Done, 2));
    assert_eq!(master.events_named_requeued(), 1);
}

impl Master {
    fn events_named_requeued(&self) -> usize {
        self.events().iter().filter(|e| e.name() == "requeued").count()
    }
}

#[test]
fn node_gives_up_on_a_missing_context_after_max_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let store = ContextStore::new(dir.path());
    let cfg = Arc::new(validate_config(&small(3, 1.0, 1.0)).unwrap());
    let specs = cfg.tasks();
    for s in &specs[1..] {
        store.put(&s.scene_ref, &[7u8; 64]).unwrap();
    }
    let mut n = node("a", 1);
    n.store = Some(store);
    let (master, reports) = run_local(cfg, &[n], serve_opts()).unwrap();
    let a = master.assignment(specs[0].task_id).unwrap();
    assert_eq!(a.status, AssignmentStatus::Lost);
    assert_eq!(reports[0].aborted, 3);
    assert_eq!(master.count(Outcome::Completed) + master.count(Outcome::Pruned), 2);
}

#[test]
fn grants_stay_small_and_egress_ignores_payload_size() {
    let mut grant_bytes = Vec::new();
    for blob in [1usize << 10, 8 << 20] {
        let dir = tempfile::tempdir().unwrap();
        let store = ContextStore::new(dir.path());
        let mut pc = small(1000, 0.0, 0.0);
        pc.stages.clear();
        for k in [
            StageKind::Load,
            StageKind::Randomize,
            StageKind::Plan,
            StageKind::Render,
            StageKind::Store,
        ] {
            pc = pc.stage_ms(k, 0.0);
        }
        pc.scene_count = Some(4);
        let cfg = Arc::new(validate_config(&pc).unwrap());
        let scenes: BTreeSet<String> = cfg.tasks().into_iter().map(|t| t.scene_ref).collect();
        for s in &scenes {
            store.put(s, &vec![1u8; blob]).unwrap();
        }
        let mut n = node("a", 4);
        n.store = Some(store);
        let (master, _) = run_local(cfg, &[n], serve_opts()).unwrap();
        assert_eq!(master.grants(), 1000);
        let (total, max) = master.grant_bytes();
        assert!(max <= GRANT_SIZE_CAP, "{max}");
        assert!(master.egress_bytes() < 1000 * GRANT_SIZE_CAP as u64);
        grant_bytes.push(total);
    }
    assert_eq!(grant_bytes[0], grant_bytes[1]);
}

#[test]
fn killed_nodes_tasks_complete_elsewhere() {
    let cfg = Arc::new(validate_config(&small(120, 5.0, 10.0)).unwrap());
    let local = LocalMaster::start(master_for(&cfg, 10), serve_opts()).unwrap();
    let stages: Arc<dyn crate::model::StageSet> = Arc::new(crate::model::SyntheticStages::new(cfg.clone()));
    let nodes: Vec<Node> = (0..10)
        .map(|i| {
            Node::start(
                cfg.clone(),
                stages.clone(),
                node(&format!("n{i}"), 1),
                local.connector(),
            )
            .unwrap()
        })
        .collect();
    std::thread::sleep(Duration::from_millis(60));
    nodes[3].kill();
    for n in nodes {
        n.wait();
    }
    let (master, r) = local.join();
    r.unwrap();
    assert_eq!(master.count(Outcome::Completed) + master.count(Outcome::Pruned), 120);
    assert_eq!(master.count(Outcome::Lost), 0);
    let dead: Vec<_> = master.workers().filter(|w| w.state == Liveness::Dead).collect();
    assert_eq!(dead.len(), 1);
    assert!(master.events_named_requeued() >= 1);
    verify_single_ownership(master.log()).unwrap();
}

#[test]
fn hung_slot_is_respawned_and_budget_exhaustion_migrates_work() {
    let mut pc = small(12, 5.0, 10.0);
    pc.cluster = Some(ClusterTimeouts {
        max_attempts: 5,
        ..fast_timeouts()
    });
    let cfg = Arc::new(validate_config(&pc).unwrap());
    let mut schedule = FaultSchedule::new(1);
    for _ in 0..4 {
        schedule = schedule.with(
            FaultTrigger::AtTimeMs(15.0),
            FaultKind::Hang,
            FaultTarget::Worker {
                role: WorkerRole::Fused,
                index: 0,
            },
        );
    }
    let topo = Topology {
        fused: 2,
        tasks: 12,
        ..Topology::default()
    };
    let mut n = node("a", 2);
    n.faults = Arc::new(apply_faults(&schedule, &topo).unwrap());
    n.supervisor = Some(SupervisorPolicy::fast(10, 50).with_max_respawns(3));
    let (master, reports) = run_local(cfg, &[n], serve_opts()).unwrap();
    assert_eq!(master.count(Outcome::Completed) + master.count(Outcome::Pruned), 12);
    assert_eq!(master.count(Outcome::Lost), 0);
    let ev = &reports[0].supervisor_events;
    let named = |k: &str| ev.iter().filter(|e| e.name() == k).count();
    assert_eq!(named("hang_detected"), 4, "{ev:?}");
    assert_eq!(named("respawned"), 3);
    assert_eq!(named("budget_exhausted"), 1);
    assert!(ev.iter().all(|e| e.worker() == 0));
    let first = master.assignment(0).unwrap();
    assert_eq!(first.status, AssignmentStatus::Done);
    assert!(first.attempt > 1);
    verify_single_ownership(master.log()).unwrap();
}

#[test]
fn tcp_master_and_node() {
    let cfg = Arc::new(validate_config(&small(10, 1.0, 2.0)).unwrap());
    let tcp = TcpMaster::bind(master_for(&cfg, 2), "127.0.0.1:0", serve_opts()).unwrap();
    let addr = tcp.local_addr();
    let server = std::thread::spawn(move || tcp.run());
    let connect: Connector = Arc::new(move || connect_tcp(addr));
    let stages: Arc<dyn crate::model::StageSet> = Arc::new(crate::model::SyntheticStages::new(cfg.clone()));
    let report = run_node(cfg, stages, node("tcp", 2), connect).unwrap();
    let (master, r) = server.join().unwrap();
    r.unwrap();
    assert_eq!(resolved(&master), 10);
    assert_eq!(report.completed + report.pruned, 10);
}
