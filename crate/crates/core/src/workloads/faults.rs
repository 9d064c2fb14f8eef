//! Deterministic fault-injection schedules.
//!
//! A [`FaultSchedule`] is declarative. [`apply_faults`] resolves it against a
//! run topology into a [`FaultPlan`], which execution units poll at task
//! start and while spending stage time. Every fault fires at most once per
//! resolved target, and every firing is logged with its timestamp.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::rng::{stream_rng, Stream};
use crate::model::{TaskId, WorkerRole};
use crate::Micros;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FaultKind {
    /// The current stage stops returning and stops reporting progress.
    Hang,
    /// The execution unit exits abruptly.
    Crash,
    /// Every later stage latency of the unit is multiplied by `factor`.
    Slow { factor: f64 },
}

impl FaultKind {
    pub fn name(&self) -> &'static str {
        match self {
            FaultKind::Hang => "hang",
            FaultKind::Crash => "crash",
            FaultKind::Slow { .. } => "slow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTrigger {
    /// When the task with this id starts on a targeted unit.
    AtTask(TaskId),
    /// At the first poll after this run time.
    AtTimeMs(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    /// One worker by role and index within that role.
    Worker { role: WorkerRole, index: u32 },
    /// Whichever worker first satisfies the trigger.
    Any,
    /// A seeded random subset of the workers of one role, rounded up.
    Fraction { role: WorkerRole, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub trigger: FaultTrigger,
    pub kind: FaultKind,
    pub target: FaultTarget,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultSchedule {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub faults: Vec<Fault>,
}

impl FaultSchedule {
    pub fn new(seed: u64) -> Self {
        FaultSchedule {
            seed,
            faults: Vec::new(),
        }
    }

    pub fn with(mut self, trigger: FaultTrigger, kind: FaultKind, target: FaultTarget) -> Self {
        self.faults.push(Fault { trigger, kind, target });
        self
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }
}

/// Worker counts per role and task count of the run being instrumented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Topology {
    pub planners: u32,
    pub renderers: u32,
    pub fused: u32,
    pub tasks: u64,
}

impl Topology {
    pub fn count(&self, role: WorkerRole) -> u32 {
        match role {
            WorkerRole::Planner => self.planners,
            WorkerRole::Renderer => self.renderers,
            WorkerRole::Fused => self.fused,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetNotFound {
    #[error("fault {index}: no {role} worker with index {worker} (run has {available})")]
    Worker {
        index: usize,
        role: WorkerRole,
        worker: u32,
        available: u32,
    },
    #[error("fault {index}: task {task} does not exist (run has {available} tasks)")]
    Task { index: usize, task: TaskId, available: u64 },
    #[error("fault {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiredFault {
    pub at_us: Micros,
    pub kind: FaultKind,
    pub role: WorkerRole,
    pub index: u32,
    pub task_id: Option<TaskId>,
}

#[derive(Debug)]
struct Armed {
    trigger: FaultTrigger,
    kind: FaultKind,
    target: Option<(WorkerRole, u32)>,
    fired: AtomicBool,
}

/// A schedule resolved against a topology. Shared by all units of a run.
#[derive(Debug, Default)]
pub struct FaultPlan {
    armed: Vec<Armed>,
    log: Mutex<Vec<FiredFault>>,
}

pub fn apply_faults(schedule: &FaultSchedule, topo: &Topology) -> Result<FaultPlan, TargetNotFound> {
    let mut armed = Vec::new();
    for (index, f) in schedule.faults.iter().enumerate() {
        match f.trigger {
            FaultTrigger::AtTask(task) if task >= topo.tasks => {
                return Err(TargetNotFound::Task {
                    index,
                    task,
                    available: topo.tasks,
                })
            }
            FaultTrigger::AtTimeMs(t) if !(t.is_finite() && t >= 0.0) => {
                return Err(TargetNotFound::Invalid {
                    index,
                    reason: format!("trigger time {t} ms"),
                })
            }
            _ => {}
        }
        if let FaultKind::Slow { factor } = f.kind {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(TargetNotFound::Invalid {
                    index,
                    reason: format!("slow factor {factor}"),
                });
            }
        }
        let arm = |target| Armed {
            trigger: f.trigger,
            kind: f.kind.clone(),
            target,
            fired: AtomicBool::new(false),
        };
        match &f.target {
            FaultTarget::Worker { role, index: w } => {
                let available = topo.count(*role);
                if *w >= available {
                    return Err(TargetNotFound::Worker {
                        index,
                        role: *role,
                        worker: *w,
                        available,
                    });
                }
                armed.push(arm(Some((*role, *w))));
            }
            FaultTarget::Any => armed.push(arm(None)),
            FaultTarget::Fraction { role, fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(TargetNotFound::Invalid {
                        index,
                        reason: format!("fraction {fraction} outside [0, 1]"),
                    });
                }
                let n = topo.count(*role);
                let k = (fraction * f64::from(n)).ceil() as usize;
                if k > 0 && n == 0 {
                    return Err(TargetNotFound::Worker {
                        index,
                        role: *role,
                        worker: 0,
                        available: 0,
                    });
                }
                let mut ids: Vec<u32> = (0..n).collect();
                ids.shuffle(&mut stream_rng(schedule.seed, index as u64, Stream::Aux(1)));
                let mut chosen = ids[..k].to_vec();
                chosen.sort_unstable();
                armed.extend(chosen.into_iter().map(|w| arm(Some((*role, w)))));
            }
        }
    }
    Ok(FaultPlan {
        armed,
        log: Mutex::new(Vec::new()),
    })
}

impl FaultPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.armed.is_empty()
    }

    /// Resolved targets, in schedule order. `None` means any worker.
    pub fn targets(&self) -> Vec<(FaultKind, Option<(WorkerRole, u32)>)> {
        self.armed.iter().map(|a| (a.kind.clone(), a.target)).collect()
    }

    /// Polled by a unit. `task` is `Some` only at task start; time triggers
    /// match at any poll. Returns the faults that fire now, in schedule order,
    /// ending at the first hang or crash; later ones stay armed.
    pub fn poll(&self, role: WorkerRole, index: u32, task: Option<TaskId>, now_us: Micros) -> Vec<FaultKind> {
        let mut out = Vec::new();
        for a in &self.armed {
            if let Some(t) = a.target {
                if t != (role, index) {
                    continue;
                }
            }
            let due = match a.trigger {
                FaultTrigger::AtTask(id) => task == Some(id),
                FaultTrigger::AtTimeMs(ms) => now_us as f64 >= ms * 1000.0,
            };
            if !due || a.fired.swap(true, Ordering::AcqRel) {
                continue;
            }
            self.log.lock().unwrap().push(FiredFault {
                at_us: now_us,
                kind: a.kind.clone(),
                role,
                index,
                task_id: task,
            });
            out.push(a.kind.clone());
            if !matches!(a.kind, FaultKind::Slow { .. }) {
                break;
            }
        }
        out
    }

    /// True once every armed fault has fired.
    pub fn exhausted(&self) -> bool {
        self.armed.iter().all(|a| a.fired.load(Ordering::Acquire))
    }

    pub fn fired(&self) -> Vec<FiredFault> {
        self.log.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> Topology {
        Topology {
            planners: 2,
            renderers: 10,
            fused: 0,
            tasks: 100,
        }
    }

    #[test]
    fn empty_schedule_never_fires() {
        let plan = apply_faults(&FaultSchedule::default(), &topo()).unwrap();
        assert!(plan.is_empty());
        assert!(plan.poll(WorkerRole::Renderer, 0, Some(3), 1_000).is_empty());
    }

    #[test]
    fn task_trigger_fires_once_on_target() {
        let s = FaultSchedule::new(1).with(
            FaultTrigger::AtTask(10),
            FaultKind::Hang,
            FaultTarget::Worker {
                role: WorkerRole::Renderer,
                index: 0,
            },
        );
        let plan = apply_faults(&s, &topo()).unwrap();
        assert!(plan.poll(WorkerRole::Renderer, 1, Some(10), 5).is_empty());
        assert_eq!(plan.poll(WorkerRole::Renderer, 0, Some(10), 7), vec![FaultKind::Hang]);
        assert!(plan.poll(WorkerRole::Renderer, 0, Some(10), 9).is_empty());
        let log = plan.fired();
        assert_eq!(log.len(), 1);
        assert_eq!((log[0].at_us, log[0].task_id), (7, Some(10)));
    }

    #[test]
    fn fraction_is_seeded_and_rounds_up() {
        let s = FaultSchedule::new(42).with(
            FaultTrigger::AtTimeMs(30.0),
            FaultKind::Crash,
            FaultTarget::Fraction {
                role: WorkerRole::Renderer,
                fraction: 0.15,
            },
        );
        let a = apply_faults(&s, &topo()).unwrap().targets();
        let b = apply_faults(&s, &topo()).unwrap().targets();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        let plan = apply_faults(&s, &topo()).unwrap();
        let (_, Some((_, w))) = a[0].clone() else { panic!() };
        assert!(plan.poll(WorkerRole::Renderer, w, None, 29_999).is_empty());
        assert_eq!(plan.poll(WorkerRole::Renderer, w, None, 30_000), vec![FaultKind::Crash]);
    }

    #[test]
    fn missing_targets_rejected() {
        let s = FaultSchedule::new(0).with(
            FaultTrigger::AtTask(1),
            FaultKind::Crash,
            FaultTarget::Worker {
                role: WorkerRole::Planner,
                index: 2,
            },
        );
        assert!(matches!(apply_faults(&s, &topo()), Err(TargetNotFound::Worker { .. })));
        let s = FaultSchedule::new(0).with(FaultTrigger::AtTask(100), FaultKind::Hang, FaultTarget::Any);
        assert!(matches!(apply_faults(&s, &topo()), Err(TargetNotFound::Task { .. })));
    }
}
