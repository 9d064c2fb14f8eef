//! Out-of-band liveness supervision: workers ship status heartbeats, the
//! supervisor polls for staleness and converts silent hangs into fail-stop
//! failures by killing and respawning the unit.

mod monitor;
mod policy;
mod runtime;
mod status;
mod unit;

pub use monitor::{
    HeartbeatVerdict, RespawnOutcome, Respawner, Supervisor, SupervisorError, SupervisorEvent, UnitState,
};
pub use policy::SupervisorPolicy;
pub use runtime::SupervisorRuntime;
pub use status::{Heartbeat, Phase, StatusMonitor, StatusRecord};
pub use unit::{ExecutionUnit, ProcessUnit, ThreadUnit, UnitControl};
