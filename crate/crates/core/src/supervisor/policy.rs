use serde::{Deserialize, Serialize};

/// Timeout policy of a supervisor. All durations are in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorPolicy {
    pub heartbeat_interval_ms: u64,
    pub liveness_timeout_ms: u64,
    pub max_respawns: u32,
    /// 0 kills immediately.
    pub kill_grace_ms: u64,
    pub poll_interval_ms: u64,
}

impl Default for SupervisorPolicy {
    fn default() -> Self {
        SupervisorPolicy {
            heartbeat_interval_ms: 500,
            liveness_timeout_ms: 5000,
            max_respawns: 3,
            kill_grace_ms: 0,
            poll_interval_ms: 100,
        }
    }
}

impl SupervisorPolicy {
    /// A policy scaled for tests: heartbeats every `hb` ms, timeout `timeout`.
    pub fn fast(hb: u64, timeout: u64) -> Self {
        SupervisorPolicy {
            heartbeat_interval_ms: hb,
            liveness_timeout_ms: timeout,
            poll_interval_ms: hb.max(1),
            ..Self::default()
        }
    }

    pub fn with_max_respawns(mut self, n: u32) -> Self {
        self.max_respawns = n;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.heartbeat_interval_ms == 0 {
            return Err("heartbeat_interval_ms must be >= 1".into());
        }
        if self.liveness_timeout_ms <= self.heartbeat_interval_ms {
            return Err(format!(
                "liveness_timeout_ms ({}) must exceed heartbeat_interval_ms ({})",
                self.liveness_timeout_ms, self.heartbeat_interval_ms
            ));
        }
        if self.poll_interval_ms == 0 {
            return Err("poll_interval_ms must be >= 1".into());
        }
        Ok(())
    }

    pub fn heartbeat_us(&self) -> crate::Micros {
        self.heartbeat_interval_ms * 1000
    }

    pub fn timeout_us(&self) -> crate::Micros {
        self.liveness_timeout_ms * 1000
    }

    pub fn poll_us(&self) -> crate::Micros {
        self.poll_interval_ms * 1000
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let p = SupervisorPolicy::default();
        assert_eq!(
            (
                p.heartbeat_interval_ms,
                p.liveness_timeout_ms,
                p.max_respawns,
                p.kill_grace_ms
            ),
            (500, 5000, 3, 0)
        );
        assert!(p.validate().is_ok());
        assert!(SupervisorPolicy::fast(100, 100).validate().is_err());
        let parsed: SupervisorPolicy =
            toml::from_str("liveness_timeout_ms = 800\nheartbeat_interval_ms = 100").unwrap();
        assert_eq!(parsed.max_respawns, 3);
        assert!(toml::from_str::<SupervisorPolicy>("timeout = 1").is_err());
    }
}
