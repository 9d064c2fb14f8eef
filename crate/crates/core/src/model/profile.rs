use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{ms_to_us, Micros};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("{field}: probability {value} outside [0, 1]")]
    ProbabilityOutOfRange { field: String, value: f64 },
    #[error("{field}: {reason}")]
    InvalidLatency { field: String, reason: String },
}

/// Stage latency distribution, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyDist {
    Constant {
        ms: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `mu` and `sigma` parameterize the natural log of the latency in ms.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
}

impl LatencyDist {
    pub fn constant(ms: f64) -> Self {
        LatencyDist::Constant { ms }
    }

    pub fn zero() -> Self {
        LatencyDist::Constant { ms: 0.0 }
    }

    /// Lognormal with the given mean (ms) and log-space sigma.
    pub fn lognormal_with_mean(mean_ms: f64, sigma: f64) -> Self {
        LatencyDist::Lognormal {
            mu: mean_ms.ln() - sigma * sigma / 2.0,
            sigma,
        }
    }

    pub fn mean_ms(&self) -> f64 {
        match *self {
            LatencyDist::Constant { ms } => ms,
            LatencyDist::Uniform { lo, hi } => (lo + hi) / 2.0,
            LatencyDist::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, LatencyDist::Constant { .. })
    }

    /// Multiplies every draw by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            LatencyDist::Constant { ms } => LatencyDist::Constant { ms: ms * factor },
            LatencyDist::Uniform { lo, hi } => LatencyDist::Uniform {
                lo: lo * factor,
                hi: hi * factor,
            },
            LatencyDist::Lognormal { mu, sigma } => LatencyDist::Lognormal {
                mu: mu + factor.ln(),
                sigma,
            },
        }
    }

    pub fn sample_ms<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LatencyDist::Constant { ms } => ms,
            LatencyDist::Uniform { lo, hi } => {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
            LatencyDist::Lognormal { mu, sigma } => match LogNormal::new(mu, sigma) {
                Ok(d) => d.sample(rng),
                Err(_) => mu.exp(),
            },
        }
    }

    /// A draw quantized to whole microseconds.
    pub fn sample_us<R: Rng + ?Sized>(&self, rng: &mut R) -> Micros {
        ms_to_us(self.sample_ms(rng))
    }

    pub fn validate(&self, field: &str) -> Result<(), ProfileError> {
        let bad = |reason: &str| {
            Err(ProfileError::InvalidLatency {
                field: field.to_string(),
                reason: reason.to_string(),
            })
        };
        match *self {
            LatencyDist::Constant { ms } if !(ms.is_finite() && ms >= 0.0) => {
                bad("constant latency must be finite and >= 0")
            }
            LatencyDist::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo) => {
                bad("uniform bounds must satisfy 0 <= lo <= hi")
            }
            LatencyDist::Lognormal { mu, sigma } if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) => {
                bad("lognormal needs finite mu and sigma >= 0")
            }
            _ => Ok(()),
        }
    }
}

/// Distribution of frames per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FrameDist {
    Constant { frames: u32 },
    Uniform { lo: u32, hi: u32 },
}

impl Default for FrameDist {
    fn default() -> Self {
        FrameDist::Constant { frames: 32 }
    }
}

impl FrameDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            FrameDist::Constant { frames } => frames.max(1),
            FrameDist::Uniform { lo, hi } => rng.random_range(lo.max(1)..=hi.max(lo.max(1))),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            FrameDist::Constant { frames } => f64::from(frames.max(1)),
            FrameDist::Uniform { lo, hi } => {
                let lo = lo.max(1);
                (f64::from(lo) + f64::from(hi.max(lo))) / 2.0
            }
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        match *self {
            FrameDist::Constant { frames: 0 } => Err(ProfileError::InvalidLatency {
                field: "frames".into(),
                reason: "frame count must be >= 1".into(),
            }),
            FrameDist::Uniform { lo, hi } if lo == 0 || hi < lo => Err(ProfileError::InvalidLatency {
                field: "frames".into(),
                reason: "uniform frame bounds must satisfy 1 <= lo <= hi".into(),
            }),
            _ => Ok(()),
        }
    }
}

/// Parameterized synthetic behaviour of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub latency: LatencyDist,
    #[serde(default)]
    pub failure_prob: f64,
    #[serde(default)]
    pub hang_prob: f64,
    #[serde(default)]
    pub cpu_spin: bool,
}

impl WorkloadProfile {
    pub fn constant(ms: f64) -> Self {
        WorkloadProfile::from_latency(LatencyDist::constant(ms))
    }

    pub fn from_latency(latency: LatencyDist) -> Self {
        WorkloadProfile {
            latency,
            failure_prob: 0.0,
            hang_prob: 0.0,
            cpu_spin: false,
        }
    }

    pub fn pass_through() -> Self {
        WorkloadProfile::constant(0.0)
    }

    pub fn with_failure(mut self, p: f64) -> Self {
        self.failure_prob = p;
        self
    }

    pub fn with_hang(mut self, p: f64) -> Self {
        self.hang_prob = p;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        WorkloadProfile {
            latency: self.latency.scaled(factor),
            ..self.clone()
        }
    }

    pub fn validate(&self, field: &str) -> Result<(), ProfileError> {
        for (name, p) in [("failure_prob", self.failure_prob), ("hang_prob", self.hang_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ProfileError::ProbabilityOutOfRange {
                    field: format!("{field}.{name}"),
                    value: p,
                });
            }
        }
        self.latency.validate(&format!("{field}.latency"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn means_match_closed_forms() {
        assert_eq!(LatencyDist::constant(12.5).mean_ms(), 12.5);
        assert_eq!(LatencyDist::Uniform { lo: 5.0, hi: 15.0 }.mean_ms(), 10.0);
        let ln = LatencyDist::lognormal_with_mean(40.0, 0.5);
        assert!((ln.mean_ms() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn scaling_preserves_shape() {
        let ln = LatencyDist::lognormal_with_mean(40.0, 0.5).scaled(0.1);
        assert!((ln.mean_ms() - 4.0).abs() < 1e-9);
        assert_eq!(
            LatencyDist::Uniform { lo: 5.0, hi: 15.0 }.scaled(2.0),
            LatencyDist::Uniform { lo: 10.0, hi: 30.0 }
        );
    }

    #[test]
    fn lognormal_empirical_mean_converges() {
        let d = LatencyDist::lognormal_with_mean(20.0, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n).map(|_| d.sample_ms(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 20.0).abs() / 20.0 < 0.01, "mean {mean}");
    }

    #[test]
    fn rejects_bad_probabilities_and_bounds() {
        assert!(matches!(
            WorkloadProfile::constant(1.0).with_failure(1.5).validate("plan"),
            Err(ProfileError::ProbabilityOutOfRange { .. })
        ));
        assert!(LatencyDist::Uniform { lo: 3.0, hi: 1.0 }.validate("x").is_err());
        assert!(LatencyDist::constant(-1.0).validate("x").is_err());
        assert!(FrameDist::Constant { frames: 0 }.validate().is_err());
    }

    #[test]
    fn profile_round_trips_through_toml() {
        let p = WorkloadProfile::from_latency(LatencyDist::Uniform { lo: 1.0, hi: 2.0 }).with_failure(0.25);
        let text = toml::to_string(&p).unwrap();
        let back: WorkloadProfile = toml::from_str(&text).unwrap();
        assert_eq!(back, p);
        let bad = "latency = { kind = \"constant\", ms = 1.0, extra = 2 }\n";
        assert!(toml::from_str::<WorkloadProfile>(bad).is_err());
    }
}
