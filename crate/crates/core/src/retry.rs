//! Exponential backoff shared by the HTTP clients.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_INITIAL_BACKOFF: Duration = Duration::from_secs(1);
pub const DEFAULT_MAX_BACKOFF: Duration = Duration::from_secs(60);

/// Delay before retry `n` is `min(cap, initial * 2^n)` scaled by a uniform
/// jitter factor in `[0.5, 1.0]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backoff {
    #[serde(with = "secs_f64")]
    pub initial: Duration,
    #[serde(with = "secs_f64")]
    pub cap: Duration,
    pub jitter: bool,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial: DEFAULT_INITIAL_BACKOFF,
            cap: DEFAULT_MAX_BACKOFF,
            jitter: true,
        }
    }
}

impl Backoff {
    /// No waiting at all; used by tests and dry runs.
    pub fn none() -> Self {
        Self {
            initial: Duration::ZERO,
            cap: Duration::ZERO,
            jitter: false,
        }
    }

    pub fn ceiling(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(31));
        self.initial.saturating_mul(factor).min(self.cap)
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let ceiling = self.ceiling(retry);
        if !self.jitter || ceiling.is_zero() {
            return ceiling;
        }
        ceiling.mul_f64(rand::rng().random_range(0.5..=1.0))
    }

    pub fn wait(&self, retry: u32) {
        let d = self.delay(retry);
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }
}

pub(crate) mod secs_f64 {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}
