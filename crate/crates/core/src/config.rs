//! Scheduler and service settings: defaults, TOML file, `MODELCMP_*`
//! environment overrides.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest dispatch rate accepted from configuration (tasks per second).
pub const MAX_QUEUE_RATE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Bucket refill rate, tasks per second.
    pub queue_rate: f64,
    /// Bucket capacity in tokens.
    pub bucket_size: u32,
    pub workers: usize,
    /// Compare tasks enqueued per distribution chunk.
    pub chunk_budget: usize,
    pub max_retries: u32,
    pub retention_days: u64,
    /// Parsed structures kept in memory; 0 disables the cache.
    pub cache_capacity: usize,
    /// Longest an idle worker sleeps before re-checking the queue.
    pub poll_interval_ms: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            queue_rate: 4.0,
            bucket_size: 10,
            workers: 4,
            chunk_budget: 1000,
            max_retries: 3,
            retention_days: 7,
            cache_capacity: 256,
            poll_interval_ms: 50,
        }
    }
}

impl SchedulerConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies `MODELCMP_QUEUE_RATE`, `MODELCMP_BUCKET_SIZE`, `MODELCMP_WORKERS`,
    /// `MODELCMP_CHUNK_BUDGET`, `MODELCMP_MAX_RETRIES`, `MODELCMP_RETENTION_DAYS`
    /// and `MODELCMP_CACHE_CAPACITY` from `vars`.
    pub fn apply_env<I, K, V>(mut self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        fn parse<T: std::str::FromStr>(name: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{name}={v:?} is not a valid value")))
        }
        for (k, v) in vars {
            let (k, v) = (k.as_ref(), v.as_ref());
            match k {
                "MODELCMP_QUEUE_RATE" => self.queue_rate = parse(k, v)?,
                "MODELCMP_BUCKET_SIZE" => self.bucket_size = parse(k, v)?,
                "MODELCMP_WORKERS" => self.workers = parse(k, v)?,
                "MODELCMP_CHUNK_BUDGET" => self.chunk_budget = parse(k, v)?,
                "MODELCMP_MAX_RETRIES" => self.max_retries = parse(k, v)?,
                "MODELCMP_RETENTION_DAYS" => self.retention_days = parse(k, v)?,
                "MODELCMP_CACHE_CAPACITY" => self.cache_capacity = parse(k, v)?,
                _ => {}
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.queue_rate > 0.0 && self.queue_rate <= MAX_QUEUE_RATE) {
            return Err(Error::Invalid(format!(
                "queue rate must be in (0, {MAX_QUEUE_RATE}], got {}",
                self.queue_rate
            )));
        }
        if self.bucket_size == 0 {
            return Err(Error::Invalid("bucket size must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Invalid("at least one worker is required".into()));
        }
        if self.chunk_budget == 0 {
            return Err(Error::Invalid("chunk budget must be positive".into()));
        }
        Ok(())
    }

    pub fn retention(&self) -> Duration {
        Duration::from_secs(self.retention_days * 24 * 3600)
    }

    pub fn poll_interval(&self) -> Duration {
        Duration::from_millis(self.poll_interval_ms.max(1))
    }
}
