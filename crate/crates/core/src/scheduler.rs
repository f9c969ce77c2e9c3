//! Task scheduling primitives: the token bucket that gates dispatch, the
//! persistent FIFO task queue, the parsed-structure cache and the clock the
//! workers run on.

use std::collections::VecDeque;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model_io::StructureModel;
use crate::store::{EntityKind, Store};

/// Monotonic time source for the scheduler.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    /// Real time that passes while `d` elapses on this clock.
    fn real(&self, d: Duration) -> Duration {
        d
    }
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Wall clock running `factor` times faster than real time. Lets long
/// rate-limited runs be replayed in a fraction of the time.
#[derive(Debug)]
pub struct ScaledClock {
    origin: Instant,
    factor: f64,
}

impl ScaledClock {
    pub fn new(factor: f64) -> Self {
        assert!(factor > 0.0 && factor.is_finite());
        Self {
            origin: Instant::now(),
            factor,
        }
    }
}

impl Clock for ScaledClock {
    fn now(&self) -> Duration {
        self.origin.elapsed().mul_f64(self.factor)
    }

    fn real(&self, d: Duration) -> Duration {
        d.div_f64(self.factor)
    }
}

/// Token bucket: `capacity` tokens at most, refilled continuously at
/// `refill_rate` tokens per second. One token dispatches one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    capacity: u32,
    refill_rate: f64,
    tokens: f64,
    last_refill: Duration,
}

impl TokenBucket {
    /// A full bucket.
    pub fn new(capacity: u32, refill_rate: f64, now: Duration) -> Self {
        assert!(capacity >= 1, "bucket capacity must be positive");
        assert!(refill_rate > 0.0 && refill_rate.is_finite(), "refill rate must be positive");
        Self {
            capacity,
            refill_rate,
            tokens: capacity as f64,
            last_refill: now,
        }
    }

    /// Same bucket with a chosen fill level.
    pub fn with_tokens(mut self, tokens: f64) -> Self {
        self.tokens = tokens.clamp(0.0, self.capacity as f64);
        self
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn refill_rate(&self) -> f64 {
        self.refill_rate
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    fn refill(&mut self, now: Duration) {
        // a timestamp behind last_refill adds nothing
        let elapsed = now.saturating_sub(self.last_refill).as_secs_f64();
        self.tokens = (self.tokens + self.refill_rate * elapsed).min(self.capacity as f64);
        self.last_refill = self.last_refill.max(now);
    }

    pub fn try_acquire(&mut self, now: Duration) -> bool {
        self.refill(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }

    /// How long until a token becomes available, as of the last refill.
    pub fn time_until_token(&self) -> Duration {
        if self.tokens >= 1.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64((1.0 - self.tokens) / self.refill_rate)
        }
    }
}

/// A window of a dispatch log that held more dispatches than the bucket
/// allows.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub start: Duration,
    pub end: Duration,
    pub count: usize,
    pub allowed: f64,
}

/// Checks `count <= capacity + rate * T` for every window of a dispatch log.
///
/// The densest windows start and end on dispatch events, so checking every
/// pair of events covers all windows. `log` must be sorted.
pub fn check_dispatch_bound(log: &[Duration], capacity: u32, rate: f64) -> std::result::Result<(), BoundViolation> {
    const EPS: f64 = 1e-9;
    for i in 0..log.len() {
        for j in i..log.len() {
            let span = (log[j] - log[i]).as_secs_f64();
            let count = j - i + 1;
            let allowed = capacity as f64 + rate * span;
            if count as f64 > allowed + EPS {
                return Err(BoundViolation {
                    start: log[i],
                    end: log[j],
                    count,
                    allowed,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ComparePair { experiment: String, pair_index: usize },
    DistributeChunk { experiment: String, cursor: usize },
    CleanupExpired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub kind: TaskKind,
    pub attempts: u32,
}

impl Task {
    fn store_key(&self) -> String {
        format!("{:020}", self.id)
    }
}

pub(crate) struct QueueState {
    pub(crate) tasks: VecDeque<Task>,
    pub(crate) in_flight: usize,
    pub(crate) shutdown: bool,
}

/// FIFO of pending tasks, mirrored into the store so a restart picks up
/// where the previous process left off.
pub struct TaskQueue {
    pub(crate) state: Mutex<QueueState>,
    pub(crate) ready: Condvar,
    pub(crate) idle: Condvar,
    next_id: AtomicU64,
    store: Option<Arc<Store>>,
}

impl TaskQueue {
    pub fn new(store: Option<Arc<Store>>) -> Self {
        Self {
            state: Mutex::new(QueueState {
                tasks: VecDeque::new(),
                in_flight: 0,
                shutdown: false,
            }),
            ready: Condvar::new(),
            idle: Condvar::new(),
            next_id: AtomicU64::new(1),
            store,
        }
    }

    /// Reloads tasks persisted by an earlier process, oldest first.
    pub fn restore(store: Arc<Store>) -> Result<Self> {
        let queue = Self::new(Some(store.clone()));
        let mut max_id = 0;
        {
            let mut st = queue.lock();
            for key in store.keys(EntityKind::Task, "")? {
                let task: Task = store.get_json(EntityKind::Task, &key)?;
                max_id = max_id.max(task.id);
                st.tasks.push_back(task);
            }
        }
        queue.next_id.store(max_id + 1, Ordering::SeqCst);
        Ok(queue)
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap()
    }

    pub fn push(&self, kind: TaskKind) -> Result<Task> {
        let task = Task {
            id: self.next_id.fetch_add(1, Ordering::SeqCst),
            kind,
            attempts: 0,
        };
        self.persist(&task)?;
        self.lock().tasks.push_back(task.clone());
        self.ready.notify_one();
        Ok(task)
    }

    /// Puts a failed task back at the end of the queue.
    pub fn requeue(&self, task: Task) -> Result<()> {
        self.persist(&task)?;
        self.lock().tasks.push_back(task);
        self.ready.notify_one();
        Ok(())
    }

    /// Forgets a finished task.
    pub fn complete(&self, task: &Task) -> Result<()> {
        if let Some(store) = &self.store {
            retry_transient(|| store.delete(EntityKind::Task, &task.store_key()).map(drop))?;
        }
        Ok(())
    }

    fn persist(&self, task: &Task) -> Result<()> {
        if let Some(store) = &self.store {
            retry_transient(|| store.put_json(EntityKind::Task, &task.store_key(), task))?;
        }
        Ok(())
    }

    /// Removes the oldest task without waiting or taking a token.
    pub fn pop(&self) -> Option<Task> {
        self.lock().tasks.pop_front()
    }

    pub fn len(&self) -> usize {
        self.lock().tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pending(&self) -> Vec<Task> {
        self.lock().tasks.iter().cloned().collect()
    }

    /// True when nothing is queued and nothing is running.
    pub fn is_idle(&self) -> bool {
        let st = self.lock();
        st.tasks.is_empty() && st.in_flight == 0
    }
}

/// Attempts per queue write before the failure reaches the caller.
const PERSIST_ATTEMPTS: usize = 16;

fn retry_transient(mut op: impl FnMut() -> Result<()>) -> Result<()> {
    let mut last = None;
    for _ in 0..PERSIST_ATTEMPTS {
        match op() {
            Ok(()) => return Ok(()),
            Err(e) if e.is_transient() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// LRU map from model digest to parsed model. Capacity 0 disables caching.
pub struct StructureCache {
    inner: Option<Mutex<LruCache<String, Arc<StructureModel>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl StructureCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c))),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn get(&self, digest: &str) -> Option<Arc<StructureModel>> {
        let found = self
            .inner
            .as_ref()
            .and_then(|m| m.lock().unwrap().get(digest).cloned());
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn insert(&self, digest: String, model: Arc<StructureModel>) {
        if let Some(m) = &self.inner {
            m.lock().unwrap().put(digest, model);
        }
    }

    pub fn len(&self) -> usize {
        self.inner.as_ref().map_or(0, |m| m.lock().unwrap().len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.inner.as_ref().map_or(0, |m| m.lock().unwrap().cap().get())
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}
