//! The comparison engine: experiments in the store, tasks in the queue,
//! workers pulling tasks through the token bucket.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::config::SchedulerConfig;
use crate::error::{Error, Result};
use crate::experiment::{
    self, ComparisonResult, Experiment, ExperimentConfig, ExperimentState, HistogramData, Outcome, StructureRef,
};
use crate::measures::compare_pair;
use crate::model_io::{model_digest, name_from_path, parse_pdb, StructureModel};
use crate::scheduler::{Clock, StructureCache, SystemClock, Task, TaskKind, TaskQueue, TokenBucket};
use crate::store::{EntityKind, Store, MAX_STRUCTURE_BYTES};

/// Dispatch timestamps kept for inspection.
const DISPATCH_LOG_LIMIT: usize = 1_000_000;
/// Store round trips tried while recording a given-up pair before the task
/// goes back to the queue.
const GIVE_UP_ATTEMPTS: usize = 32;
const RESULT_PAGE: usize = 1000;

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn result_key(experiment: &str, pair_index: usize) -> String {
    format!("{experiment}/{pair_index:06}")
}

struct Inner {
    store: Arc<Store>,
    queue: TaskQueue,
    bucket: Option<Mutex<TokenBucket>>,
    cache: StructureCache,
    config: SchedulerConfig,
    clock: Arc<dyn Clock>,
    dispatch_log: Mutex<VecDeque<Duration>>,
    idle_wakeups: AtomicU64,
}

/// Shared handle to one engine instance. Cloning is cheap.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

pub struct EngineBuilder {
    store: Arc<Store>,
    config: SchedulerConfig,
    clock: Arc<dyn Clock>,
    gated: bool,
}

impl EngineBuilder {
    pub fn config(mut self, config: SchedulerConfig) -> Self {
        self.config = config;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Dispatch without a token bucket, for local runs and benchmarks.
    pub fn ungated(mut self) -> Self {
        self.gated = false;
        self
    }

    /// Builds the engine, reloading tasks a previous process left queued.
    pub fn build(self) -> Result<Engine> {
        self.config.validate()?;
        let queue = TaskQueue::restore(self.store.clone())?;
        let bucket = self.gated.then(|| {
            Mutex::new(TokenBucket::new(
                self.config.bucket_size,
                self.config.queue_rate,
                self.clock.now(),
            ))
        });
        Ok(Engine {
            inner: Arc::new(Inner {
                cache: StructureCache::new(self.config.cache_capacity),
                store: self.store,
                queue,
                bucket,
                config: self.config,
                clock: self.clock,
                dispatch_log: Mutex::new(VecDeque::new()),
                idle_wakeups: AtomicU64::new(0),
            }),
        })
    }
}

impl Engine {
    pub fn builder(store: Arc<Store>) -> EngineBuilder {
        EngineBuilder {
            store,
            config: SchedulerConfig::default(),
            clock: Arc::new(SystemClock::new()),
            gated: true,
        }
    }

    /// Ungated engine over an in-memory store.
    pub fn in_memory() -> Self {
        Self::builder(Arc::new(Store::in_memory()))
            .ungated()
            .build()
            .expect("default configuration is valid")
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.inner.store
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.inner.queue
    }

    pub fn cache(&self) -> &StructureCache {
        &self.inner.cache
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.inner.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    /// Clock readings of every dispatch so far, oldest first.
    pub fn dispatch_log(&self) -> Vec<Duration> {
        self.inner.dispatch_log.lock().unwrap().iter().copied().collect()
    }

    /// Times a worker woke up to find the queue empty.
    pub fn idle_wakeups(&self) -> u64 {
        self.inner.idle_wakeups.load(Ordering::Relaxed)
    }

    pub fn create_experiment(&self, config: ExperimentConfig) -> Result<Experiment> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let exp = Experiment::new(id, config, unix_now());
        self.inner.store.put_json(EntityKind::Experiment, &exp.id, &exp)?;
        Ok(exp)
    }

    pub fn experiment(&self, id: &str) -> Result<Experiment> {
        self.inner.store.get_json(EntityKind::Experiment, id)
    }

    /// Stores and registers one uploaded PDB file. The file is parsed now so
    /// format problems surface at upload time.
    pub fn upload_structure(&self, experiment_id: &str, filename: &str, bytes: &[u8]) -> Result<StructureRef> {
        let exp = self.experiment(experiment_id)?;
        if !matches!(exp.state, ExperimentState::Setup | ExperimentState::Uploading) {
            return Err(Error::State(format!("cannot upload while {}", exp.status_line())));
        }
        if bytes.len() > MAX_STRUCTURE_BYTES {
            return Err(Error::EntityTooLarge {
                size: bytes.len(),
                limit: MAX_STRUCTURE_BYTES,
            });
        }
        let name = name_from_path(filename);
        let model = parse_pdb(bytes, &name)?;
        let sref = StructureRef {
            key: format!("{experiment_id}/{}", uuid::Uuid::new_v4().simple()),
            name,
            digest: model_digest(&model),
            length: model.declared_length(),
        };
        self.inner.store.put(EntityKind::Structure, &sref.key, bytes)?;
        self.inner
            .store
            .update_json(EntityKind::Experiment, experiment_id, |mut e: Experiment| {
                e.add_structure(sref.clone())?;
                Ok(e)
            })?;
        Ok(sref)
    }

    /// Raw bytes of an uploaded file.
    pub fn structure_file(&self, key: &str) -> Result<Vec<u8>> {
        self.inner.store.get(EntityKind::Structure, key)
    }

    /// Generates the pairs, moves the experiment to `Running` and queues the
    /// first distribution chunk. Returns the number of pairs.
    pub fn start(&self, experiment_id: &str) -> Result<usize> {
        let exp = self
            .inner
            .store
            .update_json(EntityKind::Experiment, experiment_id, |mut e: Experiment| {
                e.start()?;
                Ok(e)
            })?;
        self.push(TaskKind::DistributeChunk {
            experiment: experiment_id.to_string(),
            cursor: 0,
        })?;
        Ok(exp.total_pairs)
    }

    /// Queues a retention sweep.
    pub fn schedule_cleanup(&self) -> Result<()> {
        self.push(TaskKind::CleanupExpired).map(drop)
    }

    fn push(&self, kind: TaskKind) -> Result<Task> {
        self.inner.queue.push(kind)
    }

    /// Every persisted result of an experiment, in pair order.
    pub fn results(&self, experiment_id: &str) -> Result<Vec<ComparisonResult>> {
        let prefix = format!("{experiment_id}/");
        let mut out = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let page = self
                .inner
                .store
                .list_by_kind(EntityKind::Result, &prefix, cursor.as_deref(), RESULT_PAGE)?;
            for (_, body) in &page.entries {
                out.push(serde_json::from_slice(body)?);
            }
            match page.next_cursor {
                Some(c) => cursor = Some(c),
                None => break,
            }
        }
        Ok(out)
    }

    pub fn results_file(&self, experiment_id: &str) -> Result<Vec<u8>> {
        let exp = self.experiment(experiment_id)?;
        if !exp.state.is_terminal() {
            return Err(Error::State(format!("experiment is {}", exp.status_line())));
        }
        experiment::results_file(&exp, &self.results(experiment_id)?)
    }

    pub fn histograms(&self, experiment_id: &str) -> Result<(Experiment, Vec<HistogramData>)> {
        let exp = self.experiment(experiment_id)?;
        if !exp.state.is_terminal() {
            return Err(Error::State(format!("experiment is {}", exp.status_line())));
        }
        let results = self.results(experiment_id)?;
        let hists = exp
            .config
            .measures
            .iter()
            .filter_map(|m| experiment::histogram(&results, m, experiment::HISTOGRAM_BINS).ok())
            .collect();
        Ok((exp, hists))
    }

    pub fn histograms_json(&self, experiment_id: &str) -> Result<String> {
        let exp = self.experiment(experiment_id)?;
        if !exp.state.is_terminal() {
            return Err(Error::State(format!("experiment is {}", exp.status_line())));
        }
        Ok(experiment::histograms_json(&exp, &self.results(experiment_id)?))
    }

    /// Queues `ComparePair` tasks for pairs `cursor..cursor + chunk_budget`.
    /// Returns the cursor of the follow-up chunk, or `None` once every pair
    /// has been handed out.
    pub fn distribute_chunk(&self, experiment_id: &str, cursor: usize) -> Result<Option<usize>> {
        let exp = self.experiment(experiment_id)?;
        if exp.state != ExperimentState::Running {
            if exp.state.is_terminal() {
                return Ok(None);
            }
            return Err(Error::State(format!("cannot distribute while {}", exp.status_line())));
        }
        if cursor > exp.total_pairs {
            return Err(Error::Index {
                index: cursor,
                len: exp.total_pairs,
            });
        }
        let end = (cursor + self.inner.config.chunk_budget).min(exp.total_pairs);
        for pair_index in cursor..end {
            if !exp.is_recorded(pair_index) {
                self.push(TaskKind::ComparePair {
                    experiment: experiment_id.to_string(),
                    pair_index,
                })?;
            }
        }
        if end < exp.total_pairs {
            self.push(TaskKind::DistributeChunk {
                experiment: experiment_id.to_string(),
                cursor: end,
            })?;
            return Ok(Some(end));
        }
        self.inner
            .store
            .update_json(EntityKind::Experiment, experiment_id, |mut e: Experiment| {
                e.distribution_done = true;
                Ok(e)
            })?;
        Ok(None)
    }

    fn load_model(&self, sref: &StructureRef) -> Result<Arc<StructureModel>> {
        if let Some(m) = self.inner.cache.get(&sref.digest) {
            return Ok(m);
        }
        let bytes = self.inner.store.get(EntityKind::Structure, &sref.key)?;
        let model = parse_pdb(&bytes, &sref.name)?;
        if model_digest(&model) != sref.digest {
            return Err(Error::Corrupt(format!("structure {} changed since upload", sref.key)));
        }
        let model = Arc::new(model);
        self.inner.cache.insert(sref.digest.clone(), model.clone());
        Ok(model)
    }

    fn compute(&self, exp: &Experiment, pair_index: usize) -> Result<ComparisonResult> {
        let (ia, ib) = exp.pair(pair_index)?;
        let (ra, rb) = (&exp.structures[ia], &exp.structures[ib]);
        let models = self.load_model(ra).and_then(|a| Ok((a, self.load_model(rb)?)));
        let outcome = match models {
            Ok((a, b)) => {
                let c = &exp.config;
                compare_pair(&a, &b, c.measures, c.scale, c.mode, exp.target_len())
            }
            Err(e) => Err(e),
        };
        match outcome {
            Ok(values) => Ok(ComparisonResult {
                pair_index,
                id_a: ra.key.clone(),
                id_b: rb.key.clone(),
                name_a: ra.name.clone(),
                name_b: rb.name.clone(),
                outcome: Outcome::Values(values),
            }),
            Err(e) if e.is_transient() => Err(e),
            Err(e) => Ok(ComparisonResult::error(pair_index, ra, rb, &e)),
        }
    }

    fn record(&self, experiment_id: &str, result: &ComparisonResult) -> Result<()> {
        let outcome = self
            .inner
            .store
            .update_json(EntityKind::Experiment, experiment_id, |mut e: Experiment| {
                e.record_result(result)?;
                Ok(e)
            });
        match outcome {
            Ok(_) | Err(Error::DuplicateResult(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }

    /// Computes, persists and records one pair. Safe to repeat: a recorded
    /// pair is skipped and a persisted result is reused.
    fn compare_task(&self, experiment_id: &str, pair_index: usize) -> Result<()> {
        let exp = self.experiment(experiment_id)?;
        if exp.state != ExperimentState::Running || exp.is_recorded(pair_index) {
            return Ok(());
        }
        let key = result_key(experiment_id, pair_index);
        let result = match self.inner.store.get_json::<ComparisonResult>(EntityKind::Result, &key) {
            Ok(r) => r,
            Err(Error::NotFound(_)) => {
                let r = self.compute(&exp, pair_index)?;
                self.inner.store.put_json(EntityKind::Result, &key, &r)?;
                r
            }
            Err(e) => return Err(e),
        };
        self.record(experiment_id, &result)
    }

    /// Records the pair as failed (unless a result already exists) so the
    /// experiment can still terminate.
    fn give_up(&self, experiment_id: &str, pair_index: usize, cause: &Error) -> Result<()> {
        let exp = self.experiment(experiment_id)?;
        if exp.state != ExperimentState::Running || exp.is_recorded(pair_index) {
            return Ok(());
        }
        let key = result_key(experiment_id, pair_index);
        let result = match self.inner.store.get_json::<ComparisonResult>(EntityKind::Result, &key) {
            Ok(r) => r,
            Err(Error::NotFound(_)) => {
                let (ia, ib) = exp.pair(pair_index)?;
                let r = ComparisonResult::error(pair_index, &exp.structures[ia], &exp.structures[ib], cause);
                self.inner.store.put_json(EntityKind::Result, &key, &r)?;
                r
            }
            Err(e) => return Err(e),
        };
        self.record(experiment_id, &result)
    }

    /// Deletes experiments created more than the retention period before
    /// `now` (Unix seconds), with their structures and results. Returns how
    /// many experiments were removed.
    pub fn cleanup_expired(&self, now: u64) -> Result<usize> {
        let store = &self.inner.store;
        let retention = self.inner.config.retention().as_secs();
        let mut removed = 0;
        for id in store.keys(EntityKind::Experiment, "")? {
            let exp: Experiment = match store.get_json(EntityKind::Experiment, &id) {
                Ok(e) => e,
                Err(Error::NotFound(_)) => continue,
                Err(e) => return Err(e),
            };
            if exp.created_at.saturating_add(retention) > now {
                continue;
            }
            let prefix = format!("{id}/");
            for kind in [EntityKind::Result, EntityKind::Structure] {
                for key in store.keys(kind, &prefix)? {
                    store.delete(kind, &key)?;
                }
            }
            store.delete(EntityKind::Experiment, &id)?;
            removed += 1;
        }
        Ok(removed)
    }

    /// Executes one task and settles it with the queue: completed, requeued
    /// for another attempt, or given up on.
    pub fn run_task(&self, mut task: Task) -> Result<()> {
        let outcome = match &task.kind {
            TaskKind::ComparePair {
                experiment,
                pair_index,
            } => self.compare_task(experiment, *pair_index),
            TaskKind::DistributeChunk { experiment, cursor } => self.distribute_chunk(experiment, *cursor).map(drop),
            TaskKind::CleanupExpired => self.cleanup_expired(unix_now()).map(drop),
        };
        let err = match outcome {
            Ok(()) => return self.inner.queue.complete(&task),
            Err(e) => e,
        };
        // the experiment is gone: nothing left to do for this task
        if matches!(err, Error::NotFound(_)) && self.experiment_missing(&task) {
            return self.inner.queue.complete(&task);
        }
        task.attempts += 1;
        if task.attempts <= self.inner.config.max_retries {
            self.inner.queue.requeue(task)?;
            return Err(err);
        }
        match &task.kind {
            TaskKind::ComparePair {
                experiment,
                pair_index,
            } => {
                for _ in 0..GIVE_UP_ATTEMPTS {
                    if self.give_up(experiment, *pair_index, &err).is_ok() {
                        return self.inner.queue.complete(&task);
                    }
                }
                self.inner.queue.requeue(task)?;
            }
            // distribution must not be dropped: the pairs would be lost
            TaskKind::DistributeChunk { .. } if err.is_transient() => self.inner.queue.requeue(task)?,
            _ => self.inner.queue.complete(&task)?,
        }
        Err(err)
    }

    fn experiment_missing(&self, task: &Task) -> bool {
        let id = match &task.kind {
            TaskKind::ComparePair { experiment, .. } | TaskKind::DistributeChunk { experiment, .. } => experiment,
            TaskKind::CleanupExpired => return false,
        };
        matches!(self.inner.store.contains(EntityKind::Experiment, id), Ok(false))
    }

    /// Takes the next task, waiting for one to be queued and for a token.
    /// Returns `None` once the queue is shut down.
    fn next_task(&self) -> Option<Task> {
        let queue = &self.inner.queue;
        let poll = self.inner.config.poll_interval();
        let mut st = queue.lock();
        loop {
            if st.shutdown {
                return None;
            }
            if st.tasks.is_empty() {
                st = queue.ready.wait_timeout(st, poll).unwrap().0;
                self.inner.idle_wakeups.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            let now = self.inner.clock.now();
            let wait = match &self.inner.bucket {
                None => Duration::ZERO,
                Some(bucket) => {
                    let mut b = bucket.lock().unwrap();
                    if b.try_acquire(now) {
                        Duration::ZERO
                    } else {
                        b.time_until_token()
                    }
                }
            };
            if wait.is_zero() {
                let task = st.tasks.pop_front().expect("queue checked non-empty");
                st.in_flight += 1;
                let mut log = self.inner.dispatch_log.lock().unwrap();
                if log.len() == DISPATCH_LOG_LIMIT {
                    log.pop_front();
                }
                log.push_back(now);
                return Some(task);
            }
            let nap = self.inner.clock.real(wait).min(poll).max(Duration::from_micros(100));
            st = queue.ready.wait_timeout(st, nap).unwrap().0;
        }
    }

    fn finish_task(&self) {
        let queue = &self.inner.queue;
        let mut st = queue.lock();
        st.in_flight -= 1;
        if st.tasks.is_empty() && st.in_flight == 0 {
            queue.idle.notify_all();
        }
    }

    fn worker_loop(&self) {
        while let Some(task) = self.next_task() {
            // failures are already requeued or recorded by run_task
            let _ = self.run_task(task);
            self.finish_task();
        }
    }

    /// Starts `workers` threads pulling from the queue.
    pub fn spawn_workers(&self, workers: usize) -> WorkerPool {
        assert!(workers >= 1, "at least one worker is required");
        self.inner.queue.lock().shutdown = false;
        let handles = (0..workers)
            .map(|i| {
                let engine = self.clone();
                std::thread::Builder::new()
                    .name(format!("modelcmp-worker-{i}"))
                    .spawn(move || engine.worker_loop())
                    .expect("spawn worker thread")
            })
            .collect();
        WorkerPool {
            engine: self.clone(),
            handles,
        }
    }

    /// Runs queued tasks on the calling thread, ignoring the bucket, until
    /// the queue is empty.
    pub fn run_until_idle(&self) {
        loop {
            let task = {
                let mut st = self.inner.queue.lock();
                match st.tasks.pop_front() {
                    Some(t) => {
                        st.in_flight += 1;
                        t
                    }
                    None => return,
                }
            };
            let _ = self.run_task(task);
            self.finish_task();
        }
    }

    /// Blocks until nothing is queued or running, or `timeout` passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let queue = &self.inner.queue;
        let mut st = queue.lock();
        while !(st.tasks.is_empty() && st.in_flight == 0) {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return false;
            }
            st = queue.idle.wait_timeout(st, left.min(Duration::from_millis(50))).unwrap().0;
        }
        true
    }

    /// Polls until the experiment reaches a terminal state.
    pub fn wait_terminal(&self, experiment_id: &str, timeout: Duration) -> Result<Experiment> {
        let deadline = Instant::now() + timeout;
        loop {
            match self.experiment(experiment_id) {
                Ok(e) if e.state.is_terminal() => return Ok(e),
                Ok(_) => {}
                Err(e) if e.is_transient() => {}
                Err(e) => return Err(e),
            }
            if Instant::now() >= deadline {
                let status = self.experiment(experiment_id).map(|e| e.status_line()).unwrap_or_default();
                return Err(Error::State(format!("timed out waiting for {experiment_id}: {status}")));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

/// Running worker threads. Dropping the pool shuts it down.
pub struct WorkerPool {
    engine: Engine,
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn workers(&self) -> usize {
        self.handles.len()
    }

    /// Stops taking new tasks, lets running ones finish and joins the
    /// threads. Pending tasks stay in the (persisted) queue.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let queue = &self.engine.inner.queue;
        queue.lock().shutdown = true;
        queue.ready.notify_all();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.stop();
    }
}
