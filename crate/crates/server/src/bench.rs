//! Throughput runs over synthetic decoy sets.

use std::sync::Arc;
use std::time::{Duration, Instant};

use modelcmp::model_io::write_pdb;
use modelcmp::scheduler::check_dispatch_bound;
use modelcmp::synth::decoy_set;
use modelcmp::{
    ComparisonMode, Engine, ExperimentConfig, ExperimentState, MeasureSet, Result, ScaleMode, SchedulerConfig, Store,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Smallest model count whose all-against-all run has at least `pairs` pairs.
pub fn models_for_pairs(pairs: usize) -> usize {
    let mut n = 2;
    while n * (n - 1) / 2 < pairs {
        n += 1;
    }
    n
}

/// `count` PDB files: a random target chain and noisy decoys of it.
pub fn synthetic_files(count: usize, residues: usize, seed: u64) -> Vec<(String, Vec<u8>)> {
    let mut rng = StdRng::seed_from_u64(seed);
    decoy_set(&mut rng, count.saturating_sub(1), residues, 4.0)
        .iter()
        .map(|m| (format!("{}.pdb", m.name), write_pdb(m).into_bytes()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub workers: usize,
    pub pairs: usize,
    pub elapsed: Duration,
    pub dispatch_log: Vec<Duration>,
    pub state: ExperimentState,
}

impl BenchRun {
    pub fn pairs_per_second(&self) -> f64 {
        self.pairs as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }
}

/// Token bucket settings for a gated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub rate: f64,
    pub capacity: u32,
}

impl Gate {
    pub fn holds(&self, log: &[Duration]) -> bool {
        check_dispatch_bound(log, self.capacity, self.rate).is_ok()
    }
}

/// Runs one all-against-all experiment over `files` with `workers` threads
/// on a fresh in-memory engine. Timing covers distribution and comparison.
pub fn run_once(files: &[(String, Vec<u8>)], workers: usize, gate: Option<Gate>) -> Result<BenchRun> {
    let mut config = SchedulerConfig {
        workers,
        ..SchedulerConfig::default()
    };
    let mut builder = Engine::builder(Arc::new(Store::in_memory()));
    match gate {
        Some(g) => {
            config.queue_rate = g.rate;
            config.bucket_size = g.capacity;
        }
        None => builder = builder.ungated(),
    }
    let engine = builder.config(config).build()?;
    let exp = engine.create_experiment(ExperimentConfig::new(
        "bench",
        MeasureSet::all(),
        ComparisonMode::AllVsAll,
        ScaleMode::MatchLength,
    )?)?;
    for (name, bytes) in files {
        engine.upload_structure(&exp.id, name, bytes)?;
    }
    let started = Instant::now();
    let pairs = engine.start(&exp.id)?;
    let pool = engine.spawn_workers(workers);
    let done = engine.wait_terminal(&exp.id, Duration::from_secs(24 * 3600))?;
    let elapsed = started.elapsed();
    pool.shutdown();
    Ok(BenchRun {
        workers,
        pairs,
        elapsed,
        dispatch_log: engine.dispatch_log(),
        state: done.state,
    })
}
