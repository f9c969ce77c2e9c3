//! Pairwise comparison of protein structure models.
//!
//! Models are reduced to their CA traces, matched residue by residue, and
//! compared with RMSD, GDT_TS, TM-score and Q-score. Sets of models are
//! compared as experiments: either the first model against all others or
//! all against all, with comparisons executed by a rate-limited worker pool
//! over a small persistent store.
//!
//! ```
//! use modelcmp::{compare_pair, synth, ComparisonMode, MeasureSet, ScaleMode};
//! use rand::SeedableRng;
//!
//! let mut rng = rand::rngs::StdRng::seed_from_u64(7);
//! let native = synth::random_chain(&mut rng, 40);
//! let a = synth::model_from_coords("a", &native, 1);
//! let b = synth::model_from_coords("b", &synth::random_motion(&mut rng, &native), 1);
//! let v = compare_pair(&a, &b, MeasureSet::all(), ScaleMode::MatchLength, ComparisonMode::AllVsAll, 40).unwrap();
//! assert!(v.rmsd.unwrap() < 1e-9);
//! assert!((v.gdt_ts.unwrap() - 100.0).abs() < 1e-9);
//! ```

pub mod align_match;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod measures;
pub mod model_io;
pub mod scheduler;
pub mod store;
pub mod superpose;
pub mod synth;

pub use align_match::{match_residues, ResidueMatch};
pub use config::SchedulerConfig;
pub use engine::{Engine, EngineBuilder, WorkerPool};
pub use error::{Error, Result};
pub use experiment::{
    ComparisonResult, Experiment, ExperimentConfig, ExperimentState, HistogramData, Outcome, StructureRef,
};
pub use measures::{
    compare_pair, gdt_ts, q_score, tm_score, ComparisonMode, Measure, MeasureSet, MeasureValues, ScaleMode,
};
pub use model_io::{parse_pdb, write_pdb, CaAtom, Coord, ResidueKey, StructureModel};
pub use scheduler::{Clock, ScaledClock, StructureCache, SystemClock, Task, TaskKind, TaskQueue, TokenBucket};
pub use store::{EntityKind, Store};
pub use superpose::{kabsch_superpose, rmsd_on_subset, RigidTransform, SuperpositionResult};
