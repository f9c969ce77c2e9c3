//! Experiment lifecycle: configuration, pair generation, result bookkeeping
//! and the exported results/histogram files.
//!
//! ```text
//! Setup --upload--> Uploading --start--> Running --last result--> Finished
//!                                                            \--> FinishedWithErrors
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{ComparisonMode, Measure, MeasureSet, MeasureValues, ScaleMode};

/// Upper bound on comparisons per experiment.
pub const MAX_PAIRS: usize = 5000;
pub const HISTOGRAM_BINS: usize = 20;
/// Bin width used to widen a histogram whose values are all equal.
const DEGENERATE_BIN_WIDTH: f64 = 0.05;

pub const RESULTS_HEADER: &str =
    "model_a\tmodel_b\tmatched\tref_len\trmsd\tgdt_ts\ttm_score\tq_score\terror";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub label: String,
    pub measures: MeasureSet,
    pub mode: ComparisonMode,
    pub scale: ScaleMode,
}

impl ExperimentConfig {
    pub fn new(
        label: impl Into<String>,
        measures: MeasureSet,
        mode: ComparisonMode,
        scale: ScaleMode,
    ) -> Result<Self> {
        let label = label.into();
        let trimmed = label.trim();
        if trimmed.is_empty() {
            return Err(Error::Invalid("label must not be empty".into()));
        }
        if trimmed.chars().any(char::is_control) {
            return Err(Error::Invalid("label must not contain control characters".into()));
        }
        Ok(Self {
            label: trimmed.to_string(),
            measures,
            mode,
            scale,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentState {
    Setup,
    Uploading,
    Running,
    Finished,
    FinishedWithErrors,
}

impl ExperimentState {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExperimentState::Finished | ExperimentState::FinishedWithErrors)
    }
}

/// An uploaded structure as the experiment knows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureRef {
    /// Store key of the raw file.
    pub key: String,
    /// Display name (upload file stem).
    pub name: String,
    pub digest: String,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub config: ExperimentConfig,
    pub structures: Vec<StructureRef>,
    pub state: ExperimentState,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub completed_pairs: usize,
    pub total_pairs: usize,
    pub error_pairs: usize,
    /// Every pair has been handed to the task queue.
    #[serde(default)]
    pub distribution_done: bool,
    /// Bitmap of recorded pair indices, hex-encoded little-endian bytes.
    recorded: String,
}

impl Experiment {
    pub fn new(id: impl Into<String>, config: ExperimentConfig, created_at: u64) -> Self {
        Self {
            id: id.into(),
            config,
            structures: Vec::new(),
            state: ExperimentState::Setup,
            created_at,
            completed_pairs: 0,
            total_pairs: 0,
            error_pairs: 0,
            distribution_done: false,
            recorded: String::new(),
        }
    }

    pub fn add_structure(&mut self, s: StructureRef) -> Result<()> {
        match self.state {
            ExperimentState::Setup | ExperimentState::Uploading => {
                self.structures.push(s);
                self.state = ExperimentState::Uploading;
                Ok(())
            }
            other => Err(Error::State(format!("cannot upload while {other:?}"))),
        }
    }

    /// Generates the comparison pairs (as structure indices) and moves the
    /// experiment to `Running`.
    pub fn start(&mut self) -> Result<Vec<(usize, usize)>> {
        match self.state {
            ExperimentState::Setup | ExperimentState::Uploading => {}
            other => return Err(Error::State(format!("already {other:?}"))),
        }
        let indices: Vec<usize> = (0..self.structures.len()).collect();
        let pairs = generate_pairs(&indices, self.config.mode)?;
        self.total_pairs = pairs.len();
        self.completed_pairs = 0;
        self.error_pairs = 0;
        self.recorded = "00".repeat(pairs.len().div_ceil(8));
        self.state = ExperimentState::Running;
        Ok(pairs)
    }

    /// Structure indices of the pair at `index` in generation order.
    pub fn pair(&self, index: usize) -> Result<(usize, usize)> {
        pair_at(self.structures.len(), self.config.mode, index)
    }

    pub fn is_recorded(&self, pair_index: usize) -> bool {
        let byte = pair_index / 8;
        self.recorded
            .get(byte * 2..byte * 2 + 2)
            .and_then(|h| u8::from_str_radix(h, 16).ok())
            .is_some_and(|b| b & (1 << (pair_index % 8)) != 0)
    }

    fn mark_recorded(&mut self, pair_index: usize) {
        let byte = pair_index / 8;
        let cur = u8::from_str_radix(&self.recorded[byte * 2..byte * 2 + 2], 16).unwrap_or(0);
        let next = format!("{:02x}", cur | (1 << (pair_index % 8)));
        self.recorded.replace_range(byte * 2..byte * 2 + 2, &next);
    }

    /// Counts one finished comparison. The final one moves the experiment to
    /// a terminal state.
    pub fn record_result(&mut self, result: &ComparisonResult) -> Result<()> {
        if self.state != ExperimentState::Running {
            return Err(Error::State(format!("cannot record results while {:?}", self.state)));
        }
        let idx = result.pair_index;
        if idx >= self.total_pairs {
            return Err(Error::Index {
                index: idx,
                len: self.total_pairs,
            });
        }
        let (a, b) = self.pair(idx)?;
        if self.structures[a].key != result.id_a || self.structures[b].key != result.id_b {
            return Err(Error::Invalid(format!(
                "pair {idx} is ({}, {}), not ({}, {})",
                self.structures[a].key, self.structures[b].key, result.id_a, result.id_b
            )));
        }
        if self.is_recorded(idx) {
            return Err(Error::DuplicateResult(idx));
        }
        self.mark_recorded(idx);
        self.completed_pairs += 1;
        if result.is_error() {
            self.error_pairs += 1;
        }
        if self.completed_pairs == self.total_pairs {
            self.state = if self.error_pairs == 0 {
                ExperimentState::Finished
            } else {
                ExperimentState::FinishedWithErrors
            };
        }
        Ok(())
    }

    /// One-line plain-text status.
    pub fn status_line(&self) -> String {
        match self.state {
            ExperimentState::Setup => "setup".to_string(),
            ExperimentState::Uploading => format!("uploading {} structures", self.structures.len()),
            ExperimentState::Running => format!("running {}/{}", self.completed_pairs, self.total_pairs),
            ExperimentState::Finished => "finished".to_string(),
            ExperimentState::FinishedWithErrors => format!("finished_with_errors {}", self.error_pairs),
        }
    }

    /// Declared length of the target structure (the first upload).
    pub fn target_len(&self) -> usize {
        self.structures.first().map_or(0, |s| s.length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Values(MeasureValues),
    Error { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub pair_index: usize,
    pub id_a: String,
    pub id_b: String,
    pub name_a: String,
    pub name_b: String,
    pub outcome: Outcome,
}

impl ComparisonResult {
    pub fn is_error(&self) -> bool {
        matches!(self.outcome, Outcome::Error { .. })
    }

    pub fn values(&self) -> Option<&MeasureValues> {
        match &self.outcome {
            Outcome::Values(v) => Some(v),
            Outcome::Error { .. } => None,
        }
    }

    pub fn error(pair_index: usize, a: &StructureRef, b: &StructureRef, err: &Error) -> Self {
        Self {
            pair_index,
            id_a: a.key.clone(),
            id_b: b.key.clone(),
            name_a: a.name.clone(),
            name_b: b.name.clone(),
            outcome: Outcome::Error {
                code: err.code().to_string(),
                message: err.to_string(),
            },
        }
    }
}

/// Number of comparisons for `n` structures.
pub fn pair_count(n: usize, mode: ComparisonMode) -> usize {
    match mode {
        ComparisonMode::OneVsAll => n.saturating_sub(1),
        ComparisonMode::AllVsAll => n * n.saturating_sub(1) / 2,
    }
}

/// Comparison pairs in generation order: `(first, i)` for 1:N, `(i, j)` with
/// `i < j` in upload order for N:N.
pub fn generate_pairs<T: Clone>(ids: &[T], mode: ComparisonMode) -> Result<Vec<(T, T)>> {
    if ids.len() < 2 {
        return Err(Error::TooFewStructures(ids.len()));
    }
    let count = pair_count(ids.len(), mode);
    if count > MAX_PAIRS {
        return Err(Error::CapExceeded {
            pairs: count,
            limit: MAX_PAIRS,
        });
    }
    let mut pairs = Vec::with_capacity(count);
    match mode {
        ComparisonMode::OneVsAll => {
            for other in &ids[1..] {
                pairs.push((ids[0].clone(), other.clone()));
            }
        }
        ComparisonMode::AllVsAll => {
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    pairs.push((ids[i].clone(), ids[j].clone()));
                }
            }
        }
    }
    Ok(pairs)
}

/// The `index`-th pair of [`generate_pairs`] without materialising the list.
pub fn pair_at(n: usize, mode: ComparisonMode, index: usize) -> Result<(usize, usize)> {
    let total = pair_count(n, mode);
    if index >= total {
        return Err(Error::Index { index, len: total });
    }
    match mode {
        ComparisonMode::OneVsAll => Ok((0, index + 1)),
        ComparisonMode::AllVsAll => {
            let mut rest = index;
            for i in 0..n {
                let row = n - i - 1;
                if rest < row {
                    return Ok((i, i + 1 + rest));
                }
                rest -= row;
            }
            unreachable!("index checked against pair count")
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Tab-separated results file. Rows follow pair generation order.
pub fn results_file(exp: &Experiment, results: &[ComparisonResult]) -> Result<Vec<u8>> {
    if !exp.state.is_terminal() {
        return Err(Error::State(format!("experiment is {}", exp.status_line())));
    }
    let mut sorted: Vec<&ComparisonResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.pair_index);

    let cfg = &exp.config;
    let mut out = String::new();
    let _ = writeln!(out, "# label: {}", cfg.label);
    let _ = writeln!(out, "# mode: {}", cfg.mode.label());
    let _ = writeln!(out, "# scale: {}", cfg.scale.label());
    let _ = writeln!(out, "# measures: {}", cfg.measures);
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in sorted {
        match &r.outcome {
            Outcome::Values(v) => {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t-",
                    r.name_a,
                    r.name_b,
                    v.matched_len,
                    v.ref_len,
                    cell(v.rmsd),
                    cell(v.gdt_ts),
                    cell(v.tm_score),
                    cell(v.q_score),
                );
            }
            Outcome::Error { code, .. } => {
                let _ = writeln!(out, "{}\t{}\t-\t-\t-\t-\t-\t-\t{code}", r.name_a, r.name_b);
            }
        }
    }
    Ok(out.into_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramData {
    pub measure: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Equal-width histogram of one measure over the successful results.
pub fn histogram(results: &[ComparisonResult], measure: Measure, bins: usize) -> Result<HistogramData> {
    if bins == 0 {
        return Err(Error::Invalid("histogram needs at least one bin".into()));
    }
    let values: Vec<f64> = results
        .iter()
        .filter_map(|r| r.values().and_then(|v| v.get(measure)))
        .collect();
    if values.is_empty() {
        return Err(Error::NoData(measure.label().to_string()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if max > min {
        (min, max)
    } else {
        (min - 0.5 * DEGENERATE_BIN_WIDTH, max + 0.5 * DEGENERATE_BIN_WIDTH)
    };
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..bins).map(|k| lo + k as f64 * width).collect();
    bin_edges.push(hi);

    let mut counts = vec![0u64; bins];
    for v in values {
        // the last bin is closed on the right
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(HistogramData {
        measure: measure.label().to_string(),
        bin_edges,
        counts,
    })
}

/// JSON document with one histogram per selected measure that has data.
pub fn histograms_json(exp: &Experiment, results: &[ComparisonResult]) -> String {
    let histograms: Vec<HistogramData> = exp
        .config
        .measures
        .iter()
        .filter_map(|m| histogram(results, m, HISTOGRAM_BINS).ok())
        .collect();
    let doc = serde_json::json!({
        "label": exp.config.label,
        "histograms": histograms,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("histograms serialize");
    s.push('\n');
    s
}
