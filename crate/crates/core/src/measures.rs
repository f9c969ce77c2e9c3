//! Similarity measures on matched residue pairs: RMSD, GDT_TS, TM-score and
//! Q-score, plus the match-length / total-length reference scale.
//!
//! GDT_TS and TM-score need a superposition that maximises their score rather
//! than minimising RMSD. Both use the same deterministic seed-and-extend
//! search: every contiguous window of 3, 5 and 7 matched residues is fitted,
//! then the fit is repeatedly re-done on the residues lying within a cutoff
//! (at most 10 refits, stopping once the included set repeats). Further
//! seeds come from trimming the full set one worst-fitting residue at a
//! time. Short matches (at most 20 residues) are also seeded from every
//! residue triple, and matches of at most 14 from every quadruple; for
//! those, each seed fit is grown by refitting its k closest residues for
//! every k. The fit of the full matched set is always a candidate as well.
//!
//! Every superposition explored is the least-squares fit of some residue
//! subset of size >= 3, so the counts found can never exceed those of an
//! exhaustive subset search.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align_match::{match_residues, ResidueMatch};
use crate::error::{Error, Result};
use crate::model_io::{Coord, StructureModel};
use crate::superpose::{fit, kabsch_superpose, RigidTransform};

/// GDT_TS distance cutoffs in Å.
pub const GDT_CUTOFFS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
const SEED_WINDOWS: [usize; 3] = [3, 5, 7];
const MAX_REFITS: usize = 10;
/// Matches with at most this many residue triples (quadruples) get a seed
/// per triple (quadruple).
const SUBSET_SEED_LIMIT: usize = 1140;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleMode {
    MatchLength,
    TotalLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComparisonMode {
    /// The first uploaded structure is the target for every other one (1:N).
    OneVsAll,
    /// Every unordered pair (N:N).
    AllVsAll,
}

impl ScaleMode {
    pub fn label(self) -> &'static str {
        match self {
            ScaleMode::MatchLength => "match length",
            ScaleMode::TotalLength => "total length",
        }
    }
}

impl FromStr for ScaleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "match length" => Ok(ScaleMode::MatchLength),
            "total length" => Ok(ScaleMode::TotalLength),
            _ => Err(Error::Invalid(format!("unknown scale {s:?}"))),
        }
    }
}

impl ComparisonMode {
    pub fn label(self) -> &'static str {
        match self {
            ComparisonMode::OneVsAll => "first against all",
            ComparisonMode::AllVsAll => "all against all",
        }
    }
}

impl FromStr for ComparisonMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "first against all" => Ok(ComparisonMode::OneVsAll),
            "all against all" => Ok(ComparisonMode::AllVsAll),
            _ => Err(Error::Invalid(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    Rmsd,
    GdtTs,
    TmScore,
    QScore,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Rmsd, Measure::GdtTs, Measure::TmScore, Measure::QScore];

    pub fn label(self) -> &'static str {
        match self {
            Measure::Rmsd => "RMSD",
            Measure::GdtTs => "GDT_TS",
            Measure::TmScore => "TM-score",
            Measure::QScore => "Q-score",
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            // "RSMD" is accepted as a misspelling that older clients send
            "rmsd" | "rsmd" => Ok(Measure::Rmsd),
            "gdtts" | "gdt" => Ok(Measure::GdtTs),
            "tmscore" | "tm" => Ok(Measure::TmScore),
            "qscore" | "q" => Ok(Measure::QScore),
            _ => Err(Error::Invalid(format!("unknown measure {s:?}"))),
        }
    }
}

/// Non-empty subset of the four measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Measure>", into = "Vec<Measure>")]
pub struct MeasureSet(u8);

impl MeasureSet {
    pub fn all() -> Self {
        MeasureSet(0b1111)
    }

    pub fn new(measures: impl IntoIterator<Item = Measure>) -> Result<Self> {
        let bits = measures.into_iter().fold(0u8, |acc, m| acc | m.bit());
        if bits == 0 {
            return Err(Error::Invalid("measure set is empty".into()));
        }
        Ok(MeasureSet(bits))
    }

    /// Parses a comma- or whitespace-separated list such as `"RMSD,TM-score"`.
    pub fn parse_list(list: &str) -> Result<Self> {
        let measures = list
            .split([',', ';'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(Measure::from_str)
            .collect::<Result<Vec<_>>>()?;
        Self::new(measures)
    }

    pub fn contains(self, m: Measure) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Measure> {
        Measure::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    fn needs_three(self) -> bool {
        self.contains(Measure::GdtTs) || self.contains(Measure::TmScore) || self.contains(Measure::QScore)
    }
}

impl fmt::Display for MeasureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Measure::label).collect();
        f.write_str(&names.join(","))
    }
}

impl TryFrom<Vec<Measure>> for MeasureSet {
    type Error = Error;
    fn try_from(v: Vec<Measure>) -> Result<Self> {
        MeasureSet::new(v)
    }
}

impl From<MeasureSet> for Vec<Measure> {
    fn from(s: MeasureSet) -> Self {
        s.iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureValues {
    pub rmsd: Option<f64>,
    pub gdt_ts: Option<f64>,
    pub tm_score: Option<f64>,
    pub q_score: Option<f64>,
    pub matched_len: usize,
    pub ref_len: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl MeasureValues {
    pub fn get(&self, m: Measure) -> Option<f64> {
        match m {
            Measure::Rmsd => self.rmsd,
            Measure::GdtTs => self.gdt_ts,
            Measure::TmScore => self.tm_score,
            Measure::QScore => self.q_score,
        }
    }
}

/// Denominator for the similarity scores.
pub fn reference_length(
    m: &ResidueMatch,
    scale: ScaleMode,
    mode: ComparisonMode,
    target_len: usize,
) -> usize {
    match (scale, mode) {
        (ScaleMode::MatchLength, _) => m.matched_len(),
        (ScaleMode::TotalLength, ComparisonMode::OneVsAll) => target_len,
        (ScaleMode::TotalLength, ComparisonMode::AllVsAll) => m.len_a.min(m.len_b),
    }
}

fn require_three(m: &ResidueMatch) -> Result<()> {
    if m.matched_len() < 3 {
        return Err(Error::TooFewResidues(m.matched_len()));
    }
    Ok(())
}

/// Seed-and-extend superposition search shared by GDT_TS and TM-score.
struct Search<'a> {
    a: &'a [Coord],
    b: &'a [Coord],
    dist_sq: Vec<f64>,
    visited: HashSet<(usize, Vec<u64>)>,
}

impl<'a> Search<'a> {
    fn new(m: &'a ResidueMatch) -> Self {
        Self {
            a: &m.coords_a,
            b: &m.coords_b,
            dist_sq: vec![0.0; m.matched_len()],
            visited: HashSet::new(),
        }
    }

    fn n(&self) -> usize {
        self.a.len()
    }

    fn measure(&mut self, t: &RigidTransform) {
        for ((d, a), b) in self.dist_sq.iter_mut().zip(self.a).zip(self.b) {
            *d = (t.apply(a) - b).norm_squared();
        }
    }

    fn seeds(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut seeds: Vec<Vec<usize>> = SEED_WINDOWS
            .iter()
            .filter(|&&w| w <= n)
            .flat_map(|&w| (0..=n - w).map(move |s| (s..s + w).collect()))
            .collect();
        let triples = n * n.saturating_sub(1) * n.saturating_sub(2) / 6;
        if triples <= SUBSET_SEED_LIMIT {
            for i in 0..n {
                for j in i + 1..n {
                    // contiguous triples are already windows
                    for k in (j + 1..n).filter(|&k| !(j == i + 1 && k == j + 1)) {
                        seeds.push(vec![i, j, k]);
                    }
                }
            }
        }
        let quads = triples * n.saturating_sub(3) / 4;
        if quads <= SUBSET_SEED_LIMIT {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        for l in k + 1..n {
                            seeds.push(vec![i, j, k, l]);
                        }
                    }
                }
            }
        }
        seeds
    }

    /// Subsets met while trimming from the full set: refit, drop the
    /// residue that fits worst, repeat down to four residues.
    fn trim_path(&mut self) -> Vec<Vec<usize>> {
        let mut keep: Vec<usize> = (0..self.n()).collect();
        let mut path = Vec::new();
        while keep.len() > 4 {
            let t = fit(self.a, self.b, keep.iter().copied());
            self.measure(&t);
            let worst = keep
                .iter()
                .copied()
                .max_by(|&i, &j| self.dist_sq[i].total_cmp(&self.dist_sq[j]))
                .expect("keep is not empty");
            keep.retain(|&i| i != worst);
            path.push(keep.clone());
        }
        path
    }

    /// Refits the k residues closest under a seed's superposition, for
    /// every k from four up.
    fn grow(&mut self, seed_dists: &[f64], score: &mut impl FnMut(&[f64])) {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&i, &j| seed_dists[i].total_cmp(&seed_dists[j]));
        for k in 4..=self.n() {
            let t = fit(self.a, self.b, order[..k].iter().copied());
            self.measure(&t);
            score(&self.dist_sq);
        }
    }

    /// Runs the search, calling `score` on the distances of every
    /// superposition explored. `cutoffs_sq` are the inclusion cutoffs
    /// (squared) used to grow the fitted set.
    fn run(&mut self, cutoffs_sq: &[f64], mut score: impl FnMut(&[f64])) {
        let n = self.n();
        let full = fit(self.a, self.b, 0..n);
        self.measure(&full);
        score(&self.dist_sq);

        let small = n * n.saturating_sub(1) * n.saturating_sub(2) / 6 <= SUBSET_SEED_LIMIT;
        let mut seeds = self.seeds();
        seeds.extend(self.trim_path());
        for seed in seeds {
            let seed_fit = fit(self.a, self.b, seed.iter().copied());
            self.measure(&seed_fit);
            score(&self.dist_sq);
            let seed_dists = self.dist_sq.clone();
            if small {
                self.grow(&seed_dists, &mut score);
            }

            for (ci, &cut_sq) in cutoffs_sq.iter().enumerate() {
                self.dist_sq.copy_from_slice(&seed_dists);
                for _ in 0..MAX_REFITS {
                    let (mask, count) = inclusion_mask(&self.dist_sq, cut_sq);
                    if count < 3 {
                        break;
                    }
                    // a set seen before (including the previous step) has
                    // already been fitted and extended from here on
                    if !self.visited.insert((ci, mask.clone())) {
                        break;
                    }
                    let t = fit(self.a, self.b, mask_indices(&mask, n));
                    self.measure(&t);
                    score(&self.dist_sq);
                }
            }
        }
    }
}

fn inclusion_mask(dist_sq: &[f64], cut_sq: f64) -> (Vec<u64>, usize) {
    let mut mask = vec![0u64; dist_sq.len().div_ceil(64)];
    let mut count = 0;
    for (i, &d) in dist_sq.iter().enumerate() {
        if d <= cut_sq {
            mask[i / 64] |= 1 << (i % 64);
            count += 1;
        }
    }
    (mask, count)
}

fn mask_indices(mask: &[u64], n: usize) -> impl Iterator<Item = usize> + Clone + '_ {
    (0..n).filter(move |&i| mask[i / 64] & (1 << (i % 64)) != 0)
}

/// Best number of matched residues within each of the 1, 2, 4 and 8 Å
/// cutoffs over the explored superpositions.
pub fn gdt_counts(m: &ResidueMatch) -> Result<[usize; 4]> {
    require_three(m)?;
    let cutoffs_sq = GDT_CUTOFFS.map(|c| c * c);
    let mut best = [0usize; 4];
    Search::new(m).run(&cutoffs_sq, |dist_sq| {
        for (b, &cut) in best.iter_mut().zip(&cutoffs_sq) {
            let count = dist_sq.iter().filter(|&&d| d <= cut).count();
            *b = (*b).max(count);
        }
    });
    Ok(best)
}

/// GDT_TS in percent, scaled by `ref_len`.
pub fn gdt_ts(m: &ResidueMatch, ref_len: usize) -> Result<f64> {
    let counts = gdt_counts(m)?;
    Ok(gdt_from_counts(counts, ref_len))
}

fn gdt_from_counts(counts: [usize; 4], ref_len: usize) -> f64 {
    let total: usize = counts.iter().sum();
    100.0 * total as f64 / (4.0 * ref_len as f64)
}

/// TM-score distance scale for a chain of `len` residues, floored at 0.5 Å.
pub fn tm_d0(len: usize) -> f64 {
    let raw = 1.24 * (len as f64 - 15.0).cbrt() - 1.8;
    raw.max(0.5)
}

/// Unnormalised TM sum: max over explored superpositions of
/// `sum 1 / (1 + (d_i/d0)^2)` across all matched residues.
fn tm_sum(m: &ResidueMatch, d0: f64) -> Result<f64> {
    require_three(m)?;
    let d0_sq = d0 * d0;
    let mut best = 0.0f64;
    Search::new(m).run(&[d0_sq], |dist_sq| {
        let s: f64 = dist_sq.iter().map(|d| 1.0 / (1.0 + d / d0_sq)).sum();
        if s > best {
            best = s;
        }
    });
    Ok(best)
}

/// TM-score normalised by `ref_len`. The distance scale `d0` is derived from
/// the matched length so that changing the reference scale only rescales the
/// score.
pub fn tm_score(m: &ResidueMatch, ref_len: usize) -> Result<f64> {
    let sum = tm_sum(m, tm_d0(m.matched_len()))?;
    Ok(sum / ref_len as f64)
}

/// Superposition-free Q-score over all matched pairs at least two apart in
/// sequence, scaled by `matched_len / ref_len`.
pub fn q_score(m: &ResidueMatch, ref_len: usize) -> Result<f64> {
    require_three(m)?;
    let n = m.matched_len();
    let (a, b) = (&m.coords_a, &m.coords_b);
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 2..n {
            let da = (a[i] - a[j]).norm();
            let db = (b[i] - b[j]).norm();
            let sigma_sq = ((j - i) as f64).powf(0.3);
            let diff = da - db;
            sum += (-(diff * diff) / (2.0 * sigma_sq)).exp();
        }
    }
    let q_raw = 2.0 * sum / ((n - 1) * (n - 2)) as f64;
    Ok(q_raw * n as f64 / ref_len as f64)
}

/// Runs every selected measure on one model pair.
pub fn compare_pair(
    a: &StructureModel,
    b: &StructureModel,
    measures: MeasureSet,
    scale: ScaleMode,
    mode: ComparisonMode,
    target_len: usize,
) -> Result<MeasureValues> {
    let m = match_residues(a, b)?;
    if measures.needs_three() {
        require_three(&m)?;
    }
    let ref_len = reference_length(&m, scale, mode, target_len);

    let rmsd = measures
        .contains(Measure::Rmsd)
        .then(|| kabsch_superpose(&m.coords_a, &m.coords_b).rmsd);
    let gdt = measures
        .contains(Measure::GdtTs)
        .then(|| gdt_ts(&m, ref_len))
        .transpose()?;
    let tm = measures
        .contains(Measure::TmScore)
        .then(|| tm_score(&m, ref_len))
        .transpose()?;
    let q = measures
        .contains(Measure::QScore)
        .then(|| q_score(&m, ref_len))
        .transpose()?;

    Ok(MeasureValues {
        rmsd,
        gdt_ts: gdt,
        tm_score: tm,
        q_score: q,
        matched_len: m.matched_len(),
        ref_len,
        warnings: m.warning().into_iter().collect(),
    })
}
