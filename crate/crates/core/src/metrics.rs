//! Diversity and efficiency metrics over generation runs.
//!
//! Structural diversity is measured against the automaton: the fraction of
//! states, symbol-level transitions, and state bigrams that the valid
//! samples traverse. Content diversity uses distinct character n-grams and
//! the Vendi score, the exponentiated eigenvalue entropy of a normalized
//! similarity matrix built from a weighted-degree string kernel with
//! positional shifts.
//!
//! All metrics are computed over valid samples only; the valid fraction is
//! reported alongside so nothing is hidden by the filtering.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::automaton::{Dfa, StateId};
use crate::record::RunRecord;

/// Parameters of the weighted-degree-with-shifts string kernel.
#[derive(Debug, Clone, Copy)]
pub struct KernelParams {
    /// Maximum matched substring length d.
    pub degree: usize,
    /// Maximum positional shift S.
    pub shift: usize,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            degree: 3,
            shift: 2,
        }
    }
}

impl KernelParams {
    /// Substring-length weight: beta_k = 2 (d - k + 1) / (d (d + 1)).
    /// The weights over k = 1..=d sum to one.
    pub fn beta(&self, k: usize) -> f64 {
        let d = self.degree as f64;
        2.0 * (d - k as f64 + 1.0) / (d * (d + 1.0))
    }

    /// Shift weight: delta_s = 1 / (2 (s + 1)).
    pub fn delta(&self, s: usize) -> f64 {
        1.0 / (2.0 * (s as f64 + 1.0))
    }
}

/// Coverage fractions with the denominators they were computed against.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub state_cov: f64,
    pub trans_cov: f64,
    pub path_cov: f64,
    pub visited_states: u64,
    pub visited_symbol_transitions: u64,
    pub visited_state_bigrams: u64,
    pub denominators: CoverageDenominators,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageDenominators {
    /// Total states, dead sink included.
    pub states: u64,
    /// Live states only, for reconciling against trimmed-automaton reports.
    pub states_live: u64,
    /// Symbol transitions of the complete automaton: states * 256.
    pub trans_complete: u64,
    /// Symbol transitions with a live source (the TransCov denominator).
    pub trans_live_source: u64,
    /// Symbol transitions with both endpoints live.
    pub trans_live_to_live: u64,
    /// State bigrams with a live source (the PathCov denominator).
    pub bigrams_live_source: u64,
}

/// Distinct-n, Vendi, and length statistics for one sample set.
#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    pub distinct_2: u64,
    pub distinct_3: u64,
    pub vendi: f64,
    pub avg_length: f64,
    pub valid_fraction: f64,
}

/// Everything the evaluate command emits.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub state_cov: f64,
    pub trans_cov: f64,
    pub path_cov: f64,
    pub distinct_2: u64,
    pub distinct_3: u64,
    pub vendi: f64,
    pub avg_length: f64,
    pub valid_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tps: Option<f64>,
    pub denominators: CoverageDenominators,
    pub notes: Vec<String>,
}

impl MetricsReport {
    /// CSV header matching the column layout used by the comparison tables.
    pub fn csv_header() -> &'static str {
        "state_cov,trans_cov,path_cov,avg_length,distinct_2,distinct_3,vendi,valid_fraction,tps"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.3},{},{},{:.4},{:.4},{}",
            self.state_cov,
            self.trans_cov,
            self.path_cov,
            self.avg_length,
            self.distinct_2,
            self.distinct_3,
            self.vendi,
            self.valid_fraction,
            self.tps.map_or(String::new(), |t| format!("{t:.3}")),
        )
    }
}

fn coverage_denominators(dfa: &Dfa) -> CoverageDenominators {
    let trans = dfa.transition_counts();
    let bigrams = dfa.bigram_counts();
    CoverageDenominators {
        states: dfa.state_count() as u64,
        states_live: dfa.live_count() as u64,
        trans_complete: trans.complete,
        trans_live_source: trans.live_source,
        trans_live_to_live: trans.live_to_live,
        bigrams_live_source: bigrams.live_source,
    }
}

/// Fraction of all states (dead sink included) visited by the samples; the
/// starting state counts as visited. Zero for an empty sample set.
pub fn state_coverage(dfa: &Dfa, samples: &[&[u8]]) -> f64 {
    visited_states(dfa, samples) as f64 / dfa.state_count() as f64
}

fn visited_states(dfa: &Dfa, samples: &[&[u8]]) -> u64 {
    let mut seen = vec![false; dfa.state_count()];
    for sample in samples {
        let path = dfa.state_path(dfa.initial(), sample);
        for &q in path.states() {
            seen[q as usize] = true;
        }
    }
    seen.iter().filter(|v| **v).count() as u64
}

/// Fraction of live-source symbol transitions traversed by the samples.
pub fn transition_coverage(dfa: &Dfa, samples: &[&[u8]]) -> f64 {
    let denom = dfa.transition_counts().live_source;
    if denom == 0 {
        return 0.0;
    }
    visited_symbol_transitions(dfa, samples) as f64 / denom as f64
}

fn visited_symbol_transitions(dfa: &Dfa, samples: &[&[u8]]) -> u64 {
    let mut seen: HashSet<(StateId, u8, StateId)> = HashSet::new();
    for sample in samples {
        for triple in dfa.transition_path(dfa.initial(), sample) {
            seen.insert((triple.from, triple.byte, triple.to));
        }
    }
    seen.len() as u64
}

/// Fraction of live-source state bigrams traversed by the samples.
pub fn path_coverage(dfa: &Dfa, samples: &[&[u8]]) -> f64 {
    let denom = dfa.bigram_counts().live_source;
    if denom == 0 {
        return 0.0;
    }
    visited_state_bigrams(dfa, samples) as f64 / denom as f64
}

fn visited_state_bigrams(dfa: &Dfa, samples: &[&[u8]]) -> u64 {
    let mut seen: HashSet<(StateId, StateId)> = HashSet::new();
    for sample in samples {
        let path = dfa.state_path(dfa.initial(), sample);
        for pair in path.pairs() {
            seen.insert(pair);
        }
    }
    seen.len() as u64
}

/// All three coverages in one pass.
pub fn coverage_report(dfa: &Dfa, samples: &[&[u8]]) -> CoverageReport {
    let denominators = coverage_denominators(dfa);
    let visited_states = visited_states(dfa, samples);
    let visited_symbol_transitions = visited_symbol_transitions(dfa, samples);
    let visited_state_bigrams = visited_state_bigrams(dfa, samples);
    CoverageReport {
        state_cov: if samples.is_empty() {
            0.0
        } else {
            visited_states as f64 / denominators.states as f64
        },
        trans_cov: if denominators.trans_live_source == 0 {
            0.0
        } else {
            visited_symbol_transitions as f64 / denominators.trans_live_source as f64
        },
        path_cov: if denominators.bigrams_live_source == 0 {
            0.0
        } else {
            visited_state_bigrams as f64 / denominators.bigrams_live_source as f64
        },
        visited_states,
        visited_symbol_transitions,
        visited_state_bigrams,
        denominators,
    }
}

/// Decodes a sample for character-level metrics. Valid UTF-8 becomes its
/// scalar sequence; anything else falls back to byte-as-char, flagged by the
/// second component.
fn chars_of(sample: &[u8]) -> (Vec<char>, bool) {
    match std::str::from_utf8(sample) {
        Ok(text) => (text.chars().collect(), false),
        Err(_) => (sample.iter().map(|&b| b as char).collect(), true),
    }
}

/// Number of distinct character n-grams across all samples of length >= n.
pub fn distinct_n(samples: &[&[u8]], n: usize) -> u64 {
    distinct_n_flagged(samples, n).0
}

fn distinct_n_flagged(samples: &[&[u8]], n: usize) -> (u64, usize) {
    debug_assert!(n >= 1);
    let mut grams: HashSet<String> = HashSet::new();
    let mut fallback = 0;
    for sample in samples {
        let (chars, lossy) = chars_of(sample);
        if lossy {
            fallback += 1;
        }
        if chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            grams.insert(window.iter().collect());
        }
    }
    (grams.len() as u64, fallback)
}

/// Raw (unnormalized) weighted-degree-with-shifts kernel.
///
/// For each substring length k up to the degree and each shift s up to the
/// window, aligned substring matches between x shifted by s and y (and the
/// mirror direction; s = 0 counted once) contribute beta_k * delta_s.
pub fn wd_shift_kernel_raw(x: &[u8], y: &[u8], params: &KernelParams) -> f64 {
    let (xc, _) = chars_of(x);
    let (yc, _) = chars_of(y);
    let mut total = 0.0;
    for k in 1..=params.degree {
        let beta = params.beta(k);
        for s in 0..=params.shift {
            let delta = params.delta(s);
            let mut matches = 0u64;
            matches += shifted_matches(&xc, &yc, k, s);
            if s > 0 {
                matches += shifted_matches(&yc, &xc, k, s);
            }
            total += beta * delta * matches as f64;
        }
    }
    total
}

/// Counts i such that a[i + s .. i + s + k] == b[i .. i + k].
fn shifted_matches(a: &[char], b: &[char], k: usize, s: usize) -> u64 {
    if a.len() < k + s || b.len() < k {
        return 0;
    }
    let count = (a.len() - k - s + 1).min(b.len() - k + 1);
    let mut matches = 0;
    for i in 0..count {
        if a[i + s..i + s + k] == b[i..i + k] {
            matches += 1;
        }
    }
    matches
}

/// Normalized kernel K(x,y) / sqrt(K(x,x) K(y,y)), with identical inputs
/// pinned to exactly 1 (the convention that makes identical sample sets
/// score a Vendi of 1).
pub fn wd_shift_kernel(x: &[u8], y: &[u8], params: &KernelParams) -> f64 {
    if x == y {
        return 1.0;
    }
    let kxx = wd_shift_kernel_raw(x, x, params);
    let kyy = wd_shift_kernel_raw(y, y, params);
    if kxx <= 0.0 || kyy <= 0.0 {
        return 0.0;
    }
    wd_shift_kernel_raw(x, y, params) / (kxx * kyy).sqrt()
}

/// Outcome of a Vendi computation.
#[derive(Debug, Clone, Copy)]
pub struct VendiScore {
    pub score: f64,
    /// Set when numerical drift produced an eigenvalue below -1e-8 that had
    /// to be clamped.
    pub clamped: bool,
}

/// Vendi score: exp of the Shannon entropy of the eigenvalues of K / n,
/// where K is the normalized kernel matrix of the samples. Ranges from 1
/// (all identical) to n (pairwise dissimilar).
pub fn vendi_score(samples: &[&[u8]], params: &KernelParams) -> VendiScore {
    let n = samples.len();
    assert!(n >= 1, "vendi score needs at least one sample");
    let mut matrix = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        matrix[(i, i)] = 1.0;
        for j in i + 1..n {
            let k = wd_shift_kernel(samples[i], samples[j], params);
            matrix[(i, j)] = k;
            matrix[(j, i)] = k;
        }
    }
    matrix /= n as f64;
    let eigenvalues = matrix.symmetric_eigenvalues();
    let mut clamped = false;
    let mut entropy = 0.0;
    for &lambda in eigenvalues.iter() {
        if lambda < -1e-8 {
            clamped = true;
        }
        if lambda > 0.0 {
            entropy -= lambda * lambda.ln();
        }
    }
    VendiScore {
        score: entropy.exp(),
        clamped,
    }
}

/// Mean character length of the samples; zero for an empty set.
pub fn average_length(samples: &[&[u8]]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: usize = samples.iter().map(|s| chars_of(s).0.len()).sum();
    total as f64 / samples.len() as f64
}

/// Throughput of a run and its percentage of a baseline run's throughput.
pub fn efficiency_vs(steered: &RunRecord, baseline: &RunRecord) -> (f64, f64, f64) {
    let steered_tps = steered.tokens_per_second();
    let baseline_tps = baseline.tokens_per_second();
    let percentage = if baseline_tps > 0.0 {
        100.0 * steered_tps / baseline_tps
    } else {
        0.0
    };
    (steered_tps, baseline_tps, percentage)
}

/// Largest sample set the Vendi computation accepts by default; eigensolving
/// grows cubically, and runs are capped at this size with a note instead of
/// silently stalling.
pub const DEFAULT_VENDI_CAP: usize = 1000;

/// Computes the full metrics report for a persisted run.
pub fn evaluate_record(
    dfa: &Dfa,
    record: &RunRecord,
    params: &KernelParams,
    vendi_cap: usize,
) -> MetricsReport {
    let valid = record.valid_texts();
    let mut notes = Vec::new();
    if record.samples.is_empty() {
        notes.push("record contains no samples".to_string());
    } else if valid.is_empty() {
        notes.push("record contains no valid samples; metrics are all zero".to_string());
    }

    let coverage = coverage_report(dfa, &valid);
    let (distinct_2, fallback2) = distinct_n_flagged(&valid, 2);
    let (distinct_3, _) = distinct_n_flagged(&valid, 3);
    if fallback2 > 0 {
        notes.push(format!(
            "{fallback2} sample(s) are not valid UTF-8; n-grams computed over raw bytes for them"
        ));
    }

    let vendi = if valid.is_empty() {
        0.0
    } else {
        let scored: Vec<&[u8]> = valid.iter().take(vendi_cap).copied().collect();
        if scored.len() < valid.len() {
            notes.push(format!(
                "vendi computed over the first {} of {} valid samples",
                scored.len(),
                valid.len()
            ));
        }
        let result = vendi_score(&scored, params);
        if result.clamped {
            notes.push("kernel matrix drifted below PSD; negative eigenvalues clamped".into());
        }
        result.score
    };

    MetricsReport {
        state_cov: coverage.state_cov,
        trans_cov: coverage.trans_cov,
        path_cov: coverage.path_cov,
        distinct_2,
        distinct_3,
        vendi,
        avg_length: average_length(&valid),
        valid_fraction: record.valid_fraction(),
        tps: Some(record.tokens_per_second()),
        denominators: coverage.denominators,
        notes,
    }
}
