//! Diversity-steered constrained generation.
//!
//! The generation loop keeps two traversal counters. A global transition
//! counter `C` records how often each ordered state pair (state bigram) has
//! been traversed by valid samples across the whole run; a local state
//! counter records how often each state has been entered within the current
//! sample. At every step, each valid token `w` at state `q` gets an
//! exploration score `E(q, w)`: the count of the least-traversed state pair
//! along the token's within-token path. Rarely traversed paths earn a
//! logarithmic reward, revisiting states inside one sample earns a divisive
//! penalty, and the resulting adjustment is scaled by the spread of the
//! valid-token logits before being added on top of the grammar mask.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::automaton::{Dfa, StateId, StatePath};
use crate::error::{Error, Result};
use crate::logits::LogitSource;
use crate::record::{RecordedSample, RunConfigSnapshot, RunRecord};
use crate::vocab::{TokenId, VocabularyIndex};

/// Generation mode: plain grammar masking or masking plus steering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Diverse,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Diverse => "diverse",
        }
    }

    pub fn parse(text: &str) -> Result<Mode> {
        match text {
            "baseline" => Ok(Mode::Baseline),
            "diverse" => Ok(Mode::Diverse),
            other => Err(Error::Record(format!(
                "unknown mode {other:?} (expected baseline or diverse)"
            ))),
        }
    }
}

/// Knock out one steering component, for component analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Reward term forced to zero; the adjustment vanishes entirely.
    NoReward,
    /// Penalty term forced to one; local loop damping disabled.
    NoPenalty,
    /// Range factor forced to one; adjustments no longer track logit scale.
    NoRange,
}

/// Steering and sampling hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct SteeringParams {
    /// Penalty intensity; must be positive.
    pub beta: f64,
    /// Adjustment strength; zero disables steering entirely.
    pub gamma: f64,
    /// Softmax temperature; must be positive.
    pub temperature: f64,
    /// Per-sample token budget.
    pub max_tokens: usize,
    pub mode: Mode,
    pub ablation: Ablation,
}

impl Default for SteeringParams {
    fn default() -> Self {
        SteeringParams {
            beta: 3.0,
            gamma: 0.5,
            temperature: 1.0,
            max_tokens: 18,
            mode: Mode::Diverse,
            ablation: Ablation::None,
        }
    }
}

impl SteeringParams {
    pub fn validate(&self) -> Result<()> {
        // NaN fails every comparison and must be rejected too.
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::Contract(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::Contract(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Contract(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens < 1 {
            return Err(Error::Contract("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

const DENSE_COUNTER_LIMIT: usize = 1 << 20;

/// Counts traversals of ordered state pairs across a whole run. Updated only
/// after a sample terminates with EOS; invalid samples leave it untouched.
#[derive(Debug, Clone)]
pub struct GlobalTransitionCounter {
    state_count: usize,
    dense: Option<Vec<u64>>,
    sparse: HashMap<(StateId, StateId), u64>,
}

impl GlobalTransitionCounter {
    pub fn new(state_count: usize) -> GlobalTransitionCounter {
        let dense = if state_count.saturating_mul(state_count) <= DENSE_COUNTER_LIMIT {
            Some(vec![0u64; state_count * state_count])
        } else {
            None
        };
        GlobalTransitionCounter {
            state_count,
            dense,
            sparse: HashMap::new(),
        }
    }

    #[inline]
    pub fn get(&self, from: StateId, to: StateId) -> u64 {
        match &self.dense {
            Some(d) => d[from as usize * self.state_count + to as usize],
            None => *self.sparse.get(&(from, to)).unwrap_or(&0),
        }
    }

    #[inline]
    pub fn increment(&mut self, from: StateId, to: StateId) {
        match &mut self.dense {
            Some(d) => d[from as usize * self.state_count + to as usize] += 1,
            None => *self.sparse.entry((from, to)).or_insert(0) += 1,
        }
    }

    /// Increments every consecutive state pair along a full sample path.
    pub fn record_path(&mut self, path: &StatePath) {
        for (a, b) in path.pairs() {
            self.increment(a, b);
        }
    }

    /// Non-zero entries sorted by (from, to), for export and inspection.
    pub fn export(&self) -> Vec<(StateId, StateId, u64)> {
        let mut out = Vec::new();
        match &self.dense {
            Some(d) => {
                for from in 0..self.state_count {
                    for to in 0..self.state_count {
                        let count = d[from * self.state_count + to];
                        if count > 0 {
                            out.push((from as StateId, to as StateId, count));
                        }
                    }
                }
            }
            None => {
                out.extend(self.sparse.iter().map(|(&(f, t), &c)| (f, t, c)));
                out.sort_unstable();
            }
        }
        out
    }
}

/// Counts state entries within a single sample; reset between samples.
#[derive(Debug, Clone)]
pub struct LocalStateCounter(Vec<u64>);

impl LocalStateCounter {
    pub fn new(state_count: usize) -> LocalStateCounter {
        LocalStateCounter(vec![0; state_count])
    }

    pub fn reset(&mut self) {
        self.0.fill(0);
    }

    #[inline]
    pub fn get(&self, state: StateId) -> u64 {
        self.0[state as usize]
    }

    #[inline]
    pub fn increment(&mut self, state: StateId) {
        self.0[state as usize] += 1;
    }
}

/// Exploration score E: the count of the least-traversed state pair along a
/// within-token path (starting state included as element 0).
pub fn exploration_score(counter: &GlobalTransitionCounter, path: &StatePath) -> u64 {
    debug_assert!(path.len() >= 2, "within-token path must traverse an edge");
    path.pairs()
        .map(|(a, b)| counter.get(a, b))
        .min()
        .unwrap_or(0)
}

/// Loop count m: the largest local visit count among the states entered
/// while consuming the token.
pub fn loop_count(local: &LocalStateCounter, path: &StatePath) -> u64 {
    path.entered().iter().map(|&q| local.get(q)).max().unwrap_or(0)
}

#[inline]
fn exploration_of(counter: &GlobalTransitionCounter, start: StateId, entered: &[StateId]) -> u64 {
    let mut min = u64::MAX;
    let mut prev = start;
    for &q in entered {
        let c = counter.get(prev, q);
        if c < min {
            min = c;
        }
        prev = q;
    }
    if min == u64::MAX {
        0
    } else {
        min
    }
}

#[inline]
fn loop_count_of(local: &LocalStateCounter, entered: &[StateId]) -> u64 {
    entered.iter().map(|&q| local.get(q)).max().unwrap_or(0)
}

/// Reward vector over the whole vocabulary: valid token `i` receives
/// `ln(1 + sum_j E_j) / (1 + E_i)`, everything else 0.
pub fn reward_vector(
    counter: &GlobalTransitionCounter,
    state: StateId,
    index: &VocabularyIndex,
) -> Vec<f64> {
    let mut out = vec![0.0; index.vocab_size()];
    let scores: Vec<(TokenId, u64)> = index
        .token_paths(state)
        .map(|(token, entered)| (token, exploration_of(counter, state, entered)))
        .collect();
    let total: u64 = scores.iter().map(|(_, e)| e).sum();
    let numerator = (1.0 + total as f64).ln();
    for (token, e) in scores {
        out[token as usize] = numerator / (1.0 + e as f64);
    }
    out
}

/// Penalty vector: valid token `i` receives `beta * (1 + m_i)`, everything
/// else 1 (inert: those entries are masked anyway).
pub fn penalty_vector(
    local: &LocalStateCounter,
    state: StateId,
    index: &VocabularyIndex,
    beta: f64,
) -> Vec<f64> {
    let mut out = vec![1.0; index.vocab_size()];
    for (token, entered) in index.token_paths(state) {
        out[token as usize] = beta * (1.0 + loop_count_of(local, entered) as f64);
    }
    out
}

/// Elementwise reward / penalty.
pub fn adjust_vector(reward: &[f64], penalty: &[f64]) -> Vec<f64> {
    debug_assert_eq!(reward.len(), penalty.len());
    reward
        .iter()
        .zip(penalty.iter())
        .map(|(r, p)| r / p)
        .collect()
}

/// Spread (max - min) of the logits over unmasked tokens at `state`,
/// EOS included when the state is accepting.
pub fn logit_range(logits: &[f64], state: StateId, index: &VocabularyIndex) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &token in index.valid_tokens(state) {
        let z = logits[token as usize];
        min = min.min(z);
        max = max.max(z);
    }
    if index.eos_open(state) {
        let z = logits[index.eos() as usize];
        min = min.min(z);
        max = max.max(z);
    }
    if min > max {
        0.0
    } else {
        max - min
    }
}

/// Reusable per-step buffers for the generation hot loop.
#[derive(Default)]
struct StepScratch {
    adjusted: Vec<f64>,
    entries: Vec<(TokenId, u64, u64)>,
}

/// Full adjusted-logit computation for one step:
/// `z'_i = z_i + mask_i + gamma * range * adjust_i`.
pub fn apply_steering(
    logits: &[f64],
    state: StateId,
    index: &VocabularyIndex,
    counter: &GlobalTransitionCounter,
    local: &LocalStateCounter,
    params: &SteeringParams,
) -> Result<Vec<f64>> {
    let mut scratch = StepScratch::default();
    apply_steering_into(&mut scratch, logits, state, index, counter, local, params)?;
    Ok(std::mem::take(&mut scratch.adjusted))
}

fn apply_steering_into(
    scratch: &mut StepScratch,
    logits: &[f64],
    state: StateId,
    index: &VocabularyIndex,
    counter: &GlobalTransitionCounter,
    local: &LocalStateCounter,
    params: &SteeringParams,
) -> Result<()> {
    if logits.len() != index.vocab_size() {
        return Err(Error::Contract(format!(
            "logit vector has {} entries, vocabulary has {}",
            logits.len(),
            index.vocab_size()
        )));
    }
    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "non-finite input logit at token {bad}"
        )));
    }
    let mask = index.mask(state);
    scratch.adjusted.clear();
    scratch
        .adjusted
        .extend(logits.iter().zip(mask.iter()).map(|(z, m)| z + m));
    if params.mode == Mode::Diverse && params.gamma != 0.0 {
        add_steering_term(scratch, logits, state, index, counter, local, params);
    }
    Ok(())
}

/// Adds `gamma * range * adjust` in place on top of already-masked logits.
fn add_steering_term(
    scratch: &mut StepScratch,
    raw_logits: &[f64],
    state: StateId,
    index: &VocabularyIndex,
    counter: &GlobalTransitionCounter,
    local: &LocalStateCounter,
    params: &SteeringParams,
) {
    let range = match params.ablation {
        Ablation::NoRange => 1.0,
        _ => logit_range(raw_logits, state, index),
    };
    if range == 0.0 && params.ablation != Ablation::NoRange {
        return;
    }
    if params.ablation == Ablation::NoReward {
        return;
    }
    // One walk per token collects both the exploration score and the loop
    // count; this sits on the per-step hot path.
    scratch.entries.clear();
    let mut total: u64 = 0;
    for (token, entered) in index.token_paths(state) {
        let mut min_pair = u64::MAX;
        let mut max_local = 0u64;
        let mut prev = state;
        for &q in entered {
            min_pair = min_pair.min(counter.get(prev, q));
            max_local = max_local.max(local.get(q));
            prev = q;
        }
        let e = if min_pair == u64::MAX { 0 } else { min_pair };
        total += e;
        scratch.entries.push((token, e, max_local));
    }
    if total == 0 {
        // Fresh counters reward nothing; the adjustment is identically zero.
        return;
    }
    let numerator = (1.0 + total as f64).ln();
    let scale = params.gamma * range;
    for &(token, e, m) in &scratch.entries {
        let reward = numerator / (1.0 + e as f64);
        let penalty = match params.ablation {
            Ablation::NoPenalty => 1.0,
            _ => params.beta * (1.0 + m as f64),
        };
        scratch.adjusted[token as usize] += scale * reward / penalty;
    }
}

/// Draws one token from `softmax(adjusted / temperature)`.
pub fn sample_token(
    adjusted: &[f64],
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<TokenId> {
    debug_assert!(temperature > 0.0);
    let max = adjusted
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Contract(
            "no sampleable token: every logit is masked".into(),
        ));
    }
    let mut weights = Vec::with_capacity(adjusted.len());
    let mut total = 0.0;
    for &z in adjusted {
        let w = if z == f64::NEG_INFINITY {
            0.0
        } else {
            ((z - max) / temperature).exp()
        };
        total += w;
        weights.push(w);
    }
    let draw: f64 = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            cumulative += w;
            if draw < cumulative {
                return Ok(i as TokenId);
            }
        }
    }
    // Floating-point tail: fall back to the last unmasked token.
    Ok(last_positive as TokenId)
}

/// Everything produced by one sample.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub text: Vec<u8>,
    pub token_ids: Vec<TokenId>,
    /// Full automaton path over `text` from the initial state.
    pub state_path: StatePath,
    /// Terminated by EOS (always at an accepting state).
    pub valid: bool,
    /// Number of sampling steps (logit queries) taken.
    pub steps: usize,
    pub per_step_ms: Vec<f64>,
}

/// Derives the per-sample RNG stream from the run seed and sample index.
pub fn sample_rng(seed: u64, sample_index: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(sample_index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Generates one sample: query logits, mask (and steer in diverse mode),
/// sample, advance. EOS terminates a valid sample; exhausting the token
/// budget yields an invalid one. The global counter is updated only on
/// valid samples.
pub fn generate_sample(
    source: &mut dyn LogitSource,
    dfa: &Dfa,
    index: &VocabularyIndex,
    counter: &mut GlobalTransitionCounter,
    params: &SteeringParams,
    prompt: &str,
    rng: &mut impl Rng,
) -> Result<SampleOutcome> {
    params.validate()?;
    let mut local = LocalStateCounter::new(dfa.state_count());
    let mut state = dfa.initial();
    let mut text: Vec<u8> = Vec::new();
    let mut token_ids: Vec<TokenId> = Vec::new();
    let mut path_states = vec![state];
    let mut per_step_ms = Vec::new();
    let mut valid = false;

    let mut scratch = StepScratch::default();
    for step in 0..params.max_tokens {
        let started = Instant::now();
        let logits = source
            .next_logits(prompt, &token_ids)
            .map_err(|e| Error::SourceFault {
                step,
                message: e.to_string(),
            })?;
        if logits.len() != index.vocab_size() {
            return Err(Error::SourceFault {
                step,
                message: format!(
                    "logit vector has {} entries, expected {}",
                    logits.len(),
                    index.vocab_size()
                ),
            });
        }
        apply_steering_into(&mut scratch, &logits, state, index, counter, &local, params)
            .map_err(|e| match e {
                Error::Contract(message) => Error::SourceFault { step, message },
                other => other,
            })?;
        let token = sample_token(&scratch.adjusted, params.temperature, rng)?;
        per_step_ms.push(started.elapsed().as_secs_f64() * 1000.0);

        if token == index.eos() {
            valid = true;
            break;
        }
        let entered = index
            .token_path(state, token)
            .ok_or_else(|| {
                Error::Contract(format!(
                    "sampled token {token} is not valid at state {state}"
                ))
            })?
            .to_vec();
        for &q in &entered {
            local.increment(q);
        }
        text.extend_from_slice(index.token_bytes(token));
        path_states.extend_from_slice(&entered);
        state = *entered.last().expect("non-EOS tokens consume bytes");
        token_ids.push(token);
    }

    let state_path = StatePath::new(path_states);
    if valid {
        debug_assert!(dfa.is_accepting(state_path.last()));
        counter.record_path(&state_path);
    }
    Ok(SampleOutcome {
        text,
        token_ids,
        state_path,
        valid,
        steps: per_step_ms.len(),
        per_step_ms,
    })
}

/// Identifies a batch: hyperparameters plus provenance hashes for the
/// record header.
#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub params: SteeringParams,
    pub prompt: String,
    pub n: usize,
    pub seed: u64,
    pub pattern_hash: String,
    pub vocab_hash: String,
}

/// A batch failure carries the partial record so callers can persist what
/// was generated before the fault.
#[derive(Debug)]
pub struct BatchFault {
    pub partial: RunRecord,
    pub sample_index: usize,
    pub error: Error,
}

impl std::fmt::Display for BatchFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sample {}: {}", self.sample_index, self.error)
    }
}

impl std::error::Error for BatchFault {}

/// Runs `n` samples sequentially, sharing the global counter across samples.
/// Diverse mode is inherently sequential: every sample depends on the
/// counter state its predecessors left behind.
pub fn generate_batch(
    source: &mut dyn LogitSource,
    dfa: &Dfa,
    index: &VocabularyIndex,
    spec: &BatchSpec,
) -> std::result::Result<RunRecord, Box<BatchFault>> {
    let config = RunConfigSnapshot {
        pattern_hash: spec.pattern_hash.clone(),
        vocab_hash: spec.vocab_hash.clone(),
        beta: spec.params.beta,
        gamma: spec.params.gamma,
        temperature: spec.params.temperature,
        max_tokens: spec.params.max_tokens,
        seed: spec.seed,
        mode: spec.params.mode.as_str().to_string(),
        prompt: spec.prompt.clone(),
        n: spec.n,
    };
    let mut record = RunRecord::new(config);
    let mut counter = GlobalTransitionCounter::new(dfa.state_count());
    for i in 0..spec.n {
        let mut rng = sample_rng(spec.seed, i as u64);
        match generate_sample(
            source,
            dfa,
            index,
            &mut counter,
            &spec.params,
            &spec.prompt,
            &mut rng,
        ) {
            Ok(outcome) => record.samples.push(RecordedSample {
                index: i,
                text: outcome.text,
                tokens: outcome.token_ids,
                valid: outcome.valid,
                steps: outcome.steps,
                ms: outcome.per_step_ms,
            }),
            Err(error) => {
                return Err(Box::new(BatchFault {
                    partial: record,
                    sample_index: i,
                    error,
                }))
            }
        }
    }
    Ok(record)
}
