//! Regex-constrained text generation with automaton-guided diversity
//! steering, plus the metrics to measure what it buys.
//!
//! The engine compiles a regular expression into a minimal complete DFA over
//! bytes, aligns a token vocabulary with it so invalid tokens can be masked
//! to `-inf` at every step, and (in diverse mode) adjusts the remaining
//! logits toward automaton paths that previous samples left unexplored.
//! Generated runs are persisted as JSON-lines records and scored for
//! structural coverage (states, symbol transitions, state bigrams) and
//! content diversity (distinct n-grams, Vendi score over a weighted-degree
//! string kernel).

pub mod automaton;
pub mod error;
pub mod escape;
pub mod logits;
pub mod metrics;
pub mod record;
pub mod steering;
pub mod vocab;

pub use automaton::{CompileOptions, Dfa, StateId, StatePath, TransitionTriple};
pub use error::{Error, Result};
pub use logits::{LogitSource, RemoteSource, RemoteSourceConfig, TableSource, UniformSource};
pub use record::{RecordedSample, RunConfigSnapshot, RunRecord};
pub use steering::{
    Ablation, BatchFault, BatchSpec, GlobalTransitionCounter, LocalStateCounter, Mode,
    SampleOutcome, SteeringParams,
};
pub use vocab::{TokenId, Vocabulary, VocabularyIndex};
