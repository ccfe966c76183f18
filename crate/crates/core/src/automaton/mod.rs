//! Minimal complete DFAs over the byte alphabet.
//!
//! Patterns are compiled as full matches: a string is in the language only
//! when the whole string drives the automaton from the initial state to an
//! accepting state. The transition function is total; every automaton of a
//! non-universal language has exactly one dead sink state, and the live/dead
//! partition is computed at construction time.

mod compile;
mod nfa;
mod parser;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense state identifier, assigned by BFS discovery from the initial state.
pub type StateId = u32;

/// Default cap on determinized states.
pub const DEFAULT_STATE_BUDGET: usize = 100_000;

/// Compilation knobs.
#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    /// Maximum number of determinized states before compilation aborts.
    pub state_budget: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            state_budget: DEFAULT_STATE_BUDGET,
        }
    }
}

/// Minimal, complete deterministic finite automaton over bytes.
#[derive(Debug, Clone)]
pub struct Dfa {
    /// Row-major transition table, 256 entries per state.
    table: Vec<StateId>,
    accepting: Vec<bool>,
    initial: StateId,
    live: Vec<bool>,
    live_count: usize,
}

/// States visited while consuming a byte string, starting state included as
/// element 0; length is always input length + 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePath(Vec<StateId>);

impl StatePath {
    pub fn new(states: Vec<StateId>) -> Self {
        debug_assert!(!states.is_empty());
        StatePath(states)
    }

    pub fn states(&self) -> &[StateId] {
        &self.0
    }

    /// States entered while consuming input: everything but element 0.
    pub fn entered(&self) -> &[StateId] {
        &self.0[1..]
    }

    pub fn first(&self) -> StateId {
        self.0[0]
    }

    pub fn last(&self) -> StateId {
        *self.0.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Consecutive state pairs (state bigrams) along the path.
    pub fn pairs(&self) -> impl Iterator<Item = (StateId, StateId)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }
}

/// One traversed edge: transition(source, byte) = target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionTriple {
    pub from: StateId,
    pub byte: u8,
    pub to: StateId,
}

/// Edge counts under the different counting conventions used in reports.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransitionCounts {
    /// All (q, a, q') with the transition function total: |Q| * 256.
    pub complete: u64,
    /// Triples with a live source state: |live| * 256.
    pub live_source: u64,
    /// Triples with both endpoints live (edges of the trimmed automaton).
    pub live_to_live: u64,
}

/// State-bigram counts: distinct ordered pairs (q, q') connected by at least
/// one byte.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BigramCounts {
    /// Pairs with a live source (dead-state self-loop excluded).
    pub live_source: u64,
    /// Pairs with both endpoints live.
    pub live_to_live: u64,
}

impl Dfa {
    /// Compiles a pattern into a minimal complete DFA with the default state
    /// budget.
    pub fn compile(pattern: &str) -> Result<Dfa> {
        Self::compile_with(pattern, CompileOptions::default())
    }

    /// Compiles a pattern with explicit options.
    pub fn compile_with(pattern: &str, options: CompileOptions) -> Result<Dfa> {
        let ast = parser::parse(pattern)?;
        let nfa = nfa::build(&ast, options.state_budget)?;
        let raw = compile::determinize(&nfa, options.state_budget)?;
        let min = compile::minimize(&raw);
        let (table, accepting, initial) = compile::canonicalize(&min);
        if accepting.len() > options.state_budget.saturating_add(1) {
            return Err(Error::StateBudget {
                budget: options.state_budget,
            });
        }
        Ok(Self::from_parts(table, accepting, initial))
    }

    fn from_parts(table: Vec<StateId>, accepting: Vec<bool>, initial: StateId) -> Dfa {
        let live = compute_liveness(&table, &accepting);
        let live_count = live.iter().filter(|l| **l).count();
        Dfa {
            table,
            accepting,
            initial,
            live,
            live_count,
        }
    }

    pub fn state_count(&self) -> usize {
        self.accepting.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn is_accepting(&self, state: StateId) -> bool {
        self.accepting[state as usize]
    }

    pub fn is_live(&self, state: StateId) -> bool {
        self.live[state as usize]
    }

    pub fn live_count(&self) -> usize {
        self.live_count
    }

    pub fn dead_count(&self) -> usize {
        self.state_count() - self.live_count
    }

    pub fn accepting_states(&self) -> Vec<StateId> {
        (0..self.state_count() as StateId)
            .filter(|&q| self.accepting[q as usize])
            .collect()
    }

    /// Single transition step.
    #[inline]
    pub fn step(&self, state: StateId, byte: u8) -> StateId {
        self.table[state as usize * 256 + byte as usize]
    }

    /// Extended transition function: the state reached after consuming all of
    /// `input` from `state`.
    pub fn run(&self, state: StateId, input: &[u8]) -> StateId {
        input.iter().fold(state, |q, &b| self.step(q, b))
    }

    /// Whether the automaton accepts `input` as a full match from the initial
    /// state.
    pub fn accepts(&self, input: &[u8]) -> bool {
        self.is_accepting(self.run(self.initial, input))
    }

    /// All states visited while consuming `input`, starting state included.
    pub fn state_path(&self, state: StateId, input: &[u8]) -> StatePath {
        let mut states = Vec::with_capacity(input.len() + 1);
        states.push(state);
        let mut q = state;
        for &b in input {
            q = self.step(q, b);
            states.push(q);
        }
        StatePath(states)
    }

    /// All edges traversed while consuming `input`.
    pub fn transition_path(&self, state: StateId, input: &[u8]) -> Vec<TransitionTriple> {
        let mut out = Vec::with_capacity(input.len());
        let mut q = state;
        for &b in input {
            let t = self.step(q, b);
            out.push(TransitionTriple {
                from: q,
                byte: b,
                to: t,
            });
            q = t;
        }
        out
    }

    /// Recomputes the live/dead partition by reverse reachability from the
    /// accepting states. Construction caches the same partition; this is the
    /// from-scratch version.
    pub fn classify_liveness(&self) -> (Vec<StateId>, Vec<StateId>) {
        let live = compute_liveness(&self.table, &self.accepting);
        let mut live_ids = Vec::new();
        let mut dead_ids = Vec::new();
        for q in 0..self.state_count() as StateId {
            if live[q as usize] {
                live_ids.push(q);
            } else {
                dead_ids.push(q);
            }
        }
        (live_ids, dead_ids)
    }

    pub fn live_states(&self) -> Vec<StateId> {
        (0..self.state_count() as StateId)
            .filter(|&q| self.live[q as usize])
            .collect()
    }

    pub fn dead_states(&self) -> Vec<StateId> {
        (0..self.state_count() as StateId)
            .filter(|&q| !self.live[q as usize])
            .collect()
    }

    /// Symbol-level transition counts under all reporting conventions.
    pub fn transition_counts(&self) -> TransitionCounts {
        let mut live_to_live = 0u64;
        for q in 0..self.state_count() {
            if !self.live[q] {
                continue;
            }
            for b in 0..256usize {
                if self.live[self.table[q * 256 + b] as usize] {
                    live_to_live += 1;
                }
            }
        }
        TransitionCounts {
            complete: self.state_count() as u64 * 256,
            live_source: self.live_count as u64 * 256,
            live_to_live,
        }
    }

    /// Distinct state-bigram counts with live sources.
    pub fn bigram_counts(&self) -> BigramCounts {
        let mut live_source = 0u64;
        let mut live_to_live = 0u64;
        let mut seen = vec![false; self.state_count()];
        for q in 0..self.state_count() {
            if !self.live[q] {
                continue;
            }
            for s in seen.iter_mut() {
                *s = false;
            }
            for b in 0..256usize {
                let t = self.table[q * 256 + b] as usize;
                if !seen[t] {
                    seen[t] = true;
                    live_source += 1;
                    if self.live[t] {
                        live_to_live += 1;
                    }
                }
            }
        }
        BigramCounts {
            live_source,
            live_to_live,
        }
    }

    /// Serializes the automaton to its JSON document form.
    pub fn to_json(&self) -> String {
        let doc = DfaDocument {
            states: self.state_count(),
            initial: self.initial,
            accepting: self.accepting_states(),
            dead: self.dead_states(),
            transitions: (0..self.state_count())
                .map(|q| self.table[q * 256..(q + 1) * 256].to_vec())
                .collect(),
        };
        serde_json::to_string(&doc).expect("DFA document serialization cannot fail")
    }

    /// Loads an automaton from its JSON document form, validating totality
    /// and the recorded live/dead partition.
    pub fn from_json(text: &str) -> Result<Dfa> {
        let doc: DfaDocument = serde_json::from_str(text)?;
        if doc.states == 0 {
            return Err(Error::Record("automaton must have at least one state".into()));
        }
        if doc.transitions.len() != doc.states {
            return Err(Error::Record(format!(
                "expected {} transition rows, found {}",
                doc.states,
                doc.transitions.len()
            )));
        }
        let mut table = Vec::with_capacity(doc.states * 256);
        for (q, row) in doc.transitions.iter().enumerate() {
            if row.len() != 256 {
                return Err(Error::Record(format!(
                    "state {q}: expected 256 transitions, found {}",
                    row.len()
                )));
            }
            for &t in row {
                if t as usize >= doc.states {
                    return Err(Error::Record(format!(
                        "state {q}: transition target {t} out of range"
                    )));
                }
                table.push(t);
            }
        }
        if doc.initial as usize >= doc.states {
            return Err(Error::Record("initial state out of range".into()));
        }
        let mut accepting = vec![false; doc.states];
        for q in &doc.accepting {
            if *q as usize >= doc.states {
                return Err(Error::Record(format!("accepting state {q} out of range")));
            }
            accepting[*q as usize] = true;
        }
        let dfa = Self::from_parts(table, accepting, doc.initial);
        if dfa.dead_states() != doc.dead {
            return Err(Error::Record(
                "recorded dead set does not match reverse reachability".into(),
            ));
        }
        Ok(dfa)
    }
}

/// Reverse BFS from the accepting states over the dense table.
fn compute_liveness(table: &[StateId], accepting: &[bool]) -> Vec<bool> {
    let n = accepting.len();
    // Distinct reverse edges.
    let mut rev: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut seen = vec![false; n];
    for q in 0..n {
        for s in seen.iter_mut() {
            *s = false;
        }
        for b in 0..256usize {
            let t = table[q * 256 + b] as usize;
            if !seen[t] {
                seen[t] = true;
                rev[t].push(q as u32);
            }
        }
    }
    let mut live = vec![false; n];
    let mut queue = VecDeque::new();
    for (q, &acc) in accepting.iter().enumerate() {
        if acc {
            live[q] = true;
            queue.push_back(q as u32);
        }
    }
    while let Some(t) = queue.pop_front() {
        for &s in &rev[t as usize] {
            if !live[s as usize] {
                live[s as usize] = true;
                queue.push_back(s);
            }
        }
    }
    live
}

#[derive(Serialize, Deserialize)]
struct DfaDocument {
    states: usize,
    initial: StateId,
    accepting: Vec<StateId>,
    dead: Vec<StateId>,
    transitions: Vec<Vec<StateId>>,
}
