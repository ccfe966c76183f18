//! Token vocabularies and their alignment with an automaton.
//!
//! [`VocabularyIndex`] precomputes, for every live state, the set of tokens
//! whose bytes keep the automaton in a live state, the state each such token
//! leads to, and the additive `0 / -inf` mask vector applied to logits. The
//! end-of-sequence token is the empty byte string and is unmasked exactly at
//! accepting states, so a sample terminated by EOS is always a full match.

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::automaton::{Dfa, StateId};
use crate::error::{Error, Result};
use crate::escape::{escape_bytes, unescape_bytes};

/// Dense token identifier into the vocabulary.
pub type TokenId = u32;

/// An ordered list of token byte strings with a distinguished EOS id.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    eos: TokenId,
}

impl Vocabulary {
    /// Builds a vocabulary from raw token bytes. The EOS token must be the
    /// empty byte string and no other token may be empty.
    pub fn new(tokens: Vec<Vec<u8>>, eos: TokenId) -> Result<Vocabulary> {
        if tokens.is_empty() {
            return Err(Error::Vocabulary("vocabulary is empty".into()));
        }
        let eos_idx = eos as usize;
        if eos_idx >= tokens.len() {
            return Err(Error::Vocabulary(format!(
                "eos id {eos} out of range for {} tokens",
                tokens.len()
            )));
        }
        if !tokens[eos_idx].is_empty() {
            return Err(Error::Vocabulary(
                "eos token must be the empty byte string".into(),
            ));
        }
        for (i, t) in tokens.iter().enumerate() {
            if i != eos_idx && t.is_empty() {
                return Err(Error::Vocabulary(format!(
                    "token {i} is empty; only the eos token may be empty"
                )));
            }
        }
        Ok(Vocabulary { tokens, eos })
    }

    /// Convenience constructor from string tokens; the EOS entry is appended
    /// as the last id.
    pub fn from_strings<I, S>(tokens: I) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut raw: Vec<Vec<u8>> = tokens
            .into_iter()
            .map(|s| s.as_ref().as_bytes().to_vec())
            .collect();
        let eos = raw.len() as TokenId;
        raw.push(Vec::new());
        Vocabulary::new(raw, eos)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token(&self, id: TokenId) -> &[u8] {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as TokenId, t.as_slice()))
    }

    /// Canonical JSON form: `{"eos": id, "tokens": ["...", ...]}` with token
    /// bytes in the printable escape convention.
    pub fn from_json_str(text: &str) -> Result<Vocabulary> {
        #[derive(Deserialize)]
        struct Doc {
            eos: TokenId,
            tokens: Vec<String>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        let mut tokens = Vec::with_capacity(doc.tokens.len());
        for (i, t) in doc.tokens.iter().enumerate() {
            let bytes = unescape_bytes(t)
                .map_err(|e| Error::Vocabulary(format!("token {i}: {e}")))?;
            tokens.push(bytes);
        }
        Vocabulary::new(tokens, doc.eos)
    }

    pub fn to_json_string(&self) -> String {
        let tokens: Vec<String> = self.tokens.iter().map(|t| escape_bytes(t)).collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "eos": self.eos,
            "tokens": tokens,
        }))
        .expect("vocabulary serialization cannot fail")
    }

    /// Two-column TSV form: `id<TAB>token` per line, same escape convention.
    /// The EOS row has an empty token column.
    pub fn from_tsv_str(text: &str) -> Result<Vocabulary> {
        let mut rows: Vec<(u32, Vec<u8>)> = Vec::new();
        let mut eos = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id_text, tok_text) = line.split_once('\t').ok_or_else(|| {
                Error::Vocabulary(format!("line {}: expected id<TAB>token", lineno + 1))
            })?;
            let id: u32 = id_text.trim().parse().map_err(|_| {
                Error::Vocabulary(format!("line {}: bad token id {id_text:?}", lineno + 1))
            })?;
            let bytes = unescape_bytes(tok_text)
                .map_err(|e| Error::Vocabulary(format!("line {}: {e}", lineno + 1)))?;
            if bytes.is_empty() {
                eos = Some(id);
            }
            rows.push((id, bytes));
        }
        rows.sort_by_key(|(id, _)| *id);
        for (expect, (id, _)) in rows.iter().enumerate() {
            if *id as usize != expect {
                return Err(Error::Vocabulary(format!(
                    "token ids must be dense 0..n; missing or duplicate id near {id}"
                )));
            }
        }
        let eos = eos.ok_or_else(|| Error::Vocabulary("no empty eos row found".into()))?;
        Vocabulary::new(rows.into_iter().map(|(_, t)| t).collect(), eos)
    }

    /// Loads a vocabulary file; `.tsv` selects the TSV reader, anything else
    /// is parsed as the canonical JSON form.
    pub fn load(path: &std::path::Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().and_then(|e| e.to_str()) == Some("tsv") {
            Self::from_tsv_str(&text)
        } else {
            Self::from_json_str(&text)
        }
    }

    /// Lowercase hex SHA-256 over the token byte strings in id order, each
    /// prefixed with its length as a little-endian u64.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update((token.len() as u64).to_le_bytes());
            hasher.update(token);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-state entry of the index; present for live states only.
#[derive(Debug, Clone)]
struct StateEntry {
    /// Valid non-EOS token ids, sorted ascending.
    valid: Vec<TokenId>,
    /// Target state per valid token, parallel to `valid`.
    next: Vec<StateId>,
    /// (offset, len) into the paths arena per valid token: the states
    /// entered while consuming the token's bytes.
    paths: Vec<(u32, u32)>,
    /// Dense additive mask over the vocabulary: 0.0 or -inf.
    mask: Vec<f64>,
    /// Whether EOS is unmasked here (true iff the state is accepting).
    eos_open: bool,
}

/// Precomputed token transition table, valid-token sets, and mask vectors.
#[derive(Debug, Clone)]
pub struct VocabularyIndex {
    vocab_size: usize,
    eos: TokenId,
    /// Token byte strings by id, copied from the vocabulary so generation
    /// can assemble sample text without a second handle.
    tokens: Vec<Vec<u8>>,
    entries: Vec<Option<StateEntry>>,
    arena: Vec<StateId>,
    /// Live, non-accepting states where no token keeps the automaton live:
    /// the vocabulary cannot spell any byte this state needs.
    starved: Vec<StateId>,
}

impl VocabularyIndex {
    /// Aligns a vocabulary with an automaton by walking a shared byte trie
    /// from every live state.
    pub fn build(dfa: &Dfa, vocab: &Vocabulary) -> VocabularyIndex {
        let trie = Trie::build(vocab);
        let mut entries: Vec<Option<StateEntry>> = vec![None; dfa.state_count()];
        let mut arena: Vec<StateId> = Vec::new();
        let mut starved = Vec::new();

        // Scratch for one DFS: (trie node, dfa state, depth).
        let mut byte_stack: Vec<StateId> = Vec::new();
        for q in 0..dfa.state_count() as StateId {
            if !dfa.is_live(q) {
                continue;
            }
            let mut found: Vec<(TokenId, StateId, (u32, u32))> = Vec::new();
            byte_stack.clear();
            dfs(
                dfa,
                &trie,
                0,
                q,
                &mut byte_stack,
                &mut arena,
                &mut found,
            );
            found.sort_unstable_by_key(|(id, _, _)| *id);
            let mut mask = vec![f64::NEG_INFINITY; vocab.size()];
            for (id, _, _) in &found {
                mask[*id as usize] = 0.0;
            }
            let eos_open = dfa.is_accepting(q);
            if eos_open {
                mask[vocab.eos() as usize] = 0.0;
            }
            if found.is_empty() && !eos_open {
                starved.push(q);
            }
            entries[q as usize] = Some(StateEntry {
                valid: found.iter().map(|(id, _, _)| *id).collect(),
                next: found.iter().map(|(_, n, _)| *n).collect(),
                paths: found.iter().map(|(_, _, p)| *p).collect(),
                mask,
                eos_open,
            });
        }

        VocabularyIndex {
            vocab_size: vocab.size(),
            eos: vocab.eos(),
            tokens: vocab.tokens().map(|(_, t)| t.to_vec()).collect(),
            entries,
            arena,
            starved,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    /// Byte string of a token.
    pub fn token_bytes(&self, token: TokenId) -> &[u8] {
        &self.tokens[token as usize]
    }

    fn entry(&self, state: StateId) -> &StateEntry {
        self.entries[state as usize]
            .as_ref()
            .unwrap_or_else(|| panic!("contract violation: dead state {state} queried"))
    }

    /// Sorted ids of non-EOS tokens whose consumption from `state` lands in
    /// a live state.
    pub fn valid_tokens(&self, state: StateId) -> &[TokenId] {
        &self.entry(state).valid
    }

    /// The precomputed additive mask for `state`; panics on dead states,
    /// which generation can never reach.
    pub fn mask(&self, state: StateId) -> &[f64] {
        &self.entry(state).mask
    }

    /// Whether EOS is unmasked at `state`.
    pub fn eos_open(&self, state: StateId) -> bool {
        self.entry(state).eos_open
    }

    /// Token transition: the live state reached by consuming `token` from
    /// `state`. Advancing on a token outside the valid set is a contract
    /// violation.
    pub fn advance(&self, state: StateId, token: TokenId) -> Result<StateId> {
        let entry = self.entry(state);
        match entry.valid.binary_search(&token) {
            Ok(i) => Ok(entry.next[i]),
            Err(_) => Err(Error::Contract(format!(
                "invalid-token advance: token {token} is masked at state {state}"
            ))),
        }
    }

    /// States entered while consuming `token` from `state` (the within-token
    /// path without its starting state), or None if the token is invalid.
    pub fn token_path(&self, state: StateId, token: TokenId) -> Option<&[StateId]> {
        let entry = self.entry(state);
        let i = entry.valid.binary_search(&token).ok()?;
        let (off, len) = entry.paths[i];
        Some(&self.arena[off as usize..off as usize + len as usize])
    }

    /// Within-token paths for every valid token at `state`, in valid-token
    /// order.
    pub fn token_paths(&self, state: StateId) -> impl Iterator<Item = (TokenId, &[StateId])> {
        let entry = self.entry(state);
        entry.valid.iter().zip(entry.paths.iter()).map(
            move |(&id, &(off, len))| {
                (id, &self.arena[off as usize..off as usize + len as usize])
            },
        )
    }

    /// Live non-accepting states with an empty valid-token set.
    pub fn starved_states(&self) -> &[StateId] {
        &self.starved
    }
}

fn dfs(
    dfa: &Dfa,
    trie: &Trie,
    node: usize,
    state: StateId,
    byte_stack: &mut Vec<StateId>,
    arena: &mut Vec<StateId>,
    found: &mut Vec<(TokenId, StateId, (u32, u32))>,
) {
    for &token in &trie.nodes[node].tokens {
        let off = arena.len() as u32;
        arena.extend_from_slice(byte_stack);
        found.push((token, state, (off, byte_stack.len() as u32)));
    }
    for &(byte, child) in &trie.nodes[node].children {
        let next = dfa.step(state, byte);
        if !dfa.is_live(next) {
            continue;
        }
        byte_stack.push(next);
        dfs(dfa, trie, child, next, byte_stack, arena, found);
        byte_stack.pop();
    }
}

struct TrieNode {
    children: Vec<(u8, usize)>,
    /// Tokens whose byte string ends at this node.
    tokens: Vec<TokenId>,
}

struct Trie {
    nodes: Vec<TrieNode>,
}

impl Trie {
    fn build(vocab: &Vocabulary) -> Trie {
        let mut nodes = vec![TrieNode {
            children: Vec::new(),
            tokens: Vec::new(),
        }];
        for (id, bytes) in vocab.tokens() {
            if id == vocab.eos() {
                continue;
            }
            let mut node = 0usize;
            for &b in bytes {
                node = match nodes[node].children.iter().find(|(c, _)| *c == b) {
                    Some(&(_, child)) => child,
                    None => {
                        let child = nodes.len();
                        nodes.push(TrieNode {
                            children: Vec::new(),
                            tokens: Vec::new(),
                        });
                        nodes[node].children.push((b, child));
                        child
                    }
                };
            }
            nodes[node].tokens.push(id);
        }
        // Byte-sorted children make the walk order deterministic.
        for node in &mut nodes {
            node.children.sort_unstable_by_key(|(b, _)| *b);
            node.tokens.sort_unstable();
        }
        Trie { nodes }
    }
}
