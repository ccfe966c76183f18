//! Independently scripted evaluation of the steering arithmetic, checked
//! against the library on randomized synthetic counter states.
//!
//! The oracle here recomputes everything from first principles: token paths
//! by stepping the automaton byte by byte, exploration scores as explicit
//! minima over pair counts, and the reward/penalty/adjust/range chain as
//! plain formula translations. Nothing is shared with the library's
//! precomputed-index fast path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use steerex_core::steering::{
    adjust_vector, apply_steering, logit_range, penalty_vector, reward_vector,
    GlobalTransitionCounter, LocalStateCounter, Mode, SteeringParams,
};
use steerex_core::{Dfa, StateId, TokenId, Vocabulary, VocabularyIndex};

const PATTERNS: &[&str] = &[
    "ab|cd",
    "(ab)*c",
    "apple|grape|lemon|melon|peach",
    "a(bc|de|fg|hi)j",
    "[a-c]*z",
    "a{2,5}b",
];

struct Scenario {
    dfa: Dfa,
    vocab: Vocabulary,
    index: VocabularyIndex,
    counter: GlobalTransitionCounter,
    local: LocalStateCounter,
    state: StateId,
    logits: Vec<f64>,
}

fn random_scenario(rng: &mut ChaCha12Rng) -> Scenario {
    let pattern = PATTERNS[rng.random_range(0..PATTERNS.len())];
    let dfa = Dfa::compile(pattern).unwrap();
    let tokens = [
        "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "l", "m", "n", "o", "p", "r", "z",
        "ab", "ap", "gr", "le", "me", "pe", "abc",
    ];
    let vocab = Vocabulary::from_strings(tokens).unwrap();
    let index = VocabularyIndex::build(&dfa, &vocab);

    // Pick a live state that has at least one valid token.
    let candidates: Vec<StateId> = (0..dfa.state_count() as StateId)
        .filter(|&q| dfa.is_live(q) && !index.valid_tokens(q).is_empty())
        .collect();
    let state = candidates[rng.random_range(0..candidates.len())];

    let mut counter = GlobalTransitionCounter::new(dfa.state_count());
    let mut local = LocalStateCounter::new(dfa.state_count());
    for from in 0..dfa.state_count() as StateId {
        for to in 0..dfa.state_count() as StateId {
            for _ in 0..rng.random_range(0..4u32) {
                counter.increment(from, to);
            }
        }
    }
    for q in 0..dfa.state_count() as StateId {
        for _ in 0..rng.random_range(0..3u32) {
            local.increment(q);
        }
    }
    let logits: Vec<f64> = (0..vocab.size())
        .map(|_| rng.random_range(-4.0..4.0))
        .collect();
    Scenario {
        dfa,
        vocab,
        index,
        counter,
        local,
        state,
        logits,
    }
}

/// Oracle: within-token path by stepping bytes, no index involved.
fn oracle_entered(dfa: &Dfa, state: StateId, bytes: &[u8]) -> Vec<StateId> {
    let mut out = Vec::new();
    let mut q = state;
    for &b in bytes {
        q = dfa.step(q, b);
        out.push(q);
    }
    out
}

fn oracle_valid_tokens(s: &Scenario) -> Vec<TokenId> {
    s.vocab
        .tokens()
        .filter(|(id, bytes)| {
            *id != s.vocab.eos() && s.dfa.is_live(s.dfa.run(s.state, bytes))
        })
        .map(|(id, _)| id)
        .collect()
}

fn oracle_exploration(s: &Scenario, token: TokenId) -> u64 {
    let entered = oracle_entered(&s.dfa, s.state, s.vocab.token(token));
    let mut prev = s.state;
    let mut min = u64::MAX;
    for q in entered {
        min = min.min(s.counter.get(prev, q));
        prev = q;
    }
    min
}

fn oracle_reward(s: &Scenario) -> Vec<f64> {
    let valid = oracle_valid_tokens(s);
    let total: u64 = valid.iter().map(|&t| oracle_exploration(s, t)).sum();
    let mut out = vec![0.0; s.vocab.size()];
    for &t in &valid {
        out[t as usize] = (1.0 + total as f64).ln() / (1.0 + oracle_exploration(s, t) as f64);
    }
    out
}

fn oracle_penalty(s: &Scenario, beta: f64) -> Vec<f64> {
    let valid = oracle_valid_tokens(s);
    let mut out = vec![1.0; s.vocab.size()];
    for &t in &valid {
        let m = oracle_entered(&s.dfa, s.state, s.vocab.token(t))
            .iter()
            .map(|&q| s.local.get(q))
            .max()
            .unwrap_or(0);
        out[t as usize] = beta * (1.0 + m as f64);
    }
    out
}

fn oracle_range(s: &Scenario) -> f64 {
    let valid = oracle_valid_tokens(s);
    let mut values: Vec<f64> = valid.iter().map(|&t| s.logits[t as usize]).collect();
    if s.dfa.is_accepting(s.state) {
        values.push(s.logits[s.vocab.eos() as usize]);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        0.0
    } else {
        max - min
    }
}

#[test]
fn randomized_scenarios_match_direct_evaluation() {
    let mut rng = ChaCha12Rng::from_seed([7u8; 32]);
    let params = SteeringParams::default();
    for case in 0..200 {
        let s = random_scenario(&mut rng);

        let reward = reward_vector(&s.counter, s.state, &s.index);
        let expected_reward = oracle_reward(&s);
        for (i, (a, b)) in reward.iter().zip(expected_reward.iter()).enumerate() {
            assert!(
                (a - b).abs() < 1e-12,
                "case {case}: reward[{i}] {a} vs oracle {b}"
            );
        }

        let penalty = penalty_vector(&s.local, s.state, &s.index, params.beta);
        let expected_penalty = oracle_penalty(&s, params.beta);
        for (i, (a, b)) in penalty.iter().zip(expected_penalty.iter()).enumerate() {
            assert!(
                (a - b).abs() < 1e-12,
                "case {case}: penalty[{i}] {a} vs oracle {b}"
            );
        }

        let adjust = adjust_vector(&reward, &penalty);
        for i in 0..adjust.len() {
            let expected = expected_reward[i] / expected_penalty[i];
            assert!((adjust[i] - expected).abs() < 1e-12, "case {case}: adjust[{i}]");
        }

        let range = logit_range(&s.logits, s.state, &s.index);
        assert!(
            (range - oracle_range(&s)).abs() < 1e-12,
            "case {case}: range {range} vs oracle {}",
            oracle_range(&s)
        );

        // Full chain: z' = z + mask + gamma * range * adjust.
        let adjusted = apply_steering(
            &s.logits, s.state, &s.index, &s.counter, &s.local, &params,
        )
        .unwrap();
        let valid = oracle_valid_tokens(&s);
        for (token, _) in s.vocab.tokens() {
            let i = token as usize;
            if valid.contains(&token) {
                let expected =
                    s.logits[i] + params.gamma * range * expected_reward[i] / expected_penalty[i];
                assert!(
                    (adjusted[i] - expected).abs() < 1e-12,
                    "case {case}: adjusted[{i}] {} vs {expected}",
                    adjusted[i]
                );
                assert!(adjusted[i].is_finite());
            } else if token == s.vocab.eos() {
                if s.dfa.is_accepting(s.state) {
                    assert_eq!(adjusted[i], s.logits[i]);
                } else {
                    assert_eq!(adjusted[i], f64::NEG_INFINITY);
                }
            } else {
                assert_eq!(adjusted[i], f64::NEG_INFINITY);
            }
        }
    }
}

#[test]
fn monotone_discouragement() {
    // Same pair total, larger own exploration score, strictly smaller reward.
    let dfa = Dfa::compile("ab|cd").unwrap();
    let vocab = Vocabulary::from_strings(["a", "c"]).unwrap();
    let index = VocabularyIndex::build(&dfa, &vocab);
    let q0 = dfa.initial();
    let after_a = dfa.run(q0, b"a");
    let after_c = dfa.run(q0, b"c");

    let mut low = GlobalTransitionCounter::new(dfa.state_count());
    for _ in 0..2 {
        low.increment(q0, after_a);
    }
    for _ in 0..3 {
        low.increment(q0, after_c);
    }
    let mut high = GlobalTransitionCounter::new(dfa.state_count());
    for _ in 0..3 {
        high.increment(q0, after_a);
    }
    for _ in 0..2 {
        high.increment(q0, after_c);
    }
    let reward_low = reward_vector(&low, q0, &index)[0];
    let reward_high = reward_vector(&high, q0, &index)[0];
    assert!(
        reward_high < reward_low,
        "raising E must lower the reward: {reward_high} vs {reward_low}"
    );
}

#[test]
fn loop_damping() {
    let dfa = Dfa::compile("(ab)*c").unwrap();
    let vocab = Vocabulary::from_strings(["ab", "c"]).unwrap();
    let index = VocabularyIndex::build(&dfa, &vocab);
    let q0 = dfa.initial();
    let mut counter = GlobalTransitionCounter::new(dfa.state_count());
    counter.record_path(&dfa.state_path(q0, b"ababc"));

    let fresh = LocalStateCounter::new(dfa.state_count());
    let mut looped = LocalStateCounter::new(dfa.state_count());
    let mid = dfa.run(q0, b"a");
    looped.increment(mid);
    looped.increment(q0);

    let params = SteeringParams::default();
    let reward = reward_vector(&counter, q0, &index);
    let adjust_fresh = adjust_vector(&reward, &penalty_vector(&fresh, q0, &index, params.beta));
    let adjust_looped =
        adjust_vector(&reward, &penalty_vector(&looped, q0, &index, params.beta));
    // Token "ab" revisits the loop states, so its adjustment must shrink.
    assert!(adjust_looped[0] < adjust_fresh[0]);
    // Token "c" leaves the loop; its local count is unchanged.
    assert_eq!(adjust_looped[1], adjust_fresh[1]);
}

#[test]
fn argmax_neutrality_on_fresh_runs() {
    let mut rng = ChaCha12Rng::from_seed([3u8; 32]);
    let dfa = Dfa::compile("apple|grape|lemon|melon|peach").unwrap();
    let vocab = Vocabulary::from_strings([
        "a", "b", "c", "e", "g", "h", "l", "m", "n", "o", "p", "r",
    ])
    .unwrap();
    let index = VocabularyIndex::build(&dfa, &vocab);
    let counter = GlobalTransitionCounter::new(dfa.state_count());
    let local = LocalStateCounter::new(dfa.state_count());
    let diverse = SteeringParams::default();
    let baseline = SteeringParams {
        mode: Mode::Baseline,
        ..SteeringParams::default()
    };
    for q in 0..dfa.state_count() as StateId {
        if !dfa.is_live(q) || index.valid_tokens(q).is_empty() {
            continue;
        }
        for _ in 0..8 {
            let z: Vec<f64> = (0..vocab.size()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let steered = apply_steering(&z, q, &index, &counter, &local, &diverse).unwrap();
            let masked = apply_steering(&z, q, &index, &counter, &local, &baseline).unwrap();
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            };
            assert_eq!(argmax(&steered), argmax(&masked));
        }
    }
}

#[test]
fn thousand_sample_baseline_batch_shape() {
    use steerex_core::steering::{generate_batch, BatchSpec};
    use steerex_core::logits::UniformSource;
    let dfa = Dfa::compile("(?:[^bB]|[bB][^oO]|[bB][oO][^mM]|[bB][oO][mM][^bB])+").unwrap();
    let vocab = Vocabulary::from_strings([
        "a", "b", "c", "d", "e", "g", "h", "i", "l", "m", "n", "o", "p", "r", "s", "t",
    ])
    .unwrap();
    let index = VocabularyIndex::build(&dfa, &vocab);
    let mut source = UniformSource::new(vocab.size());
    let spec = BatchSpec {
        params: SteeringParams {
            mode: Mode::Baseline,
            ..SteeringParams::default()
        },
        prompt: "Tell me a story.".into(),
        n: 1000,
        seed: 2024,
        pattern_hash: "p".into(),
        vocab_hash: "v".into(),
    };
    let record = generate_batch(&mut source, &dfa, &index, &spec).unwrap();
    assert_eq!(record.samples.len(), 1000);
    assert_eq!(record.config.n, 1000);
    assert_eq!(record.config.mode, "baseline");
    // Every sample is recorded, valid or not, with its step timings.
    for (i, sample) in record.samples.iter().enumerate() {
        assert_eq!(sample.index, i);
        assert_eq!(sample.ms.len(), sample.steps);
        assert!(sample.steps <= spec.params.max_tokens);
        if sample.valid {
            assert!(dfa.accepts(&sample.text));
        }
    }
    assert!(record.valid_fraction() > 0.0);
}

#[test]
fn shared_types_are_send_and_sync() {
    fn check<T: Send + Sync>() {}
    check::<Dfa>();
    check::<VocabularyIndex>();
    check::<Vocabulary>();
    check::<GlobalTransitionCounter>();
    check::<steerex_core::RunRecord>();
}
