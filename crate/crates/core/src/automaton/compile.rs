//! Determinization, completion, and minimization.
//!
//! The NFA's byte sets are first refined into an alphabet partition so the
//! subset construction and Hopcroft's algorithm run over a handful of byte
//! classes instead of all 256 symbols. The final automaton is expanded back
//! into a dense per-byte transition table.

use std::collections::HashMap;
use std::collections::VecDeque;

use super::nfa::Nfa;
use crate::error::{Error, Result};

/// Complete DFA over byte classes, before canonical renumbering.
pub(crate) struct RawDfa {
    pub byte_to_class: [u16; 256],
    pub class_count: usize,
    /// rows[state][class] -> state; always total.
    pub rows: Vec<Vec<u32>>,
    pub accepting: Vec<bool>,
    pub initial: u32,
}

/// Partitions the byte alphabet so that bytes in the same class are
/// indistinguishable by every NFA edge set.
fn byte_classes(nfa: &Nfa) -> ([u16; 256], usize, Vec<u8>) {
    let mut sets = Vec::new();
    for edge in nfa.edge.iter().flatten() {
        if !sets.contains(&edge.0) {
            sets.push(edge.0);
        }
    }
    let words = sets.len().div_ceil(64).max(1);
    let mut byte_to_class = [0u16; 256];
    let mut signatures: HashMap<Vec<u64>, u16> = HashMap::new();
    let mut representatives = Vec::new();
    for b in 0u16..256 {
        let mut sig = vec![0u64; words];
        for (i, set) in sets.iter().enumerate() {
            if set.contains(b as u8) {
                sig[i / 64] |= 1u64 << (i % 64);
            }
        }
        let next_id = signatures.len() as u16;
        let class = *signatures.entry(sig).or_insert(next_id);
        if class == next_id && representatives.len() == class as usize {
            representatives.push(b as u8);
        }
        byte_to_class[b as usize] = class;
    }
    let count = signatures.len();
    (byte_to_class, count, representatives)
}

/// Subset construction; returns a partial-then-completed DFA over classes.
pub(crate) fn determinize(nfa: &Nfa, budget: usize) -> Result<RawDfa> {
    let (byte_to_class, class_count, reps) = byte_classes(nfa);

    let closure = |seed: Vec<u32>| -> Vec<u32> {
        let mut set = seed;
        let mut stack = set.clone();
        while let Some(s) = stack.pop() {
            for &t in &nfa.eps[s as usize] {
                if !set.contains(&t) {
                    set.push(t);
                    stack.push(t);
                }
            }
        }
        set.sort_unstable();
        set.dedup();
        set
    };

    let start = closure(vec![nfa.start]);
    let mut ids: HashMap<Vec<u32>, u32> = HashMap::new();
    ids.insert(start.clone(), 0);
    let mut subsets = vec![start];
    let mut rows: Vec<Vec<Option<u32>>> = Vec::new();
    let mut accepting = Vec::new();
    let mut next = 0usize;
    while next < subsets.len() {
        let subset = subsets[next].clone();
        accepting.push(subset.binary_search(&nfa.accept).is_ok());
        let mut row = vec![None; class_count];
        for (class, &rep) in reps.iter().enumerate() {
            let mut moved = Vec::new();
            for &s in &subset {
                if let Some((set, t)) = &nfa.edge[s as usize] {
                    if set.contains(rep) {
                        moved.push(*t);
                    }
                }
            }
            if moved.is_empty() {
                continue;
            }
            let target = closure(moved);
            let id = match ids.get(&target) {
                Some(&id) => id,
                None => {
                    let id = subsets.len() as u32;
                    if subsets.len() >= budget {
                        return Err(Error::StateBudget { budget });
                    }
                    ids.insert(target.clone(), id);
                    subsets.push(target);
                    id
                }
            };
            row[class] = Some(id);
        }
        rows.push(row);
        next += 1;
    }

    // Complete with a single sink when any transition is missing.
    let missing = rows.iter().any(|r| r.iter().any(|t| t.is_none()));
    let mut complete: Vec<Vec<u32>> = Vec::with_capacity(rows.len() + 1);
    if missing {
        let dead = rows.len() as u32;
        for row in rows {
            complete.push(row.into_iter().map(|t| t.unwrap_or(dead)).collect());
        }
        complete.push(vec![dead; class_count]);
        accepting.push(false);
    } else {
        for row in rows {
            complete.push(row.into_iter().map(|t| t.unwrap()).collect());
        }
    }

    Ok(RawDfa {
        byte_to_class,
        class_count,
        rows: complete,
        accepting,
        initial: 0,
    })
}

/// Hopcroft partition refinement. Returns the minimized automaton; the
/// coarsest partition is unique, so the result does not depend on worklist
/// order.
pub(crate) fn minimize(dfa: &RawDfa) -> RawDfa {
    let n = dfa.rows.len();
    let k = dfa.class_count;
    debug_assert!(n > 0);

    // Reverse transitions in CSR layout: sources of (class, target) live at
    // rev_data[rev_off[c * n + t]..rev_off[c * n + t + 1]].
    let mut rev_off = vec![0u32; k * n + 1];
    for row in &dfa.rows {
        for (c, &t) in row.iter().enumerate() {
            rev_off[c * n + t as usize + 1] += 1;
        }
    }
    for i in 1..rev_off.len() {
        rev_off[i] += rev_off[i - 1];
    }
    let mut rev_data = vec![0u32; k * n];
    let mut cursor = rev_off.clone();
    for (s, row) in dfa.rows.iter().enumerate() {
        for (c, &t) in row.iter().enumerate() {
            let slot = cursor[c * n + t as usize];
            rev_data[slot as usize] = s as u32;
            cursor[c * n + t as usize] += 1;
        }
    }
    let rev = |c: usize, t: usize| -> &[u32] {
        &rev_data[rev_off[c * n + t] as usize..rev_off[c * n + t + 1] as usize]
    };

    // Partition structure: `elements` holds states grouped by block,
    // `ranges[b]` is the half-open range of block b inside `elements`.
    let mut elements: Vec<u32> = (0..n as u32).collect();
    elements.sort_by_key(|&s| !dfa.accepting[s as usize]);
    let acc_count = dfa.accepting.iter().filter(|a| **a).count();
    let mut position = vec![0usize; n];
    for (i, &s) in elements.iter().enumerate() {
        position[s as usize] = i;
    }
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut block_of = vec![0u32; n];
    if acc_count > 0 {
        ranges.push((0, acc_count));
    }
    if acc_count < n {
        ranges.push((acc_count, n));
    }
    for (b, &(lo, hi)) in ranges.iter().enumerate() {
        for &s in &elements[lo..hi] {
            block_of[s as usize] = b as u32;
        }
    }

    let mut in_worklist: Vec<Vec<bool>> = ranges.iter().map(|_| vec![true; k]).collect();
    let mut worklist: VecDeque<(u32, usize)> = VecDeque::new();
    for b in 0..ranges.len() as u32 {
        for c in 0..k {
            worklist.push_back((b, c));
        }
    }

    let mut marked_count: Vec<usize> = vec![0; ranges.len()];
    while let Some((a, c)) = worklist.pop_front() {
        in_worklist[a as usize][c] = false;
        // Preimage of block `a` under class `c`.
        let (lo, hi) = ranges[a as usize];
        let splitter: Vec<u32> = elements[lo..hi].to_vec();
        let mut touched: Vec<u32> = Vec::new();
        for &t in &splitter {
            for &s in rev(c, t as usize) {
                let y = block_of[s as usize];
                let (ylo, _) = ranges[y as usize];
                let already = marked_count[y as usize];
                let pos = position[s as usize];
                if pos < ylo + already {
                    continue; // already marked
                }
                if already == 0 {
                    touched.push(y);
                }
                // Swap s into the marked prefix of its block.
                let dst = ylo + already;
                let other = elements[dst];
                elements.swap(pos, dst);
                position[s as usize] = dst;
                position[other as usize] = pos;
                marked_count[y as usize] += 1;
            }
        }
        for &y in &touched {
            let cnt = marked_count[y as usize];
            marked_count[y as usize] = 0;
            let (ylo, yhi) = ranges[y as usize];
            if cnt == yhi - ylo {
                continue; // whole block in preimage: no split
            }
            // New block takes the marked prefix.
            let z = ranges.len() as u32;
            ranges.push((ylo, ylo + cnt));
            ranges[y as usize] = (ylo + cnt, yhi);
            for &s in &elements[ylo..ylo + cnt] {
                block_of[s as usize] = z;
            }
            in_worklist.push(vec![false; k]);
            marked_count.push(0);
            let smaller = if cnt <= yhi - ylo - cnt { z } else { y };
            // A pending (y, c) splitter keeps covering the shrunk y, so the
            // new block joins it; otherwise the smaller half suffices.
            #[allow(clippy::needless_range_loop)]
            for cc in 0..k {
                if in_worklist[y as usize][cc] {
                    in_worklist[z as usize][cc] = true;
                    worklist.push_back((z, cc));
                } else {
                    in_worklist[smaller as usize][cc] = true;
                    worklist.push_back((smaller, cc));
                }
            }
        }
    }

    // Build the quotient automaton.
    let block_count = ranges.len();
    let mut repr = vec![u32::MAX; block_count];
    for s in 0..n as u32 {
        let b = block_of[s as usize] as usize;
        if repr[b] == u32::MAX || s < repr[b] {
            repr[b] = s;
        }
    }
    let rows = (0..block_count)
        .map(|b| {
            let r = repr[b] as usize;
            (0..k)
                .map(|c| block_of[dfa.rows[r][c] as usize])
                .collect()
        })
        .collect();
    let accepting = (0..block_count)
        .map(|b| dfa.accepting[repr[b] as usize])
        .collect();
    RawDfa {
        byte_to_class: dfa.byte_to_class,
        class_count: k,
        rows,
        accepting,
        initial: block_of[dfa.initial as usize],
    }
}

/// Renumbers states by breadth-first discovery from the initial state with
/// byte-value tie-breaking and expands the dense 256-column table.
pub(crate) fn canonicalize(dfa: &RawDfa) -> (Vec<u32>, Vec<bool>, u32) {
    let n = dfa.rows.len();
    let mut new_id = vec![u32::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    new_id[dfa.initial as usize] = 0;
    order.push(dfa.initial);
    queue.push_back(dfa.initial);
    while let Some(s) = queue.pop_front() {
        for b in 0u16..256 {
            let c = dfa.byte_to_class[b as usize] as usize;
            let t = dfa.rows[s as usize][c];
            if new_id[t as usize] == u32::MAX {
                new_id[t as usize] = order.len() as u32;
                order.push(t);
                queue.push_back(t);
            }
        }
    }
    debug_assert_eq!(order.len(), n, "minimized automaton has unreachable states");

    let mut table = vec![0u32; n * 256];
    let mut accepting = vec![false; n];
    for (idx, &old) in order.iter().enumerate() {
        accepting[idx] = dfa.accepting[old as usize];
        for b in 0..256usize {
            let c = dfa.byte_to_class[b] as usize;
            table[idx * 256 + b] = new_id[dfa.rows[old as usize][c] as usize];
        }
    }
    (table, accepting, 0)
}
