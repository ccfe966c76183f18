//! Thompson construction from the parsed pattern tree.
//!
//! Every NFA state carries at most one byte-class transition plus epsilon
//! edges, which keeps determinization simple. Counted repetitions are
//! expanded structurally, guarded by a state cap derived from the DFA state
//! budget.

use super::parser::{Ast, ByteSet};
use crate::error::{Error, Result};

pub(crate) struct Nfa {
    /// Epsilon successors per state.
    pub eps: Vec<Vec<u32>>,
    /// Optional byte-class transition per state.
    pub edge: Vec<Option<(ByteSet, u32)>>,
    pub start: u32,
    pub accept: u32,
}

struct Builder {
    eps: Vec<Vec<u32>>,
    edge: Vec<Option<(ByteSet, u32)>>,
    cap: usize,
}

impl Builder {
    fn state(&mut self) -> Result<u32> {
        if self.eps.len() >= self.cap {
            return Err(Error::StateBudget { budget: self.cap });
        }
        self.eps.push(Vec::new());
        self.edge.push(None);
        Ok(self.eps.len() as u32 - 1)
    }

    fn eps_edge(&mut self, from: u32, to: u32) {
        self.eps[from as usize].push(to);
    }

    /// Builds a fragment and returns its (entry, exit) pair.
    fn fragment(&mut self, ast: &Ast) -> Result<(u32, u32)> {
        match ast {
            Ast::Empty => {
                let s = self.state()?;
                Ok((s, s))
            }
            Ast::Class(set) => {
                let s = self.state()?;
                let t = self.state()?;
                self.edge[s as usize] = Some((*set, t));
                Ok((s, t))
            }
            Ast::Concat(items) => {
                let mut entry = None;
                let mut exit = None;
                for item in items {
                    let (i, o) = self.fragment(item)?;
                    match exit {
                        None => entry = Some(i),
                        Some(prev) => self.eps_edge(prev, i),
                    }
                    exit = Some(o);
                }
                match (entry, exit) {
                    (Some(i), Some(o)) => Ok((i, o)),
                    _ => {
                        let s = self.state()?;
                        Ok((s, s))
                    }
                }
            }
            Ast::Alt(branches) => {
                let entry = self.state()?;
                let exit = self.state()?;
                for branch in branches {
                    let (i, o) = self.fragment(branch)?;
                    self.eps_edge(entry, i);
                    self.eps_edge(o, exit);
                }
                Ok((entry, exit))
            }
            Ast::Repeat { inner, min, max } => self.repeat(inner, *min, *max),
        }
    }

    fn repeat(&mut self, inner: &Ast, min: u32, max: Option<u32>) -> Result<(u32, u32)> {
        match max {
            None => {
                // min copies followed by a Kleene star.
                let mut parts = Vec::with_capacity(min as usize + 1);
                for _ in 0..min {
                    parts.push(self.fragment(inner)?);
                }
                parts.push(self.star(inner)?);
                Ok(self.chain(parts))
            }
            Some(0) => {
                let s = self.state()?;
                Ok((s, s))
            }
            Some(max) => {
                // min copies followed by (max - min) optional copies.
                let mut parts = Vec::with_capacity(max as usize);
                for _ in 0..min {
                    parts.push(self.fragment(inner)?);
                }
                for _ in min..max {
                    let (i, o) = self.fragment(inner)?;
                    let entry = self.state()?;
                    let exit = self.state()?;
                    self.eps_edge(entry, i);
                    self.eps_edge(o, exit);
                    self.eps_edge(entry, exit);
                    parts.push((entry, exit));
                }
                Ok(self.chain(parts))
            }
        }
    }

    fn star(&mut self, inner: &Ast) -> Result<(u32, u32)> {
        let (i, o) = self.fragment(inner)?;
        let entry = self.state()?;
        let exit = self.state()?;
        self.eps_edge(entry, i);
        self.eps_edge(o, exit);
        self.eps_edge(entry, exit);
        self.eps_edge(o, i);
        Ok((entry, exit))
    }

    fn chain(&mut self, parts: Vec<(u32, u32)>) -> (u32, u32) {
        debug_assert!(!parts.is_empty());
        let entry = parts[0].0;
        let mut exit = parts[0].1;
        for (i, o) in parts.into_iter().skip(1) {
            self.eps_edge(exit, i);
            exit = o;
        }
        (entry, exit)
    }
}

/// Compiles the pattern tree into a Thompson NFA.
pub(crate) fn build(ast: &Ast, state_budget: usize) -> Result<Nfa> {
    // Thompson fragments use at most a small constant factor more states
    // than the pattern size; the cap just prevents pathological repeats.
    let cap = state_budget.saturating_mul(8).max(1024);
    let mut b = Builder {
        eps: Vec::new(),
        edge: Vec::new(),
        cap,
    };
    let (start, accept) = b.fragment(ast)?;
    Ok(Nfa {
        eps: b.eps,
        edge: b.edge,
        start,
        accept,
    })
}
