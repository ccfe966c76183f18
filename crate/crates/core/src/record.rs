//! Persisted generation runs.
//!
//! A run record is JSON-lines: one header line with the run configuration
//! snapshot, then one line per sample. Sample text is stored in the
//! printable escape convention so arbitrary bytes survive the trip; the
//! per-step `ms` array is the only non-deterministic field.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escape::{escape_bytes, unescape_bytes};
use crate::vocab::TokenId;

/// Configuration snapshot written as the JSONL header line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfigSnapshot {
    pub pattern_hash: String,
    pub vocab_hash: String,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
    pub mode: String,
    pub prompt: String,
    pub n: usize,
}

/// One generated sample as persisted.
#[derive(Debug, Clone)]
pub struct RecordedSample {
    pub index: usize,
    /// Raw sample bytes (the concatenation of sampled token bytes).
    pub text: Vec<u8>,
    pub tokens: Vec<TokenId>,
    /// Terminated by EOS at an accepting state.
    pub valid: bool,
    /// Number of sampling steps taken (including the EOS step when valid).
    pub steps: usize,
    /// Wall-clock duration of each step in milliseconds.
    pub ms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    i: usize,
    text: String,
    tokens: Vec<TokenId>,
    valid: bool,
    steps: usize,
    ms: Vec<f64>,
}

/// A full generation run: config snapshot plus every sample, valid or not.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: RunConfigSnapshot,
    pub samples: Vec<RecordedSample>,
}

impl RunRecord {
    pub fn new(config: RunConfigSnapshot) -> RunRecord {
        RunRecord {
            config,
            samples: Vec::new(),
        }
    }

    /// Byte strings of the valid samples, in generation order.
    pub fn valid_texts(&self) -> Vec<&[u8]> {
        self.samples
            .iter()
            .filter(|s| s.valid)
            .map(|s| s.text.as_slice())
            .collect()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.valid).count() as f64 / self.samples.len() as f64
    }

    /// Total sampled tokens over total generation wall time, in tokens per
    /// second.
    pub fn tokens_per_second(&self) -> f64 {
        let steps: usize = self.samples.iter().map(|s| s.steps).sum();
        let ms: f64 = self.samples.iter().map(|s| s.ms.iter().sum::<f64>()).sum();
        if ms <= 0.0 {
            return 0.0;
        }
        steps as f64 / (ms / 1000.0)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.config)?;
        out.write_all(b"\n")?;
        for sample in &self.samples {
            let line = SampleLine {
                i: sample.index,
                text: escape_bytes(&sample.text),
                tokens: sample.tokens.clone(),
                valid: sample.valid,
                steps: sample.steps,
                ms: sample.ms.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<RunRecord> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Record("empty record file".into()))??;
        let config: RunConfigSnapshot = serde_json::from_str(&header)
            .map_err(|e| Error::Record(format!("bad header line: {e}")))?;
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: SampleLine = serde_json::from_str(&line)
                .map_err(|e| Error::Record(format!("bad sample line {}: {e}", lineno + 2)))?;
            let text = unescape_bytes(&parsed.text)
                .map_err(|e| Error::Record(format!("bad sample text on line {}: {e}", lineno + 2)))?;
            samples.push(RecordedSample {
                index: parsed.i,
                text,
                tokens: parsed.tokens,
                valid: parsed.valid,
                steps: parsed.steps,
                ms: parsed.ms,
            });
        }
        Ok(RunRecord { config, samples })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<RunRecord> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}
