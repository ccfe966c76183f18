//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use steerex_core::metrics::{evaluate_record, KernelParams, MetricsReport, DEFAULT_VENDI_CAP};
use steerex_core::steering::{generate_batch, BatchSpec, GlobalTransitionCounter, Mode, SteeringParams};
use steerex_core::{
    CompileOptions, Dfa, LogitSource, RemoteSource, RemoteSourceConfig, RunRecord,
    TableSource, UniformSource, Vocabulary, VocabularyIndex,
};

use crate::{CliError, CompareArgs, CompileArgs, EvaluateArgs, GenerateArgs};

const STATE_BUDGET_ENV: &str = "STEEREX_STATE_BUDGET";

fn compile_options() -> Result<CompileOptions, CliError> {
    let mut options = CompileOptions::default();
    if let Ok(value) = std::env::var(STATE_BUDGET_ENV) {
        options.state_budget = value.parse().map_err(|_| {
            CliError::new(1, format!("{STATE_BUDGET_ENV} must be an integer, got {value:?}"))
        })?;
    }
    Ok(options)
}

fn read_pattern(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(1, format!("cannot read pattern file {path:?}: {e}")))?;
    Ok(text.trim_end_matches(['\n', '\r']).to_string())
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn compile_pattern(path: &Path) -> Result<(Dfa, String), CliError> {
    let pattern = read_pattern(path)?;
    compile_pattern_text(&pattern)
}

fn compile_pattern_text(pattern: &str) -> Result<(Dfa, String), CliError> {
    let dfa = Dfa::compile_with(pattern, compile_options()?).map_err(|err| {
        let mut cli: CliError = err.into();
        if let Some(position) = error_position(&cli.message) {
            cli.message = format!("{}\n{}", cli.message, caret_line(pattern, position));
        }
        cli
    })?;
    Ok((dfa, pattern.to_string()))
}

fn error_position(message: &str) -> Option<usize> {
    let tail = message.split("at byte ").nth(1)?;
    tail.split(':').next()?.trim().parse().ok()
}

fn caret_line(pattern: &str, position: usize) -> String {
    const WINDOW: usize = 60;
    let mut start = position.saturating_sub(WINDOW / 2).min(pattern.len());
    while start > 0 && !pattern.is_char_boundary(start) {
        start -= 1;
    }
    let mut end = (start + WINDOW).min(pattern.len());
    while end < pattern.len() && !pattern.is_char_boundary(end) {
        end += 1;
    }
    let mut snippet = String::from("  ");
    snippet.push_str(&pattern[start..end]);
    snippet.push('\n');
    snippet.push_str(&" ".repeat(2 + position.saturating_sub(start)));
    snippet.push('^');
    snippet
}

pub(crate) fn compile(args: CompileArgs) -> Result<(), CliError> {
    let (dfa, _pattern) = match (&args.pattern, &args.pattern_text) {
        (Some(path), _) => compile_pattern(path)?,
        (None, Some(text)) => compile_pattern_text(text)?,
        (None, None) => unreachable!("clap enforces one pattern source"),
    };
    let trans = dfa.transition_counts();
    let bigrams = dfa.bigram_counts();
    if args.json {
        let doc = serde_json::json!({
            "states": dfa.state_count(),
            "live": dfa.live_count(),
            "dead": dfa.dead_count(),
            "transitions": {
                "complete": trans.complete,
                "live_source": trans.live_source,
                "live_to_live": trans.live_to_live,
            },
            "state_bigrams": {
                "live_source": bigrams.live_source,
                "live_to_live": bigrams.live_to_live,
            },
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!("states:            {}", dfa.state_count());
        println!("  live:            {}", dfa.live_count());
        println!("  dead:            {}", dfa.dead_count());
        println!("transitions (q,a,q'):");
        println!("  complete table:  {}", trans.complete);
        println!("  live source:     {}", trans.live_source);
        println!("  live to live:    {}", trans.live_to_live);
        println!("state bigrams (q,q'):");
        println!("  live source:     {}", bigrams.live_source);
        println!("  live to live:    {}", bigrams.live_to_live);
    }
    if let Some(path) = args.export {
        std::fs::write(&path, dfa.to_json())?;
        eprintln!("automaton written to {path:?}");
    }
    Ok(())
}

/// Config-file form of the generate command; flags override these values.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenerateFileConfig {
    pattern: Option<PathBuf>,
    vocab: Option<PathBuf>,
    prompt: Option<String>,
    mode: Option<String>,
    n: Option<usize>,
    beta: Option<f64>,
    gamma: Option<f64>,
    temperature: Option<f64>,
    max_tokens: Option<usize>,
    seed: Option<u64>,
    source: Option<String>,
    out: Option<PathBuf>,
}

struct ResolvedGenerate {
    pattern: PathBuf,
    vocab: PathBuf,
    prompt: String,
    params: SteeringParams,
    n: usize,
    seed: u64,
    source: String,
    out: PathBuf,
    export_counters: Option<PathBuf>,
}

fn resolve_generate(args: GenerateArgs) -> Result<ResolvedGenerate, CliError> {
    let file: GenerateFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new(1, format!("cannot read config {path:?}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(1, format!("bad config {path:?}: {e}")))?
        }
        None => GenerateFileConfig::default(),
    };
    let pattern = args
        .pattern
        .or(file.pattern)
        .ok_or_else(|| CliError::new(1, "--pattern is required (flag or config)"))?;
    let vocab = args
        .vocab
        .or(file.vocab)
        .ok_or_else(|| CliError::new(1, "--vocab is required (flag or config)"))?;
    let out = args
        .out
        .or(file.out)
        .ok_or_else(|| CliError::new(1, "--out is required (flag or config)"))?;
    let defaults = SteeringParams::default();
    let mode = match args.mode.or(file.mode) {
        Some(text) => Mode::parse(&text).map_err(|e| CliError::new(1, e.to_string()))?,
        None => defaults.mode,
    };
    let params = SteeringParams {
        beta: args.beta.or(file.beta).unwrap_or(defaults.beta),
        gamma: args.gamma.or(file.gamma).unwrap_or(defaults.gamma),
        temperature: args
            .temperature
            .or(file.temperature)
            .unwrap_or(defaults.temperature),
        max_tokens: args
            .max_tokens
            .or(file.max_tokens)
            .unwrap_or(defaults.max_tokens),
        mode,
        ablation: Default::default(),
    };
    params.validate().map_err(CliError::from)?;
    let n = args.n.or(file.n).unwrap_or(1);
    if n < 1 {
        return Err(CliError::new(1, "--n must be at least 1"));
    }
    Ok(ResolvedGenerate {
        pattern,
        vocab,
        prompt: args.prompt.or(file.prompt).unwrap_or_default(),
        params,
        n,
        seed: args.seed.or(file.seed).unwrap_or(0),
        source: args.source.or(file.source).unwrap_or_else(|| "uniform".into()),
        out,
        export_counters: args.export_counters,
    })
}

fn build_source(
    spec: &str,
    vocab: &Vocabulary,
) -> Result<Box<dyn LogitSource>, CliError> {
    if spec == "uniform" {
        return Ok(Box::new(UniformSource::new(vocab.size())));
    }
    if let Some(path) = spec.strip_prefix("table:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(1, format!("cannot read table {path:?}: {e}")))?;
        let table = TableSource::from_json_str(&text).map_err(CliError::from)?;
        if table.vocab_size() != vocab.size() {
            return Err(CliError::new(
                4,
                format!(
                    "table rows have {} entries but the vocabulary has {} tokens",
                    table.vocab_size(),
                    vocab.size()
                ),
            ));
        }
        return Ok(Box::new(table));
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        let config = RemoteSourceConfig {
            endpoint: url.to_string(),
            timeout: Duration::from_secs(30),
            retries: 2,
            auth_header: None,
        };
        let source = RemoteSource::connect(config, &vocab.hash(), vocab.size())
            .map_err(CliError::from)?;
        return Ok(Box::new(source));
    }
    Err(CliError::new(
        1,
        format!("unknown --source {spec:?} (expected uniform, table:PATH, or remote:URL)"),
    ))
}

pub(crate) fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let resolved = resolve_generate(args)?;
    let (dfa, pattern) = compile_pattern(&resolved.pattern)?;
    let vocab = Vocabulary::load(&resolved.vocab).map_err(CliError::from)?;
    let index = VocabularyIndex::build(&dfa, &vocab);
    for &state in index.starved_states() {
        eprintln!(
            "warning: live state {state} has no valid token; the vocabulary cannot spell a byte it needs"
        );
    }
    let mut source = build_source(&resolved.source, &vocab)?;

    let spec = BatchSpec {
        params: resolved.params,
        prompt: resolved.prompt.clone(),
        n: resolved.n,
        seed: resolved.seed,
        pattern_hash: sha256_hex(&pattern),
        vocab_hash: vocab.hash(),
    };
    let record = match generate_batch(source.as_mut(), &dfa, &index, &spec) {
        Ok(record) => record,
        Err(fault) => {
            // Persist what exists, then fail with the generation code.
            fault
                .partial
                .save(&resolved.out)
                .map_err(|e| CliError::new(1, e.to_string()))?;
            return Err(CliError::new(
                3,
                format!(
                    "generation fault at sample {}: {} (partial record retained at {:?})",
                    fault.sample_index, fault.error, resolved.out
                ),
            ));
        }
    };
    record.save(&resolved.out).map_err(CliError::from)?;
    if let Some(path) = &resolved.export_counters {
        export_counters(&dfa, &record, path)?;
    }
    println!(
        "wrote {} samples to {:?} (valid fraction {:.4}, {:.1} tokens/s)",
        record.samples.len(),
        resolved.out,
        record.valid_fraction(),
        record.tokens_per_second()
    );
    Ok(())
}

/// Rebuilds the global transition counter a finished run would hold: every
/// consecutive state pair of every valid sample, counted once per traversal.
pub(crate) fn rebuild_counter(dfa: &Dfa, record: &RunRecord) -> GlobalTransitionCounter {
    let mut counter = GlobalTransitionCounter::new(dfa.state_count());
    for text in record.valid_texts() {
        counter.record_path(&dfa.state_path(dfa.initial(), text));
    }
    counter
}

pub(crate) fn export_counters(
    dfa: &Dfa,
    record: &RunRecord,
    path: &Path,
) -> Result<(), CliError> {
    let counter = rebuild_counter(dfa, record);
    let pairs: Vec<serde_json::Value> = counter
        .export()
        .into_iter()
        .map(|(from, to, count)| serde_json::json!([from, to, count]))
        .collect();
    let doc = serde_json::json!({ "pairs": pairs });
    std::fs::write(path, serde_json::to_string(&doc)?)?;
    Ok(())
}

fn check_pattern_hash(record: &RunRecord, pattern: &str, what: &str) -> Result<(), CliError> {
    let hash = sha256_hex(pattern);
    if record.config.pattern_hash != hash {
        return Err(CliError::new(
            4,
            format!(
                "{what} was generated for pattern hash {} but this pattern hashes to {hash}",
                record.config.pattern_hash
            ),
        ));
    }
    Ok(())
}

pub(crate) fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let (dfa, pattern) = compile_pattern(&args.pattern)?;
    let record = RunRecord::load(&args.record).map_err(CliError::from)?;
    check_pattern_hash(&record, &pattern, "record")?;
    let params = KernelParams {
        degree: args.kernel_degree.max(1),
        shift: args.kernel_shift,
    };
    let report = evaluate_record(&dfa, &record, &params, DEFAULT_VENDI_CAP);
    for note in &report.notes {
        eprintln!("warning: {note}");
    }
    let rendered = if args.csv {
        format!("{}\n{}\n", MetricsReport::csv_header(), report.csv_row())
    } else {
        format!("{}\n", serde_json::to_string_pretty(&report)?)
    };
    match args.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => print!("{rendered}"),
    }
    Ok(())
}

pub(crate) fn compare(args: CompareArgs) -> Result<(), CliError> {
    let (dfa, pattern) = compile_pattern(&args.pattern)?;
    let record_a = RunRecord::load(&args.a).map_err(CliError::from)?;
    let record_b = RunRecord::load(&args.b).map_err(CliError::from)?;
    check_pattern_hash(&record_a, &pattern, "record A")?;
    check_pattern_hash(&record_b, &pattern, "record B")?;
    if record_a.config.pattern_hash != record_b.config.pattern_hash {
        return Err(CliError::new(4, "records come from different grammars"));
    }
    let params = KernelParams {
        degree: args.kernel_degree.max(1),
        shift: args.kernel_shift,
    };
    let a = evaluate_record(&dfa, &record_a, &params, DEFAULT_VENDI_CAP);
    let b = evaluate_record(&dfa, &record_b, &params, DEFAULT_VENDI_CAP);

    println!(
        "{:<16}{:>14}{:>14}{:>14}",
        "metric", "A", "B", "delta"
    );
    let row = |name: &str, va: f64, vb: f64| {
        println!(
            "{:<16}{:>14.4}{:>14.4}{:>14.4}",
            name,
            va,
            vb,
            vb - va
        );
    };
    row("state_cov", a.state_cov, b.state_cov);
    row("trans_cov", a.trans_cov, b.trans_cov);
    row("path_cov", a.path_cov, b.path_cov);
    row("distinct_2", a.distinct_2 as f64, b.distinct_2 as f64);
    row("distinct_3", a.distinct_3 as f64, b.distinct_3 as f64);
    row("vendi", a.vendi, b.vendi);
    row("avg_length", a.avg_length, b.avg_length);
    row("valid_fraction", a.valid_fraction, b.valid_fraction);

    let tps_a = record_a.tokens_per_second();
    let tps_b = record_b.tokens_per_second();
    let pct = if tps_a > 0.0 { 100.0 * tps_b / tps_a } else { 0.0 };
    println!("{:<16}{:>14.2}{:>14.2}{:>13.2}%", "tokens/s", tps_a, tps_b, pct);
    Ok(())
}
