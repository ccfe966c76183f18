//! steerex: compile grammars, run constrained generation, and score runs.
//!
//! Exit codes are a stable contract for scripting: 0 success, 2 grammar
//! error, 3 generation fault, 4 input mismatch, 1 anything else.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "steerex",
    about = "Regex-constrained generation with automaton-guided diversity steering",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a pattern and print automaton statistics.
    Compile(CompileArgs),
    /// Run a generation batch and write a JSONL run record.
    Generate(GenerateArgs),
    /// Compute coverage and diversity metrics for a run record.
    Evaluate(EvaluateArgs),
    /// Compare two run records side by side.
    Compare(CompareArgs),
}

#[derive(Args)]
struct CompileArgs {
    /// Pattern file (trailing newline ignored).
    #[arg(long, conflicts_with = "pattern_text", required_unless_present = "pattern_text")]
    pattern: Option<PathBuf>,
    /// Pattern given inline instead of from a file.
    #[arg(long = "pattern-text")]
    pattern_text: Option<String>,
    /// Write the compiled automaton as a JSON document.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Print statistics as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Default)]
struct GenerateArgs {
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pattern: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Prompt passed to the logit source (never through the automaton).
    #[arg(long)]
    prompt: Option<String>,
    /// baseline or diverse.
    #[arg(long)]
    mode: Option<String>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long = "max-tokens")]
    max_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// uniform | table:PATH | remote:URL
    #[arg(long)]
    source: Option<String>,
    /// Output JSONL path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export the global transition counter as JSON.
    #[arg(long = "export-counters")]
    export_counters: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    record: PathBuf,
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long = "kernel-degree", default_value_t = 3)]
    kernel_degree: usize,
    #[arg(long = "kernel-shift", default_value_t = 2)]
    kernel_shift: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit a CSV row instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline record.
    #[arg(long)]
    a: PathBuf,
    /// Candidate record.
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    pattern: PathBuf,
    #[arg(long = "kernel-degree", default_value_t = 3)]
    kernel_degree: usize,
    #[arg(long = "kernel-shift", default_value_t = 2)]
    kernel_shift: usize,
}

/// Error with the exit code it maps to.
pub(crate) struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub(crate) fn new(code: u8, message: impl Into<String>) -> CliError {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl From<steerex_core::Error> for CliError {
    fn from(err: steerex_core::Error) -> CliError {
        use steerex_core::Error;
        let code = match &err {
            Error::Syntax { .. } | Error::Unsupported { .. } | Error::StateBudget { .. } => 2,
            Error::SourceFault { .. } | Error::Remote(_) | Error::Contract(_) => 3,
            _ => 1,
        };
        CliError::new(code, err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> CliError {
        CliError::new(1, err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> CliError {
        CliError::new(1, err.to_string())
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes (e.g. `steerex ... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compile(args) => commands::compile(args),
        Command::Generate(args) => commands::generate(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Compare(args) => commands::compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
