//! Error types shared across the engine.

use thiserror::Error;

/// Errors produced by compilation, indexing, generation, and persistence.
#[derive(Debug, Error)]
pub enum Error {
    /// The pattern text could not be parsed.
    #[error("regex syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    /// The pattern uses a construct outside the supported dialect.
    #[error("unsupported regex construct at byte {position}: {construct}")]
    Unsupported { position: usize, construct: String },

    /// Determinization would exceed the configured state cap.
    #[error("state budget exceeded: automaton requires more than {budget} states")]
    StateBudget { budget: usize },

    /// A vocabulary file or token list is malformed.
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// A logit source returned something unusable at a generation step.
    #[error("logit source fault at step {step}: {message}")]
    SourceFault { step: usize, message: String },

    /// A caller broke an API contract (invalid-token advance, dead-state query, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A run record or exported artifact is malformed.
    #[error("record error: {0}")]
    Record(String),

    /// Remote source transport or protocol failure.
    #[error("remote source error: {0}")]
    Remote(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
