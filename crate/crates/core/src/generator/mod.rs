//! Completion sources for the search.
//!
//! The search talks to a [`Generator`], which turns a [`GenerationRequest`]
//! into raw completion strings. Two implementations ship with the crate:
//!
//! - [`HttpGenerator`]: a blocking JSON-over-HTTP client for hosted
//!   completion endpoints, with bounded retries and an in-flight cap.
//! - [`MockGrammarGenerator`]: a deterministic offline generator that samples
//!   lines from a finite [`crate::synthetic::GrammarSpec`].
//!
//! Prompt construction lives in [`prompt`].

mod http;
mod mock;
pub mod prompt;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthetic::GrammarError;

pub use http::{ApiStyle, HttpConfig, HttpGenerator, API_KEY_ENV};
pub use mock::{mock_grammar_generate, mock_grammar_refine, MockGrammarGenerator, ScriptedGenerator};
pub use prompt::{PromptError, PromptTemplates};

/// What a request is for. Offline generators use this to decide how to
/// continue; wire clients only send `prompt_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RequestKind {
    Expand,
    Refine { faulty_line: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub num_samples: usize,
    pub stop_sequences: Vec<String>,
    pub temperature: f64,
    pub seed: u64,
    /// Source lines the completion continues from.
    pub context: Vec<String>,
    pub kind: RequestKind,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.num_samples == 0 {
            return Err(GenerationError::InvalidRequest("num_samples must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("script has no entry for this request")]
    Unscripted,
}

impl GenerationError {
    /// Whether repeating the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            GenerationError::Transport(_) | GenerationError::RateLimited { .. } => true,
            GenerationError::Http { status, .. } => *status >= 500 || *status == 408,
            _ => false,
        }
    }

    /// Errors that will not go away for the rest of a run.
    pub fn is_permanent(&self) -> bool {
        match self {
            GenerationError::Http { status, .. } => matches!(*status, 401 | 403 | 404),
            GenerationError::InvalidRequest(_) => true,
            _ => false,
        }
    }
}

/// A source of raw completions. Implementations must be callable from
/// several threads at once.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, GenerationError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, GenerationError> {
        (**self).generate(request)
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn apply_stop_sequences(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}
