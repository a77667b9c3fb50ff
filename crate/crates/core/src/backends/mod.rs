//! Structured-output backends for planning and repair.
//!
//! Every backend answers a [`BackendRequest`] with raw text; callers parse it
//! through [`request_structured`], which owns retry accounting and the token
//! ledger.

mod llm;
mod request;
mod rule_planner;
mod rule_repairer;
mod scripted;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use llm::{LlmBackend, LlmConfig};
pub use request::{
    build_plan_request, build_repair_request, BackendRequest, ContextDocument, RequestKind, CI_LABEL, CONSTRAINT_BLOCK,
    DISCOVERY_LABEL, PLAN_LABEL, PLAN_SCHEMA_ID, PLAN_TIMEOUT_S, PLAYBOOK_LABEL, REJECTION_LABEL, REPAIR_SCHEMA_ID,
    REPAIR_TIMEOUT_S, VERIFIER_LABEL,
};
pub use rule_planner::RulePlanner;
pub use rule_repairer::RuleRepairer;
pub use scripted::{ScriptedBackend, ScriptedCall};

pub const DEFAULT_STRUCTURED_RETRIES: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

/// Raw answer of one backend call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub document: String,
    pub token_usage: Option<TokenUsage>,
}

impl Completion {
    pub fn text(document: impl Into<String>) -> Self {
        Self { document: document.into(), token_usage: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompletionError {
    #[error("backend timed out")]
    Timeout,
    /// Worth another attempt (server error, garbled transport).
    #[error("transient backend error: {0}")]
    Transient(String),
    /// Misconfiguration; retrying cannot help.
    #[error("backend unavailable: {0}")]
    Fatal(String),
}

pub trait Backend: Send + Sync {
    fn name(&self) -> String;
    fn complete(&self, request: &BackendRequest) -> Result<Completion, CompletionError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Valid,
    SchemaInvalid,
    Timeout,
    TransportError,
}

/// One attempt as seen by the retry loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub document: String,
    pub parse_status: ParseStatus,
    pub token_usage: Option<TokenUsage>,
    /// Parser or transport message for non-valid attempts.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("no valid structured output after {attempts} attempts (last: {last_error})")]
    StructuredOutputExhausted { attempts: usize, last_error: String },
    #[error("transport error: {0}")]
    TransportError(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input: u64,
    pub output: u64,
    pub total: u64,
}

/// Additive token counter shared by every request of a run (or a batch).
#[derive(Debug, Default)]
pub struct TokenLedger {
    input: AtomicU64,
    output: AtomicU64,
    responses: AtomicU64,
}

impl TokenLedger {
    pub fn add(&self, usage: Option<TokenUsage>) {
        self.responses.fetch_add(1, Ordering::Relaxed);
        if let Some(u) = usage {
            self.input.fetch_add(u.input, Ordering::Relaxed);
            self.output.fetch_add(u.output, Ordering::Relaxed);
        }
    }

    pub fn totals(&self) -> TokenTotals {
        let input = self.input.load(Ordering::Relaxed);
        let output = self.output.load(Ordering::Relaxed);
        TokenTotals { input, output, total: input + output }
    }

    /// Adds another ledger's totals (batch aggregation).
    pub fn absorb(&self, totals: TokenTotals, responses: u64) {
        self.input.fetch_add(totals.input, Ordering::Relaxed);
        self.output.fetch_add(totals.output, Ordering::Relaxed);
        self.responses.fetch_add(responses, Ordering::Relaxed);
    }

    pub fn responses(&self) -> u64 {
        self.responses.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
pub struct Structured<T> {
    pub value: T,
    pub attempts: usize,
    pub responses: Vec<BackendResponse>,
}

/// Asks `backend` until `parse` accepts a response or `retry_budget`
/// attempts are spent. Invalid documents, timeouts and transient errors each
/// consume one attempt; fatal errors abort immediately.
pub fn request_structured<T>(
    backend: &dyn Backend,
    request: &BackendRequest,
    retry_budget: usize,
    ledger: &TokenLedger,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Structured<T>, BackendError> {
    let mut responses = Vec::new();
    let mut last_error = String::from("no attempts made");
    for attempt in 1..=retry_budget.max(1) {
        match backend.complete(request) {
            Ok(c) => {
                ledger.add(c.token_usage);
                match parse(&c.document) {
                    Ok(value) => {
                        responses.push(BackendResponse {
                            document: c.document,
                            parse_status: ParseStatus::Valid,
                            token_usage: c.token_usage,
                            detail: None,
                        });
                        return Ok(Structured { value, attempts: attempt, responses });
                    }
                    Err(e) => {
                        log::debug!("{}: attempt {attempt} invalid: {e}", backend.name());
                        last_error = e.clone();
                        responses.push(BackendResponse {
                            document: c.document,
                            parse_status: ParseStatus::SchemaInvalid,
                            token_usage: c.token_usage,
                            detail: Some(e),
                        });
                    }
                }
            }
            Err(CompletionError::Fatal(msg)) => return Err(BackendError::TransportError(msg)),
            Err(e) => {
                ledger.add(None);
                let status =
                    if e == CompletionError::Timeout { ParseStatus::Timeout } else { ParseStatus::TransportError };
                last_error = e.to_string();
                responses.push(BackendResponse {
                    document: String::new(),
                    parse_status: status,
                    token_usage: None,
                    detail: Some(last_error.clone()),
                });
            }
        }
    }
    Err(BackendError::StructuredOutputExhausted { attempts: retry_budget.max(1), last_error })
}

/// Planner and repairer handles used by one pipeline.
#[derive(Clone)]
pub struct Backends {
    pub planner: std::sync::Arc<dyn Backend>,
    pub repairer: std::sync::Arc<dyn Backend>,
}

impl Backends {
    pub fn rule() -> Self {
        Self { planner: std::sync::Arc::new(RulePlanner), repairer: std::sync::Arc::new(RuleRepairer) }
    }

    pub fn single(backend: std::sync::Arc<dyn Backend>) -> Self {
        Self { planner: backend.clone(), repairer: backend }
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("planner", &self.planner.name())
            .field("repairer", &self.repairer.name())
            .finish()
    }
}

/// Test double answering from a fixed queue; shared by unit tests.
#[cfg(test)]
pub(crate) struct QueueBackend(pub std::sync::Mutex<std::collections::VecDeque<Result<Completion, CompletionError>>>);

#[cfg(test)]
impl QueueBackend {
    pub fn new(items: Vec<Result<Completion, CompletionError>>) -> Self {
        Self(std::sync::Mutex::new(items.into()))
    }
}

#[cfg(test)]
impl Backend for QueueBackend {
    fn name(&self) -> String {
        "queue".into()
    }
    fn complete(&self, _: &BackendRequest) -> Result<Completion, CompletionError> {
        self.0.lock().unwrap().pop_front().unwrap_or(Err(CompletionError::Fatal("queue empty".into())))
    }
}

/// Strips a Markdown code fence some chat models wrap around JSON.
pub(crate) fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, r)| r).unwrap_or("");
        return rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    t
}
