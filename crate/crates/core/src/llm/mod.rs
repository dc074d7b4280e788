//! Chat-model access: generation parameters, token-budgeted dialog memory,
//! the backend trait, and a per-episode [`Session`] that records every call.

mod http;
mod memory;
mod scripted;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use memory::{
    compute_token_budget, estimate_tokens, CharQuarterEstimator, ChatTurn, DialogMemory, Role,
    TokenEstimator,
};
pub use scripted::{MatchRule, Script, ScriptEntry, ScriptedBackend};

/// Environment variable naming the live backend endpoint. When unset the
/// scripted backend is used.
pub const ENDPOINT_ENV: &str = "BRINGME_LLM_ENDPOINT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend timed out after {0:.1}s")]
    Timeout(f64),
    #[error("response truncated at {generated} generated tokens (limit {limit})")]
    Truncated { generated: usize, limit: usize },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("no scripted response for label {label:?} object {object:?}")]
    Unscripted {
        label: String,
        object: Option<String>,
    },
    #[error("turn of {tokens} tokens exceeds the memory budget of {budget}")]
    OversizedTurn { tokens: usize, budget: usize },
    #[error("no history budget left: max_seq_len={max_seq_len}, sys_token={sys_token}")]
    NonPositiveBudget {
        max_seq_len: usize,
        sys_token: usize,
    },
    #[error("inquiry must not be empty")]
    EmptyInquiry,
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid script: {0}")]
    Script(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_seq_len: usize,
    pub max_gen_len: usize,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for GenerationParams {
    /// Llama-2 chat settings used for the household experiments.
    fn default() -> Self {
        Self {
            max_seq_len: 4096,
            max_gen_len: 2048,
            temperature: 0.6,
            top_p: 0.9,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_seq_len == 0 || self.max_gen_len == 0 {
            return Err(LlmError::InvalidParams(
                "token limits must be positive".into(),
            ));
        }
        if self.max_gen_len > self.max_seq_len {
            return Err(LlmError::InvalidParams(
                "max_gen_len exceeds max_seq_len".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature <= 2.0) {
            return Err(LlmError::InvalidParams("temperature outside (0, 2]".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidParams("top_p outside (0, 1]".into()));
        }
        Ok(())
    }
}

/// Routing metadata attached to a request. The live backend ignores it; the
/// scripted backend matches on it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InquiryTag {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
}

impl InquiryTag {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    pub fn object(mut self, object: impl Into<String>) -> Self {
        self.object = Some(object.into());
        self
    }

    pub fn room(mut self, room: impl Into<String>) -> Self {
        self.room = Some(room.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub system_prompt: String,
    pub turns: Vec<ChatTurn>,
    pub inquiry: String,
    pub params: GenerationParams,
    pub tag: Option<InquiryTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub generated_tokens: usize,
    /// Wall-clock (live) or configured synthetic (scripted) latency, seconds.
    pub latency: f64,
}

pub trait ChatBackend: Send {
    fn complete(&mut self, request: &BackendRequest) -> Result<BackendResponse, LlmError>;

    /// Whether latencies come from a real model rather than a script.
    fn is_live(&self) -> bool {
        false
    }
}

/// Sends one inquiry. When `memory` is enabled the history rides along and
/// the exchange is recorded afterwards.
pub fn generate(
    backend: &mut dyn ChatBackend,
    system_prompt: &str,
    memory: &mut DialogMemory,
    inquiry: &str,
    params: &GenerationParams,
    tag: Option<InquiryTag>,
    estimator: &dyn TokenEstimator,
) -> Result<BackendResponse, LlmError> {
    if inquiry.trim().is_empty() {
        return Err(LlmError::EmptyInquiry);
    }
    let turns = if memory.enabled() {
        memory.turns().cloned().collect()
    } else {
        Vec::new()
    };
    let request = BackendRequest {
        system_prompt: system_prompt.to_string(),
        turns,
        inquiry: inquiry.to_string(),
        params: *params,
        tag,
    };
    let response = backend.complete(&request)?;
    if response.text.trim().is_empty() {
        return Err(LlmError::EmptyResponse);
    }
    if memory.enabled() {
        for turn in [
            ChatTurn::new(Role::User, inquiry, estimator),
            ChatTurn::new(Role::Assistant, response.text.clone(), estimator),
        ] {
            if let Err(e) = memory.append_and_trim(turn) {
                // a turn larger than the whole budget can never be replayed
                log::warn!("not recording turn in dialog memory: {e}");
            }
        }
    }
    Ok(response)
}

/// One backend call as seen by the episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub tag: Option<InquiryTag>,
    pub inquiry: String,
    pub history_turns: usize,
    pub response: Option<String>,
    pub error: Option<String>,
    pub generated_tokens: usize,
    pub latency: f64,
}

/// A backend handle plus the memory, parameters and call log of one episode.
pub struct Session {
    backend: Box<dyn ChatBackend>,
    system_prompt: String,
    memory: DialogMemory,
    params: GenerationParams,
    estimator: Box<dyn TokenEstimator>,
    calls: Vec<CallRecord>,
}

impl Session {
    /// Builds a session whose memory budget is derived from the measured size
    /// of `system_prompt`.
    pub fn new(
        backend: Box<dyn ChatBackend>,
        system_prompt: impl Into<String>,
        params: GenerationParams,
        use_memory: bool,
    ) -> Result<Self, LlmError> {
        Self::with_estimator(
            backend,
            system_prompt,
            params,
            use_memory,
            Box::new(CharQuarterEstimator),
        )
    }

    pub fn with_estimator(
        backend: Box<dyn ChatBackend>,
        system_prompt: impl Into<String>,
        params: GenerationParams,
        use_memory: bool,
        estimator: Box<dyn TokenEstimator>,
    ) -> Result<Self, LlmError> {
        params.validate()?;
        let system_prompt = system_prompt.into();
        let sys_token = estimator.estimate(&system_prompt);
        let memory = if use_memory {
            DialogMemory::new(compute_token_budget(params.max_seq_len, sys_token)?, true)
        } else {
            DialogMemory::disabled()
        };
        Ok(Self {
            backend,
            system_prompt,
            memory,
            params,
            estimator,
            calls: Vec::new(),
        })
    }

    pub fn ask(&mut self, inquiry: &str, tag: InquiryTag) -> Result<BackendResponse, LlmError> {
        let history_turns = if self.memory.enabled() {
            self.memory.len()
        } else {
            0
        };
        let result = generate(
            self.backend.as_mut(),
            &self.system_prompt,
            &mut self.memory,
            inquiry,
            &self.params,
            Some(tag.clone()),
            self.estimator.as_ref(),
        );
        let record = match &result {
            Ok(r) => CallRecord {
                tag: Some(tag),
                inquiry: inquiry.to_string(),
                history_turns,
                response: Some(r.text.clone()),
                error: None,
                generated_tokens: r.generated_tokens,
                latency: r.latency,
            },
            Err(e) => CallRecord {
                tag: Some(tag),
                inquiry: inquiry.to_string(),
                history_turns,
                response: None,
                error: Some(e.to_string()),
                generated_tokens: 0,
                latency: 0.0,
            },
        };
        self.calls.push(record);
        result
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn memory(&self) -> &DialogMemory {
        &self.memory
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    pub fn is_live(&self) -> bool {
        self.backend.is_live()
    }

    pub fn generated_tokens(&self) -> usize {
        self.calls.iter().map(|c| c.generated_tokens).sum()
    }

    pub fn total_latency(&self) -> f64 {
        self.calls.iter().map(|c| c.latency).sum()
    }
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("memory", &self.memory)
            .field("params", &self.params)
            .field("calls", &self.calls.len())
            .finish()
    }
}

/// Picks the backend for new sessions.
#[derive(Debug, Clone)]
pub enum BackendSelector {
    Scripted(Arc<Script>),
    Http { endpoint: String, timeout: Duration },
}

impl BackendSelector {
    /// Live backend when [`ENDPOINT_ENV`] is set, otherwise `script`.
    pub fn from_env(script: Arc<Script>) -> Self {
        match std::env::var(ENDPOINT_ENV) {
            Ok(endpoint) if !endpoint.trim().is_empty() => Self::Http {
                endpoint,
                timeout: Duration::from_secs(120),
            },
            _ => Self::Scripted(script),
        }
    }

    pub fn create(&self) -> Box<dyn ChatBackend> {
        match self {
            Self::Scripted(script) => Box::new(ScriptedBackend::new(Arc::clone(script))),
            Self::Http { endpoint, timeout } => Box::new(HttpBackend::new(endpoint, *timeout)),
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(self, Self::Http { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Echoes the number of history turns it received.
    struct CountingBackend {
        seen: Vec<usize>,
    }

    impl ChatBackend for CountingBackend {
        fn complete(&mut self, request: &BackendRequest) -> Result<BackendResponse, LlmError> {
            self.seen.push(request.turns.len());
            Ok(BackendResponse {
                text: format!("reply to {}", request.inquiry),
                generated_tokens: 3,
                latency: 0.0,
            })
        }
    }

    #[test]
    fn params_validation() {
        assert!(GenerationParams::default().validate().is_ok());
        let bad = GenerationParams {
            max_gen_len: 5000,
            ..GenerationParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = GenerationParams {
            top_p: 0.0,
            ..GenerationParams::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn memory_disabled_sends_no_history() {
        let mut backend = CountingBackend { seen: vec![] };
        let mut memory = DialogMemory::disabled();
        let params = GenerationParams::default();
        for q in ["one", "two", "three"] {
            generate(
                &mut backend,
                "sys",
                &mut memory,
                q,
                &params,
                None,
                &CharQuarterEstimator,
            )
            .unwrap();
        }
        assert_eq!(backend.seen, [0, 0, 0]);
        assert!(memory.is_empty());
    }

    #[test]
    fn memory_enabled_carries_prior_turns() {
        let mut backend = CountingBackend { seen: vec![] };
        let mut memory = DialogMemory::new(1000, true);
        let params = GenerationParams::default();
        for q in ["one", "two"] {
            generate(
                &mut backend,
                "sys",
                &mut memory,
                q,
                &params,
                None,
                &CharQuarterEstimator,
            )
            .unwrap();
        }
        // second request carries the first inquiry and its reply
        assert_eq!(backend.seen, [0, 2]);
        assert_eq!(memory.len(), 4);
    }

    #[test]
    fn empty_inquiry_is_rejected() {
        let mut backend = CountingBackend { seen: vec![] };
        let mut memory = DialogMemory::disabled();
        let err = generate(
            &mut backend,
            "sys",
            &mut memory,
            "  ",
            &GenerationParams::default(),
            None,
            &CharQuarterEstimator,
        )
        .unwrap_err();
        assert_eq!(err, LlmError::EmptyInquiry);
        assert!(backend.seen.is_empty());
    }

    #[test]
    fn session_budget_comes_from_system_prompt() {
        // 1792 chars -> 448 tokens -> budget 1280
        let prompt = "x".repeat(1792);
        let s = Session::new(
            Box::new(CountingBackend { seen: vec![] }),
            prompt,
            GenerationParams::default(),
            true,
        )
        .unwrap();
        assert_eq!(s.memory().budget(), 1280);
        assert!(s.memory().enabled());
    }

    #[test]
    fn session_records_calls() {
        let mut s = Session::new(
            Box::new(CountingBackend { seen: vec![] }),
            "sys",
            GenerationParams::default(),
            true,
        )
        .unwrap();
        s.ask(
            "where is the mug?",
            InquiryTag::new("general_pos").object("mug"),
        )
        .unwrap();
        s.ask("again", InquiryTag::new("again")).unwrap();
        assert_eq!(s.calls().len(), 2);
        assert_eq!(s.calls()[1].history_turns, 2);
        assert_eq!(s.generated_tokens(), 6);
    }
}
