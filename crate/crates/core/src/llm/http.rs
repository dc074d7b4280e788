use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendRequest, BackendResponse, ChatBackend, LlmError, Role};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub(crate) struct WireMessage {
    pub role: Role,
    pub text: String,
}

/// Request body: `{system, messages[{role, text}], max_gen_len, temperature, top_p}`.
/// The inquiry is the final user message.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub(crate) struct WireRequest {
    pub system: String,
    pub messages: Vec<WireMessage>,
    pub max_gen_len: usize,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub(crate) struct WireResponse {
    pub text: String,
    pub generated_tokens: usize,
}

impl WireRequest {
    pub(crate) fn from_request(request: &BackendRequest) -> Self {
        let mut messages: Vec<WireMessage> = request
            .turns
            .iter()
            .map(|t| WireMessage {
                role: t.role,
                text: t.text.clone(),
            })
            .collect();
        messages.push(WireMessage {
            role: Role::User,
            text: request.inquiry.clone(),
        });
        Self {
            system: request.system_prompt.clone(),
            messages,
            max_gen_len: request.params.max_gen_len,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
        }
    }
}

/// Single synchronous request/response exchange with a model service.
pub struct HttpBackend {
    endpoint: String,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            timeout,
            agent,
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, request: &BackendRequest) -> Result<BackendResponse, LlmError> {
        let body = WireRequest::from_request(request);
        let started = Instant::now();
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout(self.timeout.as_secs_f64()),
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
                LlmError::Timeout(self.timeout.as_secs_f64())
            }
            other => LlmError::Transport(other.to_string()),
        };
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(map_err)?;
        let wire: WireResponse = response.body_mut().read_json().map_err(map_err)?;
        let latency = started.elapsed().as_secs_f64();
        if wire.generated_tokens >= request.params.max_gen_len {
            return Err(LlmError::Truncated {
                generated: wire.generated_tokens,
                limit: request.params.max_gen_len,
            });
        }
        if wire.text.trim().is_empty() {
            return Err(LlmError::EmptyResponse);
        }
        Ok(BackendResponse {
            text: wire.text,
            generated_tokens: wire.generated_tokens,
            latency,
        })
    }

    fn is_live(&self) -> bool {
        true
    }
}
