use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, BackendRequest, BackendResponse, ChatBackend, InquiryTag, LlmError};
use crate::kb::normalize_name;

/// Which requests an entry answers. Absent fields are wildcards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRule {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
}

impl MatchRule {
    fn matches(&self, tag: &InquiryTag) -> bool {
        fn field_ok(rule: &Option<String>, actual: &Option<String>) -> bool {
            match (rule, actual) {
                (None, _) => true,
                (Some(r), Some(a)) => normalize_name(r) == normalize_name(a),
                (Some(_), None) => false,
            }
        }
        self.label == tag.label
            && field_ok(&self.object, &tag.object)
            && field_ok(&self.room, &tag.room)
    }

    fn specificity(&self) -> usize {
        usize::from(self.object.is_some()) + usize::from(self.room.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub rule: MatchRule,
    pub response: String,
}

/// Canned responses keyed by inquiry label, object and room.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    /// Synthetic latency reported for every response, seconds.
    #[serde(default)]
    pub latency_seconds: f64,
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    /// Accepts either `{"latency_seconds": .., "entries": [..]}` or a bare
    /// array of entries.
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Full(Script),
            Bare(Vec<ScriptEntry>),
        }
        let script = match serde_json::from_str::<Doc>(text) {
            Ok(Doc::Full(s)) => s,
            Ok(Doc::Bare(entries)) => Script {
                latency_seconds: 0.0,
                entries,
            },
            Err(e) => return Err(LlmError::Script(e.to_string())),
        };
        if !(script.latency_seconds >= 0.0 && script.latency_seconds.is_finite()) {
            return Err(LlmError::Script("latency_seconds must be >= 0".into()));
        }
        if let Some(e) = script.entries.iter().find(|e| e.response.trim().is_empty()) {
            return Err(LlmError::Script(format!(
                "empty response for label {:?}",
                e.rule.label
            )));
        }
        Ok(script)
    }

    pub fn push(&mut self, rule: MatchRule, response: impl Into<String>) -> &mut Self {
        self.entries.push(ScriptEntry {
            rule,
            response: response.into(),
        });
        self
    }

    /// The most specific matching entry; earlier entries win ties.
    pub fn lookup(&self, tag: &InquiryTag) -> Option<&ScriptEntry> {
        let mut best: Option<&ScriptEntry> = None;
        for entry in self.entries.iter().filter(|e| e.rule.matches(tag)) {
            match best {
                Some(b) if b.rule.specificity() >= entry.rule.specificity() => {}
                _ => best = Some(entry),
            }
        }
        best
    }
}

/// Deterministic backend answering from a [`Script`].
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Arc<Script>,
}

impl ScriptedBackend {
    pub fn new(script: Arc<Script>) -> Self {
        Self { script }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, request: &BackendRequest) -> Result<BackendResponse, LlmError> {
        let unscripted = || LlmError::Unscripted {
            label: request
                .tag
                .as_ref()
                .map(|t| t.label.clone())
                .unwrap_or_default(),
            object: request.tag.as_ref().and_then(|t| t.object.clone()),
        };
        let tag = request.tag.as_ref().ok_or_else(unscripted)?;
        let entry = self.script.lookup(tag).ok_or_else(unscripted)?;
        Ok(BackendResponse {
            text: entry.response.clone(),
            generated_tokens: estimate_tokens(&entry.response),
            latency: self.script.latency_seconds,
        })
    }
}
