use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::LlmError;

/// Token counting strategy. Backends with a real tokenizer can plug in their own.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// Default estimator: one token per four characters, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharQuarterEstimator;

impl TokenEstimator for CharQuarterEstimator {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    CharQuarterEstimator.estimate(text)
}

/// History budget left for dialog memory once the system prompt is accounted
/// for: `floor((max_seq_len / 2 - sys_token) * 0.8)`.
///
/// Evaluated in integers as `(max_seq_len - 2 * sys_token) * 2 / 5`, which is
/// the same quantity without floating-point rounding.
pub fn compute_token_budget(max_seq_len: usize, sys_token: usize) -> Result<usize, LlmError> {
    let doubled_sys = sys_token.saturating_mul(2);
    if max_seq_len == 0 || doubled_sys >= max_seq_len {
        return Err(LlmError::NonPositiveBudget {
            max_seq_len,
            sys_token,
        });
    }
    let budget = (max_seq_len - doubled_sys) * 2 / 5;
    if budget == 0 {
        return Err(LlmError::NonPositiveBudget {
            max_seq_len,
            sys_token,
        });
    }
    Ok(budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    pub token_count: usize,
}

impl ChatTurn {
    pub fn new(role: Role, text: impl Into<String>, estimator: &dyn TokenEstimator) -> Self {
        let text = text.into();
        let token_count = estimator.estimate(&text);
        Self {
            role,
            text,
            token_count,
        }
    }
}

/// Chronological chat history held under a token budget. Whole turns are
/// evicted oldest-first; the system prompt never lives here.
#[derive(Debug, Clone)]
pub struct DialogMemory {
    turns: VecDeque<ChatTurn>,
    budget: usize,
    enabled: bool,
    used: usize,
}

impl DialogMemory {
    pub fn new(budget: usize, enabled: bool) -> Self {
        Self {
            turns: VecDeque::new(),
            budget,
            enabled,
            used: 0,
        }
    }

    pub fn disabled() -> Self {
        Self::new(0, false)
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn used_tokens(&self) -> usize {
        self.used
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn turns(&self) -> impl Iterator<Item = &ChatTurn> {
        self.turns.iter()
    }

    /// Appends `turn`, then evicts from the front until the total fits.
    /// Returns the evicted turns, oldest first.
    pub fn append_and_trim(&mut self, turn: ChatTurn) -> Result<Vec<ChatTurn>, LlmError> {
        if turn.token_count > self.budget {
            return Err(LlmError::OversizedTurn {
                tokens: turn.token_count,
                budget: self.budget,
            });
        }
        self.used += turn.token_count;
        self.turns.push_back(turn);
        let mut evicted = Vec::new();
        while self.used > self.budget {
            let oldest = self
                .turns
                .pop_front()
                .expect("over budget implies non-empty");
            self.used -= oldest.token_count;
            evicted.push(oldest);
        }
        Ok(evicted)
    }

    pub fn clear(&mut self) {
        self.turns.clear();
        self.used = 0;
    }
}
