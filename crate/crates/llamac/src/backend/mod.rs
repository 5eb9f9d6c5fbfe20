//! The model gateway.
//!
//! Three interchangeable backends sit behind one trait: a live HTTP client
//! speaking the OpenAI-compatible chat-completion protocol, a deterministic
//! scripted oracle for tests and offline runs, and a replay backend that
//! re-serves recorded transcripts. The gateway in front of them enforces the
//! context limit, estimates token usage where the backend reports none, and
//! appends every exchange to the episode transcript.

pub mod fault;
pub mod grammar;
pub mod http;
pub mod replay;
pub mod scripted;
pub mod template;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::actor::ConfirmationCheck;
use crate::core::{AgentId, EnvState, JointAction};
use crate::critic::CriticPreference;
use crate::transcript::{LoopEvent, LoopEventKind, TranscriptLog, TranscriptRecord};

/// Which framework role issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoleTag {
    CriticExplore,
    CriticExploit,
    Assessor,
    Actor(usize),
    Debater(usize),
}

impl RoleTag {
    /// Aggregation key for token reporting: per-agent indices collapse.
    pub fn kind_str(&self) -> &'static str {
        match self {
            RoleTag::CriticExplore => "critic_explore",
            RoleTag::CriticExploit => "critic_exploit",
            RoleTag::Assessor => "assessor",
            RoleTag::Actor(_) => "actor",
            RoleTag::Debater(_) => "debater",
        }
    }

    pub fn label(&self) -> String {
        match self {
            RoleTag::Actor(i) => format!("actor_{i}"),
            RoleTag::Debater(i) => format!("debater_{i}"),
            other => other.kind_str().to_string(),
        }
    }

    pub fn parse_label(s: &str) -> Option<RoleTag> {
        match s {
            "critic_explore" => Some(RoleTag::CriticExplore),
            "critic_exploit" => Some(RoleTag::CriticExploit),
            "assessor" => Some(RoleTag::Assessor),
            _ => {
                if let Some(i) = s.strip_prefix("actor_") {
                    return i.parse().ok().map(RoleTag::Actor);
                }
                if let Some(i) = s.strip_prefix("debater_") {
                    return i.parse().ok().map(RoleTag::Debater);
                }
                None
            }
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for RoleTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for RoleTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RoleTag::parse_label(&s).ok_or_else(|| D::Error::custom(format!("unknown role tag {s}")))
    }
}

/// Token accounting for a single exchange. Scripted-backend counts are
/// whitespace-piece estimates; live counts come from the provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
            total_tokens: prompt_tokens + completion_tokens,
        }
    }

    pub fn add(&mut self, other: &TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.total_tokens += other.total_tokens;
    }
}

/// One prompt message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub speaker: String,
    pub text: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            speaker: "system".into(),
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: "user".into(),
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            speaker: "assistant".into(),
            text: text.into(),
        }
    }
}

/// One completed model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role_tag: RoleTag,
    pub prompt_messages: Vec<ChatMessage>,
    pub response_text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
    pub backend_id: String,
}

/// Sampling parameters for a call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

/// Per-role defaults: the proposers sample warmer than the assessor, actors
/// sit in between.
pub fn role_params(role: &RoleTag) -> SamplingParams {
    let temperature = match role {
        RoleTag::CriticExplore | RoleTag::CriticExploit | RoleTag::Debater(_) => 0.7,
        RoleTag::Assessor => 0.2,
        RoleTag::Actor(_) => 0.3,
    };
    SamplingParams {
        temperature,
        max_tokens: 1024,
        seed: None,
    }
}

/// Whitespace-piece token estimate. Deliberately crude but deterministic;
/// used for the context-limit gate and for scripted-backend accounting.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub fn estimate_messages(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| estimate_tokens(&m.text)).sum()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("prompt estimate of {estimate} tokens exceeds the context limit of {limit}")]
    ContextLengthExceeded { estimate: u64, limit: u64 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("replay transcript exhausted at call {call_index}")]
    ReplayExhausted { call_index: u64 },
    #[error("replay mismatch at call {call_index}: recorded {recorded}, requested {requested}")]
    ReplayRoleMismatch {
        call_index: u64,
        recorded: String,
        requested: String,
    },
    #[error("backend configuration error: {0}")]
    Config(String),
}

/// Structured inputs mirrored alongside the rendered prompt. The scripted
/// oracle decides from these; live and replay backends ignore them.
#[derive(Debug, Clone)]
pub struct OracleRequest {
    pub state: EnvState,
    pub phase: OraclePhase,
}

#[derive(Debug, Clone)]
pub enum OraclePhase {
    /// A preference-biased critic proposes a joint action.
    Propose { preference: CriticPreference },
    /// The assessor reconciles two proposals into per-agent suggestions.
    AssessorBlend {
        explore: Option<JointAction>,
        exploit: Option<JointAction>,
    },
    /// The assessor turns scrutiny issues into corrective feedback.
    AssessorFeedback { issues: Vec<String> },
    /// The assessor revises suggestions for the named dissenting agents.
    AssessorRevise { dissenters: Vec<AgentId> },
    /// A dissenting actor explains why its suggestion is unsuitable.
    ActorFeedback {
        agent: AgentId,
        suggestion: String,
        failed_checks: Vec<ConfirmationCheck>,
    },
    /// One debate turn.
    Debater { index: usize, round: u64 },
    /// Final debate synthesis.
    DebateFinal,
    /// An independent per-agent decision from its own observation.
    Decentralized { agent: AgentId },
}

/// A backend's raw reply. `usage: None` means the gateway should estimate.
#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
    pub latency_ms: u64,
}

/// A single model call as the backend sees it.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub role: RoleTag,
    pub messages: Vec<ChatMessage>,
    pub params: SamplingParams,
    pub oracle: OracleRequest,
}

pub trait ChatBackend {
    fn id(&self) -> String;
    fn complete_raw(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError>;
}

/// Front door for every model call: context gate, token accounting, and
/// transcript logging in one place.
pub struct LlmGateway {
    backend: Box<dyn ChatBackend>,
    context_limit: u64,
    log: Rc<RefCell<TranscriptLog>>,
}

impl LlmGateway {
    pub fn new(backend: Box<dyn ChatBackend>, context_limit: u64, log: Rc<RefCell<TranscriptLog>>) -> Self {
        Self {
            backend,
            context_limit,
            log,
        }
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Issue one model call and append the exchange to the transcript.
    pub fn complete(
        &self,
        role: RoleTag,
        messages: Vec<ChatMessage>,
        oracle: OracleRequest,
    ) -> Result<ChatExchange, BackendError> {
        let estimate = estimate_messages(&messages);
        if estimate >= self.context_limit {
            return Err(BackendError::ContextLengthExceeded {
                estimate,
                limit: self.context_limit,
            });
        }
        let request = CompletionRequest {
            role,
            params: role_params(&role),
            messages,
            oracle,
        };
        let response = self.backend.complete_raw(&request)?;
        let usage = response
            .usage
            .unwrap_or_else(|| TokenUsage::new(estimate, estimate_tokens(&response.text)));
        let exchange = ChatExchange {
            role_tag: request.role,
            prompt_messages: request.messages,
            response_text: response.text,
            usage,
            latency_ms: response.latency_ms,
            backend_id: self.backend.id(),
        };
        self.log
            .borrow_mut()
            .push(TranscriptRecord::Exchange(exchange.clone()));
        Ok(exchange)
    }

    pub fn log_event(&self, kind: LoopEventKind, step: u64, iteration: u64, detail: impl Into<String>) {
        self.log
            .borrow_mut()
            .push(TranscriptRecord::LoopEvent(LoopEvent {
                kind,
                step,
                iteration,
                detail: detail.into(),
            }));
    }

    /// Append any transcript record in call order (the episode driver logs
    /// transitions through the same serializer as the exchanges).
    pub fn log_record(&self, record: TranscriptRecord) {
        self.log.borrow_mut().push(record);
    }

    /// Exchanges issued so far (for call-count assertions).
    pub fn call_count(&self) -> u64 {
        self.log.borrow().exchanges().count() as u64
    }

    pub fn usage_by_role(&self) -> BTreeMap<String, TokenUsage> {
        self.log.borrow().usage_by_role()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_labels_round_trip() {
        for role in [
            RoleTag::CriticExplore,
            RoleTag::CriticExploit,
            RoleTag::Assessor,
            RoleTag::Actor(7),
            RoleTag::Debater(1),
        ] {
            assert_eq!(RoleTag::parse_label(&role.label()), Some(role));
        }
        assert_eq!(RoleTag::parse_label("oracle"), None);
    }

    #[test]
    fn usage_totals() {
        let mut u = TokenUsage::new(10, 5);
        assert_eq!(u.total_tokens, 15);
        u.add(&TokenUsage::new(1, 2));
        assert_eq!(u.total_tokens, 18);
        assert_eq!(u.prompt_tokens, 11);
    }

    #[test]
    fn estimator_counts_pieces() {
        assert_eq!(estimate_tokens("one two  three\nfour"), 4);
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn actor_roles_collapse_for_reporting() {
        assert_eq!(RoleTag::Actor(3).kind_str(), "actor");
        assert_eq!(RoleTag::Actor(9).label(), "actor_9");
    }
}
