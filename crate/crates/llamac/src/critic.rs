//! The three-role centralized critic.
//!
//! Two preference-biased proposers draft joint actions; an assessor checks
//! them (grammar and joint-action conflicts are verified programmatically
//! before any model judgment) and reconciles them into one suggestion per
//! agent. Failed checks turn into corrective feedback and another proposal
//! round, bounded by the internal iteration limit. Each iteration costs
//! exactly three model calls: two proposers plus one assessor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::FeedbackNote;
use crate::backend::grammar::{parse_structured, GrammarError, ParsedValue, Schema};
use crate::backend::template::{TemplateSet, EXPLORE_CLAUSE, EXPLOIT_CLAUSE};
use crate::backend::{
    BackendError, ChatExchange, ChatMessage, LlmGateway, OraclePhase, OracleRequest, RoleTag,
};
use crate::core::{
    ActionTerm, AgentAction, AgentId, EnvKind, EnvState, Environment, JointAction,
};
use crate::env_grid::{detect_conflicts, Conflict};
use crate::memory::DecisionMemory;
use crate::transcript::LoopEventKind;

/// The two proposer biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticPreference {
    Explore,
    Exploit,
}

impl CriticPreference {
    pub fn clause(&self) -> &'static str {
        match self {
            CriticPreference::Explore => EXPLORE_CLAUSE,
            CriticPreference::Exploit => EXPLOIT_CLAUSE,
        }
    }

    pub fn role(&self) -> RoleTag {
        match self {
            CriticPreference::Explore => RoleTag::CriticExplore,
            CriticPreference::Exploit => RoleTag::CriticExploit,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CriticPreference::Explore => "explore",
            CriticPreference::Exploit => "exploit",
        }
    }
}

/// One proposer's output: either a parsed joint action or the grammar error
/// that scrutiny will report.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub preference: CriticPreference,
    pub outcome: ProposalOutcome,
}

#[derive(Debug, Clone)]
pub enum ProposalOutcome {
    Joint { joint: JointAction, rationale: String },
    Invalid { error: GrammarError },
}

impl Proposal {
    pub fn joint(&self) -> Option<&JointAction> {
        match &self.outcome {
            ProposalOutcome::Joint { joint, .. } => Some(joint),
            ProposalOutcome::Invalid { .. } => None,
        }
    }

    fn render(&self) -> String {
        match &self.outcome {
            ProposalOutcome::Joint { joint, rationale } => format!(
                "{} proposal: {} (rationale: {rationale})",
                self.preference.name(),
                joint.render_text()
            ),
            ProposalOutcome::Invalid { error } => format!(
                "{} proposal: unparseable ({})",
                self.preference.name(),
                error.reason
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScrutinyIssue {
    Grammar {
        preference: CriticPreference,
        detail: String,
    },
    Conflict {
        preference: CriticPreference,
        conflict: Conflict,
    },
}

impl std::fmt::Display for ScrutinyIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScrutinyIssue::Grammar { preference, detail } => {
                write!(f, "{} proposal failed grammar: {detail}", preference.name())
            }
            ScrutinyIssue::Conflict { preference, conflict } => {
                write!(f, "{} proposal conflicts: {}", preference.name(), conflict.detail)
            }
        }
    }
}

/// Outcome of the programmatic part of veracity scrutiny.
#[derive(Debug, Clone, PartialEq)]
pub struct ScrutinyVerdict {
    pub pass: bool,
    pub issues: Vec<ScrutinyIssue>,
}

/// Final per-agent suggestion delivered to the actors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub agent: AgentId,
    pub action: ActionTerm,
    pub rationale: String,
}

impl Suggestion {
    pub fn to_agent_action(&self) -> AgentAction {
        AgentAction {
            agent: self.agent,
            action: self.action.clone(),
        }
    }
}

/// Loop state of one internal feedback run.
#[derive(Debug, Clone, Default)]
pub struct InternalFeedbackState {
    pub iteration: u64,
    pub limit: u64,
    pub feedback: Option<String>,
    pub dialogue: Vec<ChatExchange>,
}

/// What the internal loop hands to the external phase.
#[derive(Debug, Clone)]
pub struct InternalLoopOutput {
    pub suggestions: BTreeMap<AgentId, Suggestion>,
    pub iterations: u64,
    /// Failed iterations, i.e. how many times corrective feedback was issued.
    pub feedback_events: u64,
    /// True when the loop exhausted and fell back to the last proposal that
    /// passed the programmatic checks.
    pub fallback_used: bool,
    pub dialogue: Vec<ChatExchange>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriticError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{role} response failed the grammar after {attempts} attempts: {last}")]
    GrammarLimit {
        role: String,
        attempts: u64,
        last: GrammarError,
    },
    #[error("internal feedback exhausted after {iterations} iterations")]
    InternalFeedbackExhausted { iterations: u64 },
    #[error("revision requires at least one feedback note")]
    EmptyFeedback,
}

/// Result of one assessor reconciliation call.
#[derive(Debug, Clone)]
pub enum BlendOutcome {
    Suggestions(BTreeMap<AgentId, Suggestion>),
    Rejected { feedback: String },
}

pub struct TripletCritic<'a> {
    gateway: &'a LlmGateway,
    env: &'a dyn Environment,
    templates: TemplateSet,
    if_limit: u64,
    grammar_retry_limit: u64,
}

impl<'a> TripletCritic<'a> {
    pub fn new(
        gateway: &'a LlmGateway,
        env: &'a dyn Environment,
        if_limit: u64,
        grammar_retry_limit: u64,
    ) -> Self {
        Self {
            gateway,
            env,
            templates: TemplateSet::builtin(),
            if_limit,
            grammar_retry_limit,
        }
    }

    fn agents(&self) -> Vec<AgentId> {
        (0..self.env.agent_count()).map(AgentId).collect()
    }

    fn render_memory(&self, memory: &DecisionMemory) -> String {
        let rendered = match self.env.kind() {
            EnvKind::Gs => memory.render_gs(),
            EnvKind::GridEasy | EnvKind::GridHard => memory.render_grid(),
        };
        rendered.unwrap_or_else(|e| format!("(memory unavailable: {e})"))
    }

    /// One preference-biased proposal. A response that fails the grammar is
    /// not retried here; it becomes a grammar issue for scrutiny.
    pub fn propose(
        &self,
        preference: CriticPreference,
        state: &EnvState,
        memory: &DecisionMemory,
        feedback: Option<&str>,
    ) -> Result<Proposal, CriticError> {
        let feedback_section = match feedback {
            Some(f) => format!("Corrective feedback on the previous attempt:\n{f}\n"),
            None => String::new(),
        };
        let bindings = BTreeMap::from([
            ("agents", self.env.agent_count().to_string()),
            ("preference_clause", preference.clause().to_string()),
            ("state", state.text.clone()),
            ("memory", self.render_memory(memory)),
            ("feedback_section", feedback_section),
            ("action_grammar", self.env.action_grammar_help()),
        ]);
        let prompt = self
            .templates
            .critic_propose
            .instantiate(&bindings)
            .expect("proposer bindings cover the template");
        let exchange = self.gateway.complete(
            preference.role(),
            vec![ChatMessage::user(prompt)],
            OracleRequest {
                state: state.clone(),
                phase: OraclePhase::Propose { preference },
            },
        )?;
        let schema = Schema::ActionMap {
            env: self.env.kind(),
            agents: self.agents(),
        };
        let outcome = match parse_structured(&exchange.response_text, &schema) {
            Ok(ParsedValue::ActionMap(map)) => ProposalOutcome::Joint {
                joint: JointAction::from_actions(
                    map.into_iter()
                        .map(|(agent, action)| AgentAction { agent, action }),
                ),
                rationale: extract_thoughts(&exchange.response_text),
            },
            Ok(_) => unreachable!("action-map schema yields action maps"),
            Err(error) => ProposalOutcome::Invalid { error },
        };
        Ok(Proposal {
            preference,
            outcome,
        })
    }

    /// Programmatic veracity scrutiny: grammar validity and, for the grid
    /// environments, joint-action conflicts. Runs before and independent of
    /// any model judgment, so a conflicting proposal fails no matter what the
    /// assessor later says.
    pub fn veracity_scrutiny(state: &EnvState, proposals: &[Proposal; 2]) -> ScrutinyVerdict {
        let mut issues = Vec::new();
        for p in proposals {
            match &p.outcome {
                ProposalOutcome::Invalid { error } => issues.push(ScrutinyIssue::Grammar {
                    preference: p.preference,
                    detail: error.reason.clone(),
                }),
                ProposalOutcome::Joint { joint, .. } => {
                    if state.kind() != EnvKind::Gs {
                        for conflict in detect_conflicts(joint) {
                            issues.push(ScrutinyIssue::Conflict {
                                preference: p.preference,
                                conflict,
                            });
                        }
                    }
                }
            }
        }
        ScrutinyVerdict {
            pass: issues.is_empty(),
            issues,
        }
    }

    /// The assessor call of a passing iteration: semantic scrutiny plus
    /// belief correction in one exchange. Grammar failures are re-asked a
    /// bounded number of times before the episode fails.
    pub fn belief_correction(
        &self,
        state: &EnvState,
        memory: &DecisionMemory,
        proposals: &[Proposal; 2],
    ) -> Result<(BlendOutcome, ChatExchange), CriticError> {
        let bindings = BTreeMap::from([
            ("state", state.text.clone()),
            ("memory", self.render_memory(memory)),
            (
                "proposals",
                proposals.iter().map(Proposal::render).collect::<Vec<_>>().join("\n"),
            ),
            ("action_grammar", self.env.action_grammar_help()),
        ]);
        let prompt = self
            .templates
            .assessor_blend
            .instantiate(&bindings)
            .expect("assessor bindings cover the template");
        let oracle = OracleRequest {
            state: state.clone(),
            phase: OraclePhase::AssessorBlend {
                explore: proposals[0].joint().cloned(),
                exploit: proposals[1].joint().cloned(),
            },
        };
        let mut messages = vec![ChatMessage::user(prompt)];
        let mut last_error = GrammarError::new("no attempt made");
        for attempt in 0..=self.grammar_retry_limit {
            let exchange =
                self.gateway
                    .complete(RoleTag::Assessor, messages.clone(), oracle.clone())?;
            let verdict = match parse_structured(&exchange.response_text, &Schema::Verdict) {
                Ok(ParsedValue::Verdict { pass, issues }) => (pass, issues),
                Ok(_) => unreachable!("verdict schema yields verdicts"),
                Err(e) => {
                    last_error = e;
                    self.retry_messages(&mut messages, &exchange, &last_error, state.step_index, attempt);
                    continue;
                }
            };
            if !verdict.0 {
                let feedback = if verdict.1.is_empty() {
                    exchange.response_text.clone()
                } else {
                    verdict.1.join("; ")
                };
                return Ok((BlendOutcome::Rejected { feedback }, exchange));
            }
            let schema = Schema::SuggestionMap {
                env: self.env.kind(),
                agents: self.agents(),
            };
            match parse_structured(&exchange.response_text, &schema) {
                Ok(ParsedValue::SuggestionMap(map)) => {
                    let suggestions = map
                        .into_iter()
                        .map(|(agent, (action, rationale))| {
                            (
                                agent,
                                Suggestion {
                                    agent,
                                    action,
                                    rationale,
                                },
                            )
                        })
                        .collect();
                    return Ok((BlendOutcome::Suggestions(suggestions), exchange));
                }
                Ok(_) => unreachable!("suggestion-map schema yields suggestion maps"),
                Err(e) => {
                    last_error = e;
                    self.retry_messages(&mut messages, &exchange, &last_error, state.step_index, attempt);
                }
            }
        }
        Err(CriticError::GrammarLimit {
            role: "assessor".into(),
            attempts: self.grammar_retry_limit + 1,
            last: last_error,
        })
    }

    fn retry_messages(
        &self,
        messages: &mut Vec<ChatMessage>,
        exchange: &ChatExchange,
        error: &GrammarError,
        step: u64,
        attempt: u64,
    ) {
        self.gateway.log_event(
            LoopEventKind::GrammarRetry,
            step,
            attempt + 1,
            format!("assessor response rejected: {}", error.reason),
        );
        messages.push(ChatMessage::assistant(exchange.response_text.clone()));
        messages.push(ChatMessage::user(format!(
            "Your previous reply could not be used: {}. Reply again using exactly the required \
             JSON format and nothing else.",
            error.reason
        )));
    }

    /// The assessor call of a failing iteration: turn the scrutiny issues
    /// into corrective feedback for the next proposal round.
    fn generate_internal_feedback(
        &self,
        state: &EnvState,
        verdict: &ScrutinyVerdict,
        proposals: &[Proposal; 2],
    ) -> Result<(String, ChatExchange), CriticError> {
        let issues: Vec<String> = verdict.issues.iter().map(ToString::to_string).collect();
        let bindings = BTreeMap::from([
            ("state", state.text.clone()),
            ("issues", issues.join("\n")),
            (
                "proposals",
                proposals.iter().map(Proposal::render).collect::<Vec<_>>().join("\n"),
            ),
        ]);
        let prompt = self
            .templates
            .assessor_feedback
            .instantiate(&bindings)
            .expect("feedback bindings cover the template");
        let exchange = self.gateway.complete(
            RoleTag::Assessor,
            vec![ChatMessage::user(prompt)],
            OracleRequest {
                state: state.clone(),
                phase: OraclePhase::AssessorFeedback { issues },
            },
        )?;
        Ok((exchange.response_text.clone(), exchange))
    }

    /// Structured corrective-feedback note: every scrutiny issue, the failing
    /// proposals, and whatever guidance the assessor added.
    fn synthesize_feedback(
        verdict_issues: &[String],
        proposals: &[Proposal; 2],
        guidance: &str,
    ) -> String {
        let mut out = String::from("veracity scrutiny failed:\n");
        for issue in verdict_issues {
            out.push_str(&format!("- {issue}\n"));
        }
        for p in proposals {
            out.push_str(&format!("{}\n", p.render()));
        }
        out.push_str(&format!("assessor guidance: {guidance}"));
        out
    }

    /// Algorithm: propose twice, scrutinize, and either reconcile-and-return
    /// or feed back and retry, up to the iteration limit. On exhaustion the
    /// last proposal that passed the programmatic checks is adopted; if none
    /// ever did, the episode fails.
    pub fn internal_feedback_loop(
        &self,
        state: &EnvState,
        memory: &DecisionMemory,
    ) -> Result<InternalLoopOutput, CriticError> {
        let mut loop_state = InternalFeedbackState {
            iteration: 0,
            limit: self.if_limit,
            feedback: None,
            dialogue: Vec::new(),
        };
        let mut feedback_events = 0u64;
        let mut fallback: Option<JointAction> = None;
        while loop_state.iteration < self.if_limit {
            loop_state.iteration += 1;
            self.gateway.log_event(
                LoopEventKind::InternalIteration,
                state.step_index,
                loop_state.iteration,
                "",
            );
            let explore = self.propose(
                CriticPreference::Explore,
                state,
                memory,
                loop_state.feedback.as_deref(),
            )?;
            let exploit = self.propose(
                CriticPreference::Exploit,
                state,
                memory,
                loop_state.feedback.as_deref(),
            )?;
            let proposals = [explore, exploit];
            let verdict = Self::veracity_scrutiny(state, &proposals);

            // Track the freshest proposal that passes the programmatic
            // checks; exploit wins ties as the safer default.
            for p in [&proposals[1], &proposals[0]] {
                if let Some(joint) = p.joint() {
                    let clean =
                        state.kind() == EnvKind::Gs || detect_conflicts(joint).is_empty();
                    if clean {
                        fallback = Some(joint.clone());
                        break;
                    }
                }
            }

            if verdict.pass {
                let (outcome, exchange) = self.belief_correction(state, memory, &proposals)?;
                loop_state.dialogue.push(exchange);
                match outcome {
                    BlendOutcome::Suggestions(suggestions) => {
                        // The reconciled output faces the same programmatic
                        // checks as the proposals it came from.
                        let conflicts = self.suggestion_conflicts(state, &suggestions);
                        if conflicts.is_empty() {
                            self.gateway.log_event(
                                LoopEventKind::InternalAccepted,
                                state.step_index,
                                loop_state.iteration,
                                "",
                            );
                            return Ok(InternalLoopOutput {
                                suggestions,
                                iterations: loop_state.iteration,
                                feedback_events,
                                fallback_used: false,
                                dialogue: loop_state.dialogue,
                            });
                        }
                        let issues: Vec<String> = conflicts
                            .iter()
                            .map(|c| format!("reconciled suggestions conflict: {}", c.detail))
                            .collect();
                        loop_state.feedback =
                            Some(Self::synthesize_feedback(&issues, &proposals, "split the contested moves across turns"));
                        feedback_events += 1;
                    }
                    BlendOutcome::Rejected { feedback } => {
                        let issues = vec![format!("assessor rejected the proposals: {feedback}")];
                        loop_state.feedback =
                            Some(Self::synthesize_feedback(&issues, &proposals, &feedback));
                        feedback_events += 1;
                    }
                }
            } else {
                let (guidance, exchange) =
                    self.generate_internal_feedback(state, &verdict, &proposals)?;
                loop_state.dialogue.push(exchange);
                let issues: Vec<String> =
                    verdict.issues.iter().map(ToString::to_string).collect();
                loop_state.feedback =
                    Some(Self::synthesize_feedback(&issues, &proposals, &guidance));
                feedback_events += 1;
            }
        }
        if let Some(joint) = fallback {
            self.gateway.log_event(
                LoopEventKind::InternalFallback,
                state.step_index,
                loop_state.iteration,
                "adopting the last proposal that passed programmatic checks",
            );
            let suggestions = joint
                .actions
                .values()
                .map(|a| {
                    (
                        a.agent,
                        Suggestion {
                            agent: a.agent,
                            action: a.action.clone(),
                            rationale: "adopted after the internal iteration limit".into(),
                        },
                    )
                })
                .collect();
            return Ok(InternalLoopOutput {
                suggestions,
                iterations: loop_state.iteration,
                feedback_events,
                fallback_used: true,
                dialogue: loop_state.dialogue,
            });
        }
        Err(CriticError::InternalFeedbackExhausted {
            iterations: loop_state.iteration,
        })
    }

    fn suggestion_conflicts(
        &self,
        state: &EnvState,
        suggestions: &BTreeMap<AgentId, Suggestion>,
    ) -> Vec<Conflict> {
        if state.kind() == EnvKind::Gs {
            return Vec::new();
        }
        let joint = JointAction::from_actions(
            suggestions.values().map(Suggestion::to_agent_action),
        );
        detect_conflicts(&joint)
    }

    /// Revision path of the external feedback loop: one assessor call that
    /// re-suggests actions for exactly the dissenting agents; everyone else
    /// keeps their prior suggestion.
    pub fn revise_suggestions(
        &self,
        state: &EnvState,
        memory: &DecisionMemory,
        dialogue: &[ChatExchange],
        feedback: &[FeedbackNote],
        current: &BTreeMap<AgentId, Suggestion>,
    ) -> Result<BTreeMap<AgentId, Suggestion>, CriticError> {
        if feedback.is_empty() {
            return Err(CriticError::EmptyFeedback);
        }
        let dissenters: Vec<AgentId> = feedback.iter().map(|n| n.agent).collect();
        let notes_text: Vec<String> = feedback
            .iter()
            .map(|n| format!("{}: {}", n.agent, n.reason))
            .collect();
        let current_text: Vec<String> = dissenters
            .iter()
            .filter_map(|a| current.get(a))
            .map(|s| format!("{}: {}", s.agent, s.action))
            .collect();
        let dialogue_text = dialogue
            .last()
            .map(|e| e.response_text.clone())
            .unwrap_or_else(|| "(none)".to_string());
        let bindings = BTreeMap::from([
            ("state", state.text.clone()),
            ("memory", self.render_memory(memory)),
            ("dialogue", dialogue_text),
            ("feedback", notes_text.join("\n")),
            ("suggestions", current_text.join("\n")),
            ("action_grammar", self.env.action_grammar_help()),
        ]);
        let prompt = self
            .templates
            .assessor_revise
            .instantiate(&bindings)
            .expect("revision bindings cover the template");
        let oracle = OracleRequest {
            state: state.clone(),
            phase: OraclePhase::AssessorRevise {
                dissenters: dissenters.clone(),
            },
        };
        let mut messages = vec![ChatMessage::user(prompt)];
        let mut last_error = GrammarError::new("no attempt made");
        for attempt in 0..=self.grammar_retry_limit {
            let exchange =
                self.gateway
                    .complete(RoleTag::Assessor, messages.clone(), oracle.clone())?;
            let schema = Schema::SuggestionMap {
                env: self.env.kind(),
                agents: dissenters.clone(),
            };
            match parse_structured(&exchange.response_text, &schema) {
                Ok(ParsedValue::SuggestionMap(map)) => {
                    let mut merged = current.clone();
                    for (agent, (action, rationale)) in map {
                        merged.insert(
                            agent,
                            Suggestion {
                                agent,
                                action,
                                rationale,
                            },
                        );
                    }
                    return Ok(merged);
                }
                Ok(_) => unreachable!("suggestion-map schema yields suggestion maps"),
                Err(e) => {
                    last_error = e;
                    self.retry_messages(&mut messages, &exchange, &last_error, state.step_index, attempt);
                }
            }
        }
        Err(CriticError::GrammarLimit {
            role: "assessor".into(),
            attempts: self.grammar_retry_limit + 1,
            last: last_error,
        })
    }
}

/// Pull the `thoughts` field out of the first JSON object carrying one.
fn extract_thoughts(text: &str) -> String {
    for (i, b) in text.bytes().enumerate() {
        if b != b'{' {
            continue;
        }
        let mut stream =
            serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(v)) = stream.next() {
            if let Some(t) = v.get("thoughts").and_then(|t| t.as_str()) {
                return t.to_string();
            }
        }
    }
    String::new()
}
