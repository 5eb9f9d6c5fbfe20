//! Decentralized actors.
//!
//! Each actor checks its assigned suggestion with two deterministic,
//! model-free tests — is the action currently available, and does it keep the
//! moved object's route to a target from growing — then either freezes the
//! action for execution or explains the problem back to the critic. The
//! external loop aggregates those notes, asks the assessor to revise the
//! dissenting assignments, and repeats up to its iteration limit. A joint
//! action that confirms with no dissent costs zero model calls.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::template::TemplateSet;
use crate::backend::{
    BackendError, ChatMessage, LlmGateway, OraclePhase, OracleRequest, RoleTag,
};
use crate::core::{
    ActionTerm, AgentAction, AgentId, EnvKind, EnvState, Environment, JointAction, Observation,
    StatePayload,
};
use crate::critic::{CriticError, Suggestion, TripletCritic};
use crate::env_grid::{detect_conflicts_in, manhattan_from, GridAction, GridPos};
use crate::memory::DecisionMemory;
use crate::transcript::LoopEventKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfirmationDecision {
    Execute,
    NeedsRevision,
}

/// One deterministic confirmation check with its evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum ConfirmationCheck {
    Availability { pass: bool, detail: String },
    Distance { pass: bool, old: u64, new: u64 },
}

impl ConfirmationCheck {
    pub fn passed(&self) -> bool {
        match self {
            ConfirmationCheck::Availability { pass, .. }
            | ConfirmationCheck::Distance { pass, .. } => *pass,
        }
    }
}

impl fmt::Display for ConfirmationCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfirmationCheck::Availability { pass, detail } => {
                write!(f, "availability {}: {detail}", if *pass { "ok" } else { "failed" })
            }
            ConfirmationCheck::Distance { pass, old, new } => write!(
                f,
                "distance {}: {old} -> {new}",
                if *pass { "ok" } else { "failed" }
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationResult {
    pub decision: ConfirmationDecision,
    pub checks: Vec<ConfirmationCheck>,
}

impl ConfirmationResult {
    pub fn failed_checks(&self) -> Vec<ConfirmationCheck> {
        self.checks.iter().filter(|c| !c.passed()).cloned().collect()
    }
}

/// A dissenting actor's message back to the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackNote {
    pub agent: AgentId,
    pub suggestion: Suggestion,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActorError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// Deterministic plan confirmation. Pure in `(observation, suggestion,
/// state)`: (1) the suggested action must be among the agent's currently
/// legal actions; (2) for grid moves, the moved object's distance to its
/// nearest matching target must not grow. Deliveries and no-ops pass the
/// distance check by definition; resource allocation has no distance notion,
/// so only availability applies.
pub fn plan_confirmation(
    env: &dyn Environment,
    state: &EnvState,
    observation: &Observation,
    suggestion: &Suggestion,
) -> ConfirmationResult {
    debug_assert_eq!(observation.agent, suggestion.agent);
    let mut checks = Vec::new();

    let legal = env
        .legal_actions(state, suggestion.agent)
        .unwrap_or_default();
    let available = legal.contains(&suggestion.action);
    checks.push(ConfirmationCheck::Availability {
        pass: available,
        detail: if available {
            format!("{} is currently legal", suggestion.action)
        } else {
            format!("{} is not among the legal actions", suggestion.action)
        },
    });

    if available {
        if let (StatePayload::Grid(grid), ActionTerm::Grid(action)) =
            (&state.payload, &suggestion.action)
        {
            let moved = match action {
                GridAction::MoveToCell { object, dest } => {
                    Some((object, GridPos::Cell(*dest)))
                }
                GridAction::MoveToCorner { object, dest } => {
                    Some((object, GridPos::Corner(*dest)))
                }
                _ => None,
            };
            if let Some((object, dest)) = moved {
                if let Some(obj) = grid.objects.get(object) {
                    let old = manhattan_from(grid, &obj.pos, &obj.color).unwrap_or(0);
                    let new = manhattan_from(grid, &dest, &obj.color).unwrap_or(0);
                    checks.push(ConfirmationCheck::Distance {
                        pass: new <= old,
                        old,
                        new,
                    });
                }
            }
        }
    }

    let decision = if checks.iter().all(ConfirmationCheck::passed) {
        ConfirmationDecision::Execute
    } else {
        ConfirmationDecision::NeedsRevision
    };
    ConfirmationResult { decision, checks }
}

/// One actor model call that explains a rejected suggestion. The
/// deterministic check evidence rides along in the prompt; the reply is free
/// text, so grammar failures cannot occur here.
pub fn generate_feedback(
    gateway: &LlmGateway,
    state: &EnvState,
    observation: &Observation,
    suggestion: &Suggestion,
    confirmation: &ConfirmationResult,
) -> Result<FeedbackNote, ActorError> {
    if confirmation.decision == ConfirmationDecision::Execute {
        return Err(ActorError::Contract(
            "feedback requested for a confirmed suggestion".into(),
        ));
    }
    let templates = TemplateSet::builtin();
    let failed = confirmation.failed_checks();
    let checks_text: Vec<String> = failed.iter().map(ToString::to_string).collect();
    let bindings = BTreeMap::from([
        ("agent", suggestion.agent.to_string()),
        ("observation", observation.text.clone()),
        ("suggestion", suggestion.action.to_string()),
        ("checks", checks_text.join("\n")),
    ]);
    let prompt = templates
        .actor_feedback
        .instantiate(&bindings)
        .expect("actor bindings cover the template");
    let exchange = gateway.complete(
        RoleTag::Actor(suggestion.agent.0),
        vec![ChatMessage::user(prompt)],
        OracleRequest {
            state: state.clone(),
            phase: OraclePhase::ActorFeedback {
                agent: suggestion.agent,
                suggestion: suggestion.action.to_string(),
                failed_checks: failed,
            },
        },
    )?;
    let reason = if exchange.response_text.trim().is_empty() {
        // Feedback must carry a reason even from a silent model.
        checks_text.join("; ")
    } else {
        exchange.response_text.clone()
    };
    Ok(FeedbackNote {
        agent: suggestion.agent,
        suggestion: suggestion.clone(),
        reason,
    })
}

/// What the external loop produced alongside the executable joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLoopOutput {
    pub joint: JointAction,
    /// Confirmation rounds run (at least one even when everything passes).
    pub rounds: u64,
    /// Feedback notes generated, i.e. dissenting actor model calls.
    pub notes: u64,
    /// Assessor revision calls issued.
    pub revisions: u64,
    /// Agents that fell back after the iteration limit.
    pub fallbacks: u64,
}

/// The revision loop between actors and critic.
///
/// Per round every unfrozen actor confirms its suggestion; confirmed actions
/// freeze and never change afterward. Dissenters explain themselves (one
/// model call each), the assessor revises exactly those assignments (one
/// call), and the next round re-checks only the revised agents. The assembled
/// action set is re-checked for cross-agent conflicts every round, so a
/// revision can never smuggle a conflict past the per-agent checks; conflicted
/// newcomers are sent back to revision. After `ef_limit` revision rounds,
/// unresolved agents fall back — no-op on the grid, their own previous action
/// in resource allocation — so the episode stays alive.
#[allow(clippy::too_many_arguments)]
pub fn external_feedback_loop(
    gateway: &LlmGateway,
    critic: &TripletCritic<'_>,
    env: &dyn Environment,
    state: &EnvState,
    memory: &DecisionMemory,
    suggestions: BTreeMap<AgentId, Suggestion>,
    observations: &BTreeMap<AgentId, Observation>,
    dialogue: &[crate::backend::ChatExchange],
    ef_limit: u64,
) -> Result<ExternalLoopOutput, ActorError> {
    let n = env.agent_count();
    if suggestions.len() != n {
        return Err(ActorError::Contract(format!(
            "suggestions cover {} of {n} agents",
            suggestions.len()
        )));
    }
    let mut current = suggestions;
    let mut frozen: BTreeMap<AgentId, AgentAction> = BTreeMap::new();
    let mut rounds = 0u64;
    let mut notes_total = 0u64;
    let mut revisions = 0u64;

    loop {
        rounds += 1;
        gateway.log_event(
            LoopEventKind::ExternalRound,
            state.step_index,
            rounds,
            format!("{} agents unconfirmed", n - frozen.len()),
        );

        // Per-agent deterministic confirmation for everyone not yet frozen.
        let mut passing: Vec<AgentId> = Vec::new();
        let mut dissent: Vec<(AgentId, ConfirmationResult)> = Vec::new();
        for (agent, suggestion) in &current {
            if frozen.contains_key(agent) {
                continue;
            }
            let observation = observations
                .get(agent)
                .ok_or_else(|| ActorError::Contract(format!("no observation for {agent}")))?;
            let confirmation = plan_confirmation(env, state, observation, suggestion);
            match confirmation.decision {
                ConfirmationDecision::Execute => passing.push(*agent),
                ConfirmationDecision::NeedsRevision => dissent.push((*agent, confirmation)),
            }
        }

        // Cross-agent recheck: individually confirmed actions may still
        // contend with frozen ones. Conflicted newcomers go back to revision
        // with the conflict as their failed check; the frozen set itself is
        // conflict-free by induction.
        if env.kind() != EnvKind::Gs {
            let mut candidate: BTreeMap<AgentId, AgentAction> = frozen.clone();
            for agent in &passing {
                candidate.insert(*agent, current[agent].to_agent_action());
            }
            let conflicts = detect_conflicts_in(candidate.iter());
            if !conflicts.is_empty() {
                let mut vetoed: Vec<AgentId> = Vec::new();
                for conflict in &conflicts {
                    for agent in &conflict.agents {
                        if passing.contains(agent) && !vetoed.contains(agent) {
                            vetoed.push(*agent);
                            dissent.push((
                                *agent,
                                ConfirmationResult {
                                    decision: ConfirmationDecision::NeedsRevision,
                                    checks: vec![ConfirmationCheck::Availability {
                                        pass: false,
                                        detail: format!(
                                            "confirmed action clashes with the rest of the \
                                             joint action: {}",
                                            conflict.detail
                                        ),
                                    }],
                                },
                            ));
                        }
                    }
                }
                passing.retain(|a| !vetoed.contains(a));
                dissent.sort_by_key(|(a, _)| *a);
            }
        }

        for agent in passing {
            frozen.insert(agent, current[&agent].to_agent_action());
        }

        if dissent.is_empty() {
            return Ok(ExternalLoopOutput {
                joint: JointAction {
                    actions: frozen,
                },
                rounds,
                notes: notes_total,
                revisions,
                fallbacks: 0,
            });
        }

        if revisions >= ef_limit {
            // Iteration budget spent: unresolved agents fall back.
            let mut fallbacks = 0u64;
            for (agent, _) in &dissent {
                let action = fallback_action(state, *agent);
                gateway.log_event(
                    LoopEventKind::ExternalFallback,
                    state.step_index,
                    rounds,
                    format!("{agent} falls back to {action}"),
                );
                frozen.insert(
                    *agent,
                    AgentAction {
                        agent: *agent,
                        action,
                    },
                );
                fallbacks += 1;
            }
            return Ok(ExternalLoopOutput {
                joint: JointAction {
                    actions: frozen,
                },
                rounds,
                notes: notes_total,
                revisions,
                fallbacks,
            });
        }

        // Dissenters explain themselves, ordered by agent id.
        let mut feedback = Vec::with_capacity(dissent.len());
        for (agent, confirmation) in &dissent {
            let observation = &observations[agent];
            let note = generate_feedback(
                gateway,
                state,
                observation,
                &current[agent],
                confirmation,
            )?;
            feedback.push(note);
            notes_total += 1;
        }

        revisions += 1;
        gateway.log_event(
            LoopEventKind::ExternalRevision,
            state.step_index,
            revisions,
            format!("revising {} suggestion(s)", feedback.len()),
        );
        current = critic.revise_suggestions(state, memory, dialogue, &feedback, &current)?;
    }
}

/// Exhaustion fallback: grid agents do nothing; allocation agents repeat
/// their own previous action (their lowest legal value on the first round).
fn fallback_action(state: &EnvState, agent: AgentId) -> ActionTerm {
    match &state.payload {
        StatePayload::Grid(_) => ActionTerm::Grid(GridAction::NoOp),
        StatePayload::Gs(gs) => {
            let value = gs
                .history
                .last()
                .and_then(|r| r.actions.get(agent.0).copied())
                .unwrap_or(gs.config.action_min);
            ActionTerm::Gs(crate::env_gs::GsAction { value })
        }
    }
}
