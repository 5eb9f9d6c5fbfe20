//! Shared decision-process abstraction.
//!
//! Every environment exposes the same tuple-shaped interface: agents, states,
//! per-agent observations, per-agent actions, a deterministic transition
//! function, and rewards. The concrete payloads live in [`crate::env_gs`] and
//! [`crate::env_grid`]; everything downstream (memory, critic, actor,
//! orchestrator, transcripts) works against the types here.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_grid::{GridAction, GridObservation, GridState};
use crate::env_gs::{GsAction, GsObservation, GsState};

/// Stable per-episode agent identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AgentId(pub usize);

impl Serialize for AgentId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0 as u64)
    }
}

// Accepts both the numeric form and the stringified form JSON uses for map
// keys.
impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct IdVisitor;
        impl serde::de::Visitor<'_> for IdVisitor {
            type Value = AgentId;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an agent index")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<AgentId, E> {
                Ok(AgentId(v as usize))
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<AgentId, E> {
                v.parse::<usize>()
                    .map(AgentId)
                    .map_err(|_| E::custom(format!("bad agent index `{v}`")))
            }
        }
        deserializer.deserialize_any(IdVisitor)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent_{}", self.0)
    }
}

impl AgentId {
    /// Parse the canonical `agent_<n>` label.
    pub fn parse_label(s: &str) -> Option<AgentId> {
        let n = s.strip_prefix("agent_")?;
        n.parse().ok().map(AgentId)
    }
}

/// Which environment a state or action belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Gs,
    GridEasy,
    GridHard,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EnvKind::Gs => "gs",
            EnvKind::GridEasy => "grid-easy",
            EnvKind::GridHard => "grid-hard",
        };
        f.write_str(s)
    }
}

/// Environment-specific structured state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum StatePayload {
    Gs(GsState),
    Grid(GridState),
}

impl StatePayload {
    pub fn kind(&self) -> EnvKind {
        match self {
            StatePayload::Gs(_) => EnvKind::Gs,
            StatePayload::Grid(g) => g.kind(),
        }
    }

    fn render_text(&self, step_index: u64) -> String {
        match self {
            StatePayload::Gs(s) => s.render_text(step_index),
            StatePayload::Grid(s) => s.render_text(step_index),
        }
    }
}

/// Full environment state plus its text rendering.
///
/// The text is computed from the payload at construction time, so equal
/// payloads always carry byte-equal renderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub step_index: u64,
    pub payload: StatePayload,
    pub text: String,
}

impl EnvState {
    pub fn new(step_index: u64, payload: StatePayload) -> Self {
        let text = payload.render_text(step_index);
        Self {
            step_index,
            payload,
            text,
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.payload.kind()
    }
}

/// Environment-specific local view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum ObservationPayload {
    Gs(GsObservation),
    Grid(GridObservation),
}

impl ObservationPayload {
    fn render_text(&self, agent: AgentId) -> String {
        match self {
            ObservationPayload::Gs(o) => o.render_text(agent),
            ObservationPayload::Grid(o) => o.render_text(agent),
        }
    }
}

/// One agent's local observation of a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: AgentId,
    pub payload: ObservationPayload,
    pub text: String,
}

impl Observation {
    pub fn new(agent: AgentId, payload: ObservationPayload) -> Self {
        let text = payload.render_text(agent);
        Self {
            agent,
            payload,
            text,
        }
    }
}

/// Environment-specific action term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "env", content = "term", rename_all = "snake_case")]
pub enum ActionTerm {
    Gs(GsAction),
    Grid(GridAction),
}

impl fmt::Display for ActionTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionTerm::Gs(a) => write!(f, "{a}"),
            ActionTerm::Grid(a) => write!(f, "{a}"),
        }
    }
}

/// An action attributed to the agent that performs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    pub agent: AgentId,
    pub action: ActionTerm,
}

/// One action per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct JointAction {
    pub actions: BTreeMap<AgentId, AgentAction>,
}

impl JointAction {
    pub fn from_actions(actions: impl IntoIterator<Item = AgentAction>) -> Self {
        Self {
            actions: actions.into_iter().map(|a| (a.agent, a)).collect(),
        }
    }

    /// True when the joint action holds exactly one entry per agent 0..n.
    pub fn covers(&self, n_agents: usize) -> bool {
        self.actions.len() == n_agents
            && self
                .actions
                .keys()
                .enumerate()
                .all(|(i, id)| id.0 == i)
    }

    pub fn get(&self, agent: AgentId) -> Option<&ActionTerm> {
        self.actions.get(&agent).map(|a| &a.action)
    }

    /// Canonical one-line rendering, used in memory and transcripts.
    pub fn render_text(&self) -> String {
        let inner: Vec<String> = self
            .actions
            .values()
            .map(|a| format!("{}: {}", a.agent, a.action))
            .collect();
        format!("{{{}}}", inner.join(", "))
    }
}

/// Result of executing a joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub rewards: BTreeMap<AgentId, f64>,
    pub done: bool,
    pub goal_reached: bool,
}

/// One stored state transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub state: EnvState,
    pub joint_action: JointAction,
    pub rewards: BTreeMap<AgentId, f64>,
    pub next_state: EnvState,
}

/// Environment-level errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown object {0}")]
    UnknownObject(String),
    #[error("illegal action for {agent}: {reason}")]
    IllegalAction { agent: AgentId, reason: String },
    #[error("joint action must cover all {expected} agents, found {found}")]
    IncompleteJointAction { expected: usize, found: usize },
    #[error("conflicting joint action reached execution: {0}")]
    ConflictingJointAction(String),
    #[error("state belongs to a different environment")]
    WrongEnvironment,
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
}

/// The common environment interface.
///
/// Implementations are pure over the explicit state argument: stepping and
/// observing never mutate the environment value itself, which keeps episode
/// snapshots safe to share and replays exact.
pub trait Environment {
    fn kind(&self) -> EnvKind;

    fn agent_count(&self) -> usize;

    /// Initial state and one observation per agent. The same seed always
    /// produces an identical state.
    fn reset(&self, seed: u64) -> (EnvState, BTreeMap<AgentId, Observation>);

    /// Execute a joint action. Deterministic in `(state, joint)`.
    fn step(&self, state: &EnvState, joint: &JointAction) -> Result<StepOutcome, EnvError>;

    /// Pure observation function of the state.
    fn observe(&self, state: &EnvState, agent: AgentId) -> Result<Observation, EnvError>;

    /// Legal action terms for an agent in a state, rendered in the action
    /// grammar. Used by plan confirmation and by prompt construction.
    fn legal_actions(&self, state: &EnvState, agent: AgentId) -> Result<Vec<ActionTerm>, EnvError>;

    /// Whether reaching the horizon without `goal_reached` counts as failure
    /// (grid transport) or as normal completion (resource allocation).
    fn goal_oriented(&self) -> bool;

    /// One-line action-grammar description injected into prompts.
    fn action_grammar_help(&self) -> String;
}

/// Observations for every agent of a state.
pub fn observe_all(
    env: &dyn Environment,
    state: &EnvState,
) -> Result<BTreeMap<AgentId, Observation>, EnvError> {
    (0..env.agent_count())
        .map(|i| {
            let id = AgentId(i);
            env.observe(state, id).map(|o| (id, o))
        })
        .collect()
}
