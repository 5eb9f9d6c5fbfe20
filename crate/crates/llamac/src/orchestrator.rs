//! Episode execution.
//!
//! Binds environments, memory, the critic, the actors, and the gateway into
//! the per-step loop: internal feedback produces suggestions, external
//! feedback turns them into an executable joint action, the environment
//! steps, and the transition lands in memory and the transcript. Also hosts
//! the comparison baselines, the seeded batch runner, and transcript replay.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor::{external_feedback_loop, ActorError};
use crate::backend::grammar::{parse_structured, ParsedValue, Schema};
use crate::backend::http::HttpBackend;
use crate::backend::replay::ReplayBackend;
use crate::backend::scripted::ScriptedOracle;
use crate::backend::template::TemplateSet;
use crate::backend::{
    BackendError, ChatBackend, ChatMessage, LlmGateway, OraclePhase, OracleRequest, RoleTag,
    TokenUsage,
};
use crate::core::{
    observe_all, ActionTerm, AgentAction, AgentId, EnvKind, EnvState, Environment, JointAction,
    Observation, StatePayload, TransitionRecord,
};
use crate::critic::{CriticError, CriticPreference, TripletCritic};
use crate::env_grid::{
    detect_conflicts, generate_scenario, greedy_joint, GridConfig, GridEnv, GridMode,
};
use crate::env_gs::{allocate_sum, brute_force_optimum, joint_from_values, GsConfig, GsEnv};
use crate::memory::DecisionMemory;
use crate::rng::{derive_trial_seed, SplitMix64};
use crate::scenario::hash_config;
use crate::transcript::{
    read_transcript, write_transcript, LoopEventKind, TranscriptError, TranscriptHeader,
    TranscriptLog, TranscriptRecord, TRANSCRIPT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Llamac,
    Debate,
    OnlyExplore,
    OnlyExploit,
    Decentralized,
    ScriptedGreedy,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "llamac" => Some(Method::Llamac),
            "debate" => Some(Method::Debate),
            "only_explore" => Some(Method::OnlyExplore),
            "only_exploit" => Some(Method::OnlyExploit),
            "decentralized" => Some(Method::Decentralized),
            "scripted_greedy" => Some(Method::ScriptedGreedy),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Llamac => "llamac",
            Method::Debate => "debate",
            Method::OnlyExplore => "only_explore",
            Method::OnlyExploit => "only_exploit",
            Method::Decentralized => "decentralized",
            Method::ScriptedGreedy => "scripted_greedy",
        }
    }

    pub fn is_baseline(&self) -> bool {
        matches!(
            self,
            Method::Debate | Method::OnlyExplore | Method::OnlyExploit | Method::Decentralized
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Gs(GsConfig),
    Grid(GridConfig),
    /// A seeded random grid scenario generated per trial.
    GridRandom {
        rows: usize,
        cols: usize,
        mode: GridMode,
        objects: usize,
        colors: usize,
    },
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Gs(_) => EnvKind::Gs,
            EnvSpec::Grid(c) => match c.mode {
                GridMode::Easy => EnvKind::GridEasy,
                GridMode::Hard => EnvKind::GridHard,
            },
            EnvSpec::GridRandom { mode, .. } => match mode {
                GridMode::Easy => EnvKind::GridEasy,
                GridMode::Hard => EnvKind::GridHard,
            },
        }
    }

    /// Column value for reports: agent count for allocation, `RxC` for grids.
    pub fn size_label(&self) -> String {
        match self {
            EnvSpec::Gs(c) => c.n_agents.to_string(),
            EnvSpec::Grid(c) => format!("{}x{}", c.rows, c.cols),
            EnvSpec::GridRandom { rows, cols, .. } => format!("{rows}x{cols}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    Scripted,
    Http,
    Replay { path: PathBuf },
}

/// Everything one episode needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub method: Method,
    pub backend: BackendChoice,
    pub seed: u64,
    /// Episode length override; by default the environment's own horizon
    /// (`max_rounds` / `max_steps`) applies.
    pub horizon: Option<u64>,
    pub if_limit: u64,
    pub ef_limit: u64,
    /// Memory window; defaults to the full horizon for allocation and 5
    /// steps for the grids.
    pub mem_window: Option<usize>,
    /// Re-asks allowed per structured assessor/baseline call before the
    /// episode fails with a grammar reason.
    pub grammar_retry_limit: u64,
    /// Prompt-size gate in estimated tokens.
    pub context_limit: u64,
    pub debate_rounds: u64,
    pub record_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(env: EnvSpec, method: Method, backend: BackendChoice, seed: u64) -> Self {
        Self {
            env,
            method,
            backend,
            seed,
            horizon: None,
            if_limit: 3,
            ef_limit: 3,
            mem_window: None,
            grammar_retry_limit: 3,
            context_limit: 128_000,
            debate_rounds: 2,
            record_dir: None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.if_limit < 1 {
            return Err("if_limit must be >= 1".into());
        }
        if self.ef_limit < 1 {
            return Err("ef_limit must be >= 1".into());
        }
        if self.mem_window == Some(0) {
            return Err("mem_window must be >= 1".into());
        }
        if self.debate_rounds < 1 {
            return Err("debate_rounds must be >= 1".into());
        }
        match &self.env {
            EnvSpec::Gs(c) => c.validate(),
            EnvSpec::Grid(c) => c.validate(),
            EnvSpec::GridRandom { rows, cols, objects, .. } => {
                if *rows == 0 || *cols == 0 {
                    Err("grid must have at least one row and one column".into())
                } else if *objects == 0 {
                    Err("a random scenario needs at least one object".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    GrammarLimit,
    ContextLength,
    StepLimit,
    InternalExhausted,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FailureReason::GrammarLimit => "grammar_limit",
            FailureReason::ContextLength => "context_length",
            FailureReason::StepLimit => "step_limit",
            FailureReason::InternalExhausted => "internal_exhausted",
        };
        f.write_str(s)
    }
}

/// Outcome and accounting of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub steps: u64,
    /// Internal retries plus external notes.
    pub feedback_count: u64,
    pub feedback_internal: u64,
    pub feedback_external: u64,
    pub token_usage: BTreeMap<String, TokenUsage>,
    pub reward_trace: Vec<f64>,
    pub transcript_path: Option<String>,
}

impl EpisodeResult {
    /// Equality over everything except where the transcript happens to live.
    pub fn metrics_match(&self, other: &EpisodeResult) -> bool {
        self.success == other.success
            && self.failure_reason == other.failure_reason
            && self.steps == other.steps
            && self.feedback_count == other.feedback_count
            && self.feedback_internal == other.feedback_internal
            && self.feedback_external == other.feedback_external
            && self.token_usage == other.token_usage
            && self.reward_trace == other.reward_trace
    }

    pub fn total_usage(&self) -> TokenUsage {
        let mut total = TokenUsage::default();
        for u in self.token_usage.values() {
            total.add(u);
        }
        total
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("internal contract violation: {0}")]
    Internal(String),
}

/// Resolved environment plus the hash recorded in the transcript header.
fn resolve_env(config: &RunConfig) -> Result<(Box<dyn Environment>, String), RunError> {
    match &config.env {
        EnvSpec::Gs(gs) => {
            let mut gs = gs.clone();
            if let Some(h) = config.horizon {
                gs.max_rounds = h;
            }
            let hash = hash_config(&gs);
            Ok((
                Box::new(GsEnv::new(gs).map_err(|e| RunError::Config(e.to_string()))?),
                hash,
            ))
        }
        EnvSpec::Grid(grid) => {
            let mut grid = grid.clone();
            if let Some(h) = config.horizon {
                grid.max_steps = h;
            }
            let hash = hash_config(&grid);
            Ok((
                Box::new(GridEnv::new(grid).map_err(|e| RunError::Config(e.to_string()))?),
                hash,
            ))
        }
        EnvSpec::GridRandom {
            rows,
            cols,
            mode,
            objects,
            colors,
        } => {
            let mut rng = SplitMix64::stream(config.seed, "scenario");
            let mut grid = generate_scenario(&mut rng, *rows, *cols, *mode, *objects, *colors);
            if let Some(h) = config.horizon {
                grid.max_steps = h;
            }
            let hash = hash_config(&grid);
            Ok((
                Box::new(GridEnv::new(grid).map_err(|e| RunError::Config(e.to_string()))?),
                hash,
            ))
        }
    }
}

fn build_backend(config: &RunConfig) -> Result<Box<dyn ChatBackend>, RunError> {
    match &config.backend {
        BackendChoice::Scripted => Ok(Box::new(ScriptedOracle::new())),
        BackendChoice::Http => Ok(Box::new(HttpBackend::from_env()?)),
        BackendChoice::Replay { path } => {
            let transcript = read_transcript(path)?;
            Ok(Box::new(ReplayBackend::new(
                transcript.exchanges().cloned().collect(),
            )))
        }
    }
}

/// Run one episode with the backend named in the config.
pub fn run_episode(config: &RunConfig) -> Result<EpisodeResult, RunError> {
    let backend = build_backend(config)?;
    run_episode_with_backend(config, backend).map(|(result, _)| result)
}

/// Baseline entry point: same engine, but the method must be one of the
/// comparison baselines.
pub fn run_baseline(config: &RunConfig) -> Result<EpisodeResult, RunError> {
    if !config.method.is_baseline() {
        return Err(RunError::Config(format!(
            "{} is not a baseline method",
            config.method.as_str()
        )));
    }
    run_episode(config)
}

/// Run one episode against an explicit backend (fault-injection fixtures,
/// replay). Returns the full transcript log alongside the result.
pub fn run_episode_with_backend(
    config: &RunConfig,
    backend: Box<dyn ChatBackend>,
) -> Result<(EpisodeResult, TranscriptLog), RunError> {
    config.validate().map_err(RunError::Config)?;
    let (env, scenario_hash) = resolve_env(config)?;
    let log = Rc::new(RefCell::new(TranscriptLog::new()));
    let gateway = LlmGateway::new(backend, config.context_limit, Rc::clone(&log));

    let mut result = drive_episode(config, env.as_ref(), &gateway)?;

    if let Some(dir) = &config.record_dir {
        let name = format!(
            "{}_{}_{}_seed{}.jsonl",
            config.method.as_str(),
            env.kind(),
            config.env.size_label(),
            config.seed
        );
        let path = dir.join(name);
        result.transcript_path = Some(path.display().to_string());
        log.borrow_mut()
            .push(TranscriptRecord::Result {
                episode: result.clone(),
            });
        let header = TranscriptHeader {
            version: TRANSCRIPT_VERSION,
            grammar_version: crate::backend::grammar::GRAMMAR_VERSION.to_string(),
            seed: config.seed,
            scenario_hash,
            config: config.clone(),
        };
        write_transcript(&path, &header, log.borrow().records())?;
    } else {
        log.borrow_mut()
            .push(TranscriptRecord::Result {
                episode: result.clone(),
            });
    }

    drop(gateway);
    let log = Rc::try_unwrap(log)
        .map_err(|_| RunError::Internal("transcript log still shared".into()))?
        .into_inner();
    Ok((result, log))
}

/// What one decision produced, before the environment step.
struct StepDecision {
    joint: JointAction,
    feedback_internal: u64,
    feedback_external: u64,
}

enum DriverError {
    Failure(FailureReason),
    Fatal(RunError),
}

impl From<CriticError> for DriverError {
    fn from(e: CriticError) -> Self {
        match e {
            CriticError::Backend(BackendError::ContextLengthExceeded { .. }) => {
                DriverError::Failure(FailureReason::ContextLength)
            }
            CriticError::Backend(other) => DriverError::Fatal(RunError::Backend(other)),
            CriticError::GrammarLimit { .. } => DriverError::Failure(FailureReason::GrammarLimit),
            CriticError::InternalFeedbackExhausted { .. } => {
                DriverError::Failure(FailureReason::InternalExhausted)
            }
            CriticError::EmptyFeedback => {
                DriverError::Fatal(RunError::Internal("revision without feedback".into()))
            }
        }
    }
}

impl From<ActorError> for DriverError {
    fn from(e: ActorError) -> Self {
        match e {
            ActorError::Backend(BackendError::ContextLengthExceeded { .. }) => {
                DriverError::Failure(FailureReason::ContextLength)
            }
            ActorError::Backend(other) => DriverError::Fatal(RunError::Backend(other)),
            ActorError::Critic(c) => c.into(),
            ActorError::Contract(m) => DriverError::Fatal(RunError::Internal(m)),
        }
    }
}

fn env_horizon(state: &EnvState) -> u64 {
    match &state.payload {
        StatePayload::Gs(gs) => gs.config.max_rounds,
        StatePayload::Grid(grid) => grid.max_steps,
    }
}

fn drive_episode(
    config: &RunConfig,
    env: &dyn Environment,
    gateway: &LlmGateway,
) -> Result<EpisodeResult, RunError> {
    let (mut state, mut observations) = env.reset(config.seed);
    let horizon = env_horizon(&state);
    let window = config.mem_window.unwrap_or(match env.kind() {
        EnvKind::Gs => horizon.max(1) as usize,
        EnvKind::GridEasy | EnvKind::GridHard => 5,
    });
    let mut memory = DecisionMemory::new(window);
    let critic = TripletCritic::new(gateway, env, config.if_limit, config.grammar_retry_limit);

    let mut steps = 0u64;
    let mut feedback_internal = 0u64;
    let mut feedback_external = 0u64;
    let mut reward_trace = Vec::new();
    let mut failure: Option<FailureReason> = None;

    loop {
        if steps >= horizon {
            failure = Some(FailureReason::StepLimit);
            break;
        }
        // The memory view feeding this decision, as the critic consumes it.
        let snapshot = match env.kind() {
            EnvKind::Gs => memory.render_gs(),
            EnvKind::GridEasy | EnvKind::GridHard => memory.render_grid(),
        }
        .unwrap_or_else(|e| format!("(memory unavailable: {e})"));
        gateway.log_event(LoopEventKind::MemorySnapshot, state.step_index, 0, snapshot);
        let decision = match decide(config, env, gateway, &critic, &state, &memory, &observations)
        {
            Ok(d) => d,
            Err(DriverError::Failure(reason)) => {
                failure = Some(reason);
                break;
            }
            Err(DriverError::Fatal(e)) => return Err(e),
        };
        feedback_internal += decision.feedback_internal;
        feedback_external += decision.feedback_external;

        let outcome = env
            .step(&state, &decision.joint)
            .map_err(|e| RunError::Internal(format!("environment rejected the step: {e}")))?;
        let transition = TransitionRecord {
            state: state.clone(),
            joint_action: decision.joint,
            rewards: outcome.rewards.clone(),
            next_state: outcome.next_state.clone(),
        };
        gateway_log_transition(gateway, &transition);
        memory
            .push(transition)
            .map_err(|e| RunError::Internal(e.to_string()))?;
        reward_trace.push(
            outcome
                .rewards
                .values()
                .next()
                .copied()
                .unwrap_or_default(),
        );
        steps += 1;
        observations = observe_all(env, &outcome.next_state)
            .map_err(|e| RunError::Internal(e.to_string()))?;
        state = outcome.next_state;

        if outcome.done {
            if !outcome.goal_reached && env.goal_oriented() {
                failure = Some(FailureReason::StepLimit);
            }
            break;
        }
    }

    Ok(EpisodeResult {
        success: failure.is_none(),
        failure_reason: failure,
        steps,
        feedback_count: feedback_internal + feedback_external,
        feedback_internal,
        feedback_external,
        token_usage: gateway.usage_by_role(),
        reward_trace,
        transcript_path: None,
    })
}

fn gateway_log_transition(gateway: &LlmGateway, transition: &TransitionRecord) {
    gateway.log_record(TranscriptRecord::Transition(transition.clone()));
}

fn decide(
    config: &RunConfig,
    env: &dyn Environment,
    gateway: &LlmGateway,
    critic: &TripletCritic<'_>,
    state: &EnvState,
    memory: &DecisionMemory,
    observations: &BTreeMap<AgentId, Observation>,
) -> Result<StepDecision, DriverError> {
    match config.method {
        Method::Llamac => {
            let internal = critic.internal_feedback_loop(state, memory)?;
            let external = external_feedback_loop(
                gateway,
                critic,
                env,
                state,
                memory,
                internal.suggestions,
                observations,
                &internal.dialogue,
                config.ef_limit,
            )?;
            Ok(StepDecision {
                joint: external.joint,
                feedback_internal: internal.feedback_events,
                feedback_external: external.notes,
            })
        }
        Method::OnlyExplore => single_critic(config, env, critic, state, memory, CriticPreference::Explore),
        Method::OnlyExploit => single_critic(config, env, critic, state, memory, CriticPreference::Exploit),
        Method::Decentralized => decentralized(config, env, gateway, state, observations),
        Method::Debate => debate(config, env, gateway, state, memory),
        Method::ScriptedGreedy => scripted_greedy(env, state),
    }
}

/// A lone preference-biased proposer with no assessor. Conflicting or
/// unparseable proposals are re-asked via proposal feedback up to the grammar
/// retry limit.
fn single_critic(
    config: &RunConfig,
    env: &dyn Environment,
    critic: &TripletCritic<'_>,
    state: &EnvState,
    memory: &DecisionMemory,
    preference: CriticPreference,
) -> Result<StepDecision, DriverError> {
    let mut feedback: Option<String> = None;
    for attempt in 0..=config.grammar_retry_limit {
        let proposal = critic.propose(preference, state, memory, feedback.as_deref())?;
        match proposal.joint() {
            Some(joint) => {
                let conflicts = if env.kind() == EnvKind::Gs {
                    Vec::new()
                } else {
                    detect_conflicts(joint)
                };
                if conflicts.is_empty() {
                    return Ok(StepDecision {
                        joint: joint.clone(),
                        feedback_internal: attempt,
                        feedback_external: 0,
                    });
                }
                feedback = Some(format!(
                    "your joint action conflicted: {}",
                    conflicts
                        .iter()
                        .map(|c| c.detail.clone())
                        .collect::<Vec<_>>()
                        .join("; ")
                ));
            }
            None => {
                feedback = Some("your previous reply did not parse; use the exact JSON format".into());
            }
        }
    }
    Err(DriverError::Failure(FailureReason::GrammarLimit))
}

/// One model call per agent per round, each seeing only its own observation.
fn decentralized(
    config: &RunConfig,
    env: &dyn Environment,
    gateway: &LlmGateway,
    state: &EnvState,
    observations: &BTreeMap<AgentId, Observation>,
) -> Result<StepDecision, DriverError> {
    let templates = TemplateSet::builtin();
    let mut actions: BTreeMap<AgentId, AgentAction> = BTreeMap::new();
    let mut retries = 0u64;
    for i in 0..env.agent_count() {
        let agent = AgentId(i);
        let observation = &observations[&agent];
        let bindings = BTreeMap::from([
            ("agent", agent.to_string()),
            ("observation", observation.text.clone()),
            ("action_grammar", env.action_grammar_help()),
        ]);
        let prompt = templates
            .decentralized
            .instantiate(&bindings)
            .expect("decentralized bindings cover the template");
        let mut messages = vec![ChatMessage::user(prompt)];
        let schema = Schema::ActionMap {
            env: env.kind(),
            agents: vec![agent],
        };
        let mut parsed = None;
        for attempt in 0..=config.grammar_retry_limit {
            let exchange = gateway
                .complete(
                    RoleTag::Actor(i),
                    messages.clone(),
                    OracleRequest {
                        state: state.clone(),
                        phase: OraclePhase::Decentralized { agent },
                    },
                )
                .map_err(backend_failure)?;
            match parse_structured(&exchange.response_text, &schema) {
                Ok(ParsedValue::ActionMap(map)) => {
                    parsed = map.into_iter().next();
                    retries += attempt;
                    break;
                }
                Ok(_) => unreachable!("action-map schema yields action maps"),
                Err(e) => {
                    messages.push(ChatMessage::assistant(exchange.response_text.clone()));
                    messages.push(ChatMessage::user(format!(
                        "Your previous reply could not be used: {}. Reply again with exactly \
                         the required JSON format.",
                        e.reason
                    )));
                }
            }
        }
        let Some((_, action)) = parsed else {
            return Err(DriverError::Failure(FailureReason::GrammarLimit));
        };
        actions.insert(agent, AgentAction { agent, action });
    }
    // No coordination channel exists here, so contending actions simply
    // degrade rather than ending the episode.
    if env.kind() != EnvKind::Gs {
        let conflicts = detect_conflicts_in_map(&actions);
        for conflict in conflicts {
            for agent in conflict.agents {
                gateway.log_event(
                    LoopEventKind::ConflictDegraded,
                    state.step_index,
                    0,
                    format!("{agent}: {}", conflict.detail),
                );
                actions.insert(
                    agent,
                    AgentAction {
                        agent,
                        action: ActionTerm::Grid(crate::env_grid::GridAction::NoOp),
                    },
                );
            }
        }
    }
    Ok(StepDecision {
        joint: JointAction { actions },
        feedback_internal: retries,
        feedback_external: 0,
    })
}

fn detect_conflicts_in_map(
    actions: &BTreeMap<AgentId, AgentAction>,
) -> Vec<crate::env_grid::Conflict> {
    crate::env_grid::detect_conflicts_in(actions.iter())
}

fn backend_failure(e: BackendError) -> DriverError {
    match e {
        BackendError::ContextLengthExceeded { .. } => {
            DriverError::Failure(FailureReason::ContextLength)
        }
        other => DriverError::Fatal(RunError::Backend(other)),
    }
}

/// Two debaters exchange `debate_rounds` rounds, then one synthesis call
/// produces the executable joint action: `2 * rounds + 1` calls per decision.
fn debate(
    config: &RunConfig,
    env: &dyn Environment,
    gateway: &LlmGateway,
    state: &EnvState,
    memory: &DecisionMemory,
) -> Result<StepDecision, DriverError> {
    let templates = TemplateSet::builtin();
    let memory_text = match env.kind() {
        EnvKind::Gs => memory.render_gs(),
        _ => memory.render_grid(),
    }
    .unwrap_or_else(|e| format!("(memory unavailable: {e})"));
    let mut positions: [String; 2] = ["(none yet)".into(), "(none yet)".into()];
    let mut record = String::new();
    for round in 1..=config.debate_rounds {
        for index in 0..2usize {
            let bindings = BTreeMap::from([
                ("index", index.to_string()),
                ("round", round.to_string()),
                ("agents", env.agent_count().to_string()),
                ("state", state.text.clone()),
                ("memory", memory_text.clone()),
                ("opponent", positions[1 - index].clone()),
                ("action_grammar", env.action_grammar_help()),
            ]);
            let prompt = templates
                .debater
                .instantiate(&bindings)
                .expect("debater bindings cover the template");
            let exchange = gateway
                .complete(
                    RoleTag::Debater(index),
                    vec![ChatMessage::user(prompt)],
                    OracleRequest {
                        state: state.clone(),
                        phase: OraclePhase::Debater {
                            index,
                            round,
                        },
                    },
                )
                .map_err(backend_failure)?;
            positions[index] = exchange.response_text.clone();
            record.push_str(&format!(
                "round {round}, debater {index}: {}\n",
                exchange.response_text
            ));
        }
    }
    let bindings = BTreeMap::from([
        ("agents", env.agent_count().to_string()),
        ("state", state.text.clone()),
        ("transcript", record),
        ("action_grammar", env.action_grammar_help()),
    ]);
    let prompt = templates
        .debate_final
        .instantiate(&bindings)
        .expect("debate bindings cover the template");
    let schema = Schema::ActionMap {
        env: env.kind(),
        agents: (0..env.agent_count()).map(AgentId).collect(),
    };
    let mut messages = vec![ChatMessage::user(prompt)];
    for attempt in 0..=config.grammar_retry_limit {
        let exchange = gateway
            .complete(
                RoleTag::Debater(0),
                messages.clone(),
                OracleRequest {
                    state: state.clone(),
                    phase: OraclePhase::DebateFinal,
                },
            )
            .map_err(backend_failure)?;
        match parse_structured(&exchange.response_text, &schema) {
            Ok(ParsedValue::ActionMap(map)) => {
                let joint = JointAction::from_actions(
                    map.into_iter()
                        .map(|(agent, action)| AgentAction { agent, action }),
                );
                let conflict_free =
                    env.kind() == EnvKind::Gs || detect_conflicts(&joint).is_empty();
                if conflict_free {
                    return Ok(StepDecision {
                        joint,
                        feedback_internal: attempt,
                        feedback_external: 0,
                    });
                }
                messages.push(ChatMessage::assistant(exchange.response_text.clone()));
                messages.push(ChatMessage::user(
                    "Your joint action conflicted with itself; assign each object once and keep \
                     destinations distinct."
                        .to_string(),
                ));
            }
            Ok(_) => unreachable!("action-map schema yields action maps"),
            Err(e) => {
                messages.push(ChatMessage::assistant(exchange.response_text.clone()));
                messages.push(ChatMessage::user(format!(
                    "Your previous reply could not be used: {}. Reply again with exactly the \
                     required JSON format.",
                    e.reason
                )));
            }
        }
    }
    Err(DriverError::Failure(FailureReason::GrammarLimit))
}

/// Model-free reference planner: greedy conflict-free distance descent on the
/// grids, the exhaustive-scan optimum on allocation. Zero model calls.
fn scripted_greedy(env: &dyn Environment, state: &EnvState) -> Result<StepDecision, DriverError> {
    let joint = match &state.payload {
        StatePayload::Grid(grid) => greedy_joint(grid),
        StatePayload::Gs(gs) => {
            let (target, _) = brute_force_optimum(&gs.config);
            joint_from_values(&allocate_sum(&gs.config, target))
        }
    };
    let _ = env;
    Ok(StepDecision {
        joint,
        feedback_internal: 0,
        feedback_external: 0,
    })
}

/// One CSV row per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: String,
    pub env: String,
    pub size: String,
    pub seed: u64,
    pub success: bool,
    pub steps: u64,
    pub feedback: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Mean and one standard deviation over the successful trials (sample
/// deviation, zero for a single value), matching the report layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub env: String,
    pub size: String,
    pub trials: u64,
    pub successes: u64,
    pub steps_mean: Option<f64>,
    pub steps_sd: Option<f64>,
    pub feedback_mean: Option<f64>,
    pub feedback_sd: Option<f64>,
}

impl AggregateRow {
    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchReport {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
    pub results: Vec<EpisodeResult>,
}

pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    };
    Some((mean, sd))
}

/// Aggregate per-trial rows that share one configuration.
pub fn aggregate_rows(method: &str, env: &str, size: &str, rows: &[TrialRow]) -> AggregateRow {
    let successes: Vec<&TrialRow> = rows.iter().filter(|r| r.success).collect();
    let steps: Vec<f64> = successes.iter().map(|r| r.steps as f64).collect();
    let feedback: Vec<f64> = successes.iter().map(|r| r.feedback as f64).collect();
    let steps_stats = mean_sd(&steps);
    let feedback_stats = mean_sd(&feedback);
    AggregateRow {
        method: method.to_string(),
        env: env.to_string(),
        size: size.to_string(),
        trials: rows.len() as u64,
        successes: successes.len() as u64,
        steps_mean: steps_stats.map(|s| s.0),
        steps_sd: steps_stats.map(|s| s.1),
        feedback_mean: feedback_stats.map(|s| s.0),
        feedback_sd: feedback_stats.map(|s| s.1),
    }
}

/// Run `trials` episodes per configuration with independently derived seeds:
/// trial `k` is reproducible in isolation.
pub fn run_batch(configs: &[RunConfig], trials: u64) -> Result<BatchReport, RunError> {
    if trials < 1 {
        return Err(RunError::Config("trials must be >= 1".into()));
    }
    let mut report = BatchReport::default();
    for config in configs {
        let mut config_rows = Vec::new();
        for k in 0..trials {
            let mut trial = config.clone();
            trial.seed = derive_trial_seed(config.seed, k);
            let result = run_episode(&trial)?;
            let usage = result.total_usage();
            let row = TrialRow {
                method: trial.method.as_str().to_string(),
                env: trial.env.kind().to_string(),
                size: trial.env.size_label(),
                seed: trial.seed,
                success: result.success,
                steps: result.steps,
                feedback: result.feedback_count,
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            };
            config_rows.push(row.clone());
            report.rows.push(row);
            report.results.push(result);
        }
        report.aggregates.push(aggregate_rows(
            config.method.as_str(),
            &config.env.kind().to_string(),
            &config.env.size_label(),
            &config_rows,
        ));
    }
    Ok(report)
}

/// Replay verdict: the re-executed episode against the recorded responses,
/// compared with the recorded result and transition sequence.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub original: EpisodeResult,
    pub replayed: EpisodeResult,
    pub result_matches: bool,
    pub transitions_match: bool,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.result_matches && self.transitions_match
    }
}

/// Re-execute a recorded episode and compare against its recorded outcome.
pub fn replay_transcript(path: &std::path::Path) -> Result<ReplayOutcome, RunError> {
    let transcript = read_transcript(path)?;
    let original = transcript
        .result()
        .ok_or_else(|| {
            RunError::Transcript(TranscriptError::Truncated(
                "transcript carries no result record".into(),
            ))
        })?
        .clone();
    let mut config = transcript.header.config.clone();
    config.record_dir = None;
    config.backend = BackendChoice::Replay {
        path: path.to_path_buf(),
    };
    let backend = Box::new(ReplayBackend::new(transcript.exchanges().cloned().collect()));
    let (replayed, log) = run_episode_with_backend(&config, backend).map_err(|e| match e {
        RunError::Backend(BackendError::ReplayExhausted { call_index }) => RunError::Transcript(
            TranscriptError::Truncated(format!("recorded exchanges ran out at call {call_index}")),
        ),
        other => other,
    })?;
    let recorded_transitions: Vec<&TransitionRecord> = transcript.transitions().collect();
    let replayed_transitions: Vec<&TransitionRecord> = log.transitions().collect();
    let transitions_match = recorded_transitions.len() == replayed_transitions.len()
        && recorded_transitions
            .iter()
            .zip(replayed_transitions.iter())
            .all(|(a, b)| a == b);
    Ok(ReplayOutcome {
        result_matches: original.metrics_match(&replayed),
        transitions_match,
        original,
        replayed,
    })
}
