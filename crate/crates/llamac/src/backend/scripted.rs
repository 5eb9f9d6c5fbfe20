//! Deterministic scripted backend.
//!
//! Emits responses in the same grammar a live model would, so the full
//! pipeline (templating, parsing, scrutiny, confirmation) is exercised
//! without a network. Policies are pure functions of the structured request:
//! resource allocation hill-climbs toward the exhaustive-scan optimum, grid
//! transport plays the greedy conflict-free planner.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::backend::{
    BackendError, BackendResponse, ChatBackend, CompletionRequest, OraclePhase,
};
use crate::core::{ActionTerm, AgentId, EnvState, JointAction, StatePayload};
use crate::critic::CriticPreference;
use crate::env_grid::{greedy_joint, manhattan_from, GridAction, GridState};
use crate::env_gs::{allocate_sum, brute_force_optimum, GsState};

/// The scripted oracle.
#[derive(Debug, Default)]
pub struct ScriptedOracle;

impl ScriptedOracle {
    pub fn new() -> Self {
        Self
    }
}

impl ChatBackend for ScriptedOracle {
    fn id(&self) -> String {
        "scripted".to_string()
    }

    fn complete_raw(&self, request: &CompletionRequest) -> Result<BackendResponse, BackendError> {
        let state = &request.oracle.state;
        let text = match &request.oracle.phase {
            OraclePhase::Propose { preference } => propose(state, *preference),
            OraclePhase::AssessorBlend { explore, exploit } => {
                blend(state, explore.as_ref(), exploit.as_ref())
            }
            OraclePhase::AssessorFeedback { issues } => feedback_text(issues),
            OraclePhase::AssessorRevise { dissenters } => revise(state, dissenters),
            OraclePhase::ActorFeedback {
                agent,
                suggestion,
                failed_checks,
            } => actor_feedback(state, *agent, suggestion, failed_checks),
            OraclePhase::Debater { index, .. } => {
                let preference = if *index == 0 {
                    CriticPreference::Explore
                } else {
                    CriticPreference::Exploit
                };
                propose(state, preference)
            }
            OraclePhase::DebateFinal => debate_final(state),
            OraclePhase::Decentralized { agent } => decentralized(state, *agent),
        };
        Ok(BackendResponse {
            text,
            usage: None,
            latency_ms: 0,
        })
    }
}

fn actions_json(map: BTreeMap<AgentId, String>) -> Value {
    Value::Object(
        map.into_iter()
            .map(|(agent, term)| (agent.to_string(), Value::String(term)))
            .collect(),
    )
}

fn propose(state: &EnvState, preference: CriticPreference) -> String {
    match &state.payload {
        StatePayload::Gs(gs) => {
            let sum = match preference {
                CriticPreference::Explore => explore_sum(gs),
                CriticPreference::Exploit => exploit_sum(gs),
            };
            let thought = match preference {
                CriticPreference::Explore => format!("probing a total of {sum}"),
                CriticPreference::Exploit => format!("holding the best known total of {sum}"),
            };
            gs_actions_response(gs, sum, &thought)
        }
        StatePayload::Grid(grid) => {
            let joint = greedy_joint(grid);
            json!({
                "thoughts": "each reachable object takes its shortest-route move",
                "actions": joint_to_json(&joint),
            })
            .to_string()
        }
    }
}

/// Best completed round: highest reward, earliest on ties.
fn best_round(gs: &GsState) -> Option<(i64, f64)> {
    let mut best: Option<(i64, f64)> = None;
    for r in &gs.history {
        if best.is_none_or(|(_, br)| r.reward > br) {
            best = Some((r.sum_x, r.reward));
        }
    }
    best
}

/// Probing rule: halve the gap between the best known total and the scan
/// optimum. Never overshoots, so each probe improves the reward until the
/// optimum itself is played.
fn explore_sum(gs: &GsState) -> i64 {
    let (target, _) = brute_force_optimum(&gs.config);
    let (lo, hi) = gs.config.sum_range();
    match best_round(gs) {
        None => (lo + hi) / 2,
        Some((best, _)) => {
            let gap = target - best;
            if gap == 0 {
                target
            } else {
                let step = (gap.abs() + 1) / 2;
                best + gap.signum() * step
            }
        }
    }
}

/// Anchoring rule: repeat the best known total; with no history, a token
/// low-end allocation that a lone exploiter never escapes.
fn exploit_sum(gs: &GsState) -> i64 {
    let (lo, hi) = gs.config.sum_range();
    match best_round(gs) {
        None => (gs.config.n_agents as i64).clamp(lo, hi),
        Some((best, _)) => best,
    }
}

fn gs_actions_response(gs: &GsState, sum: i64, thought: &str) -> String {
    let values = allocate_sum(&gs.config, sum);
    let actions: BTreeMap<AgentId, String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| (AgentId(i), v.to_string()))
        .collect();
    json!({"thoughts": thought, "actions": actions_json(actions)}).to_string()
}

fn joint_to_json(joint: &JointAction) -> Value {
    Value::Object(
        joint
            .actions
            .values()
            .map(|a| (a.agent.to_string(), Value::String(a.action.to_string())))
            .collect(),
    )
}

fn joint_sum(joint: &JointAction) -> i64 {
    joint
        .actions
        .values()
        .map(|a| match &a.action {
            ActionTerm::Gs(g) => g.value,
            ActionTerm::Grid(_) => 0,
        })
        .sum()
}

/// True when the reward series is not falling; with fewer than two rounds
/// the panel still leans exploratory.
fn rewards_rising(gs: &GsState) -> bool {
    let n = gs.history.len();
    n < 2 || gs.history[n - 1].reward >= gs.history[n - 2].reward
}

fn blend(state: &EnvState, explore: Option<&JointAction>, exploit: Option<&JointAction>) -> String {
    match &state.payload {
        StatePayload::Gs(gs) => {
            let chosen = match (explore, exploit) {
                (Some(e), Some(x)) => {
                    if rewards_rising(gs) {
                        e
                    } else {
                        x
                    }
                }
                (Some(e), None) => e,
                (None, Some(x)) => x,
                (None, None) => {
                    return json!({
                        "thoughts": "no usable proposal reached the panel",
                        "verdict": "fail",
                        "feedback": "both proposals were unusable; restate complete action maps"
                    })
                    .to_string()
                }
            };
            let sum = joint_sum(chosen);
            let suggestions: Value = Value::Object(
                chosen
                    .actions
                    .values()
                    .map(|a| {
                        (
                            a.agent.to_string(),
                            json!({
                                "action": a.action.to_string(),
                                "rationale": format!("part of the panel total {sum}"),
                            }),
                        )
                    })
                    .collect(),
            );
            json!({
                "thoughts": format!("panel settles on a total of {sum}"),
                "verdict": "pass",
                "suggestions": suggestions,
            })
            .to_string()
        }
        StatePayload::Grid(grid) => {
            let fallback = greedy_joint(grid);
            let explore = explore.unwrap_or(&fallback);
            let exploit = exploit.unwrap_or(explore);
            let mut suggestions = serde_json::Map::new();
            for (agent, act) in &explore.actions {
                let exploit_term = exploit.get(*agent);
                // On disagreement keep whichever move shortens the route,
                // leaning toward the probing proposal.
                let term = match exploit_term {
                    Some(t) if t != &act.action && !shortens(grid, &act.action) && shortens(grid, t) => t,
                    _ => &act.action,
                };
                suggestions.insert(
                    agent.to_string(),
                    json!({
                        "action": term.to_string(),
                        "rationale": "keeps the shortest route to a matching target",
                    }),
                );
            }
            json!({
                "thoughts": "both proposals march objects along shortest routes",
                "verdict": "pass",
                "suggestions": Value::Object(suggestions),
            })
            .to_string()
        }
    }
}

/// Does a grid action strictly reduce its object's distance (deliveries
/// count as progress)?
fn shortens(grid: &GridState, term: &ActionTerm) -> bool {
    let ActionTerm::Grid(action) = term else {
        return false;
    };
    match action {
        GridAction::PlaceInTarget { .. } | GridAction::MoveToTarget { .. } => true,
        GridAction::NoOp => false,
        GridAction::MoveToCell { object, dest } => grid.objects.get(object).is_some_and(|o| {
            let now = manhattan_from(grid, &o.pos, &o.color).unwrap_or(0);
            let next = manhattan_from(grid, &crate::env_grid::GridPos::Cell(*dest), &o.color)
                .unwrap_or(u64::MAX);
            next < now
        }),
        GridAction::MoveToCorner { object, dest } => grid.objects.get(object).is_some_and(|o| {
            let now = manhattan_from(grid, &o.pos, &o.color).unwrap_or(0);
            let next = manhattan_from(grid, &crate::env_grid::GridPos::Corner(*dest), &o.color)
                .unwrap_or(u64::MAX);
            next < now
        }),
    }
}

fn feedback_text(issues: &[String]) -> String {
    if issues.is_empty() {
        "No concrete issue was recorded; restate complete, conflict-free action maps.".to_string()
    } else {
        format!(
            "Fix the following before the next proposal: {}. Assign each contested object to \
             exactly one agent and keep every destination distinct.",
            issues.join("; ")
        )
    }
}

fn revise(state: &EnvState, dissenters: &[AgentId]) -> String {
    let mut entries = serde_json::Map::new();
    match &state.payload {
        StatePayload::Gs(gs) => {
            let (target, _) = brute_force_optimum(&gs.config);
            let allocation = allocate_sum(&gs.config, target);
            for agent in dissenters {
                let value = allocation.get(agent.0).copied().unwrap_or(gs.config.action_min);
                entries.insert(
                    agent.to_string(),
                    json!({
                        "action": value.to_string(),
                        "rationale": "reissued within the legal action range",
                    }),
                );
            }
        }
        StatePayload::Grid(grid) => {
            let joint = greedy_joint(grid);
            for agent in dissenters {
                let term = joint
                    .get(*agent)
                    .map(ToString::to_string)
                    .unwrap_or_else(|| "noop".to_string());
                entries.insert(
                    agent.to_string(),
                    json!({
                        "action": term,
                        "rationale": "recomputed shortest-route move from the current state",
                    }),
                );
            }
        }
    }
    Value::Object(entries).to_string()
}

fn actor_feedback(
    state: &EnvState,
    agent: AgentId,
    suggestion: &str,
    failed_checks: &[crate::actor::ConfirmationCheck],
) -> String {
    let checks: Vec<String> = failed_checks.iter().map(ToString::to_string).collect();
    match &state.payload {
        StatePayload::Gs(gs) => format!(
            "The suggestion `{suggestion}` is not executable for {agent}: {}. Any integer \
             between {} and {} works.",
            checks.join("; "),
            gs.config.action_min,
            gs.config.action_max
        ),
        StatePayload::Grid(grid) => {
            let better = greedy_joint(grid)
                .get(agent)
                .map(ToString::to_string)
                .unwrap_or_else(|| "noop".to_string());
            format!(
                "The suggestion `{suggestion}` fails my checks: {}. From my cell the workable \
                 move is `{better}`.",
                checks.join("; ")
            )
        }
    }
}

fn debate_final(state: &EnvState) -> String {
    match &state.payload {
        StatePayload::Gs(gs) => {
            let sum = if rewards_rising(gs) {
                explore_sum(gs)
            } else {
                exploit_sum(gs)
            };
            gs_actions_response(gs, sum, &format!("settled on a total of {sum}"))
        }
        StatePayload::Grid(grid) => {
            let joint = greedy_joint(grid);
            json!({
                "thoughts": "both sides agree on shortest-route moves",
                "actions": joint_to_json(&joint),
            })
            .to_string()
        }
    }
}

fn decentralized(state: &EnvState, agent: AgentId) -> String {
    match &state.payload {
        StatePayload::Gs(gs) => {
            // Own history only: repeat the own action from the best round seen.
            let mut best: Option<(i64, f64)> = None;
            for r in &gs.history {
                let own = r.actions.get(agent.0).copied().unwrap_or(0);
                if best.is_none_or(|(_, br)| r.reward > br) {
                    best = Some((own, r.reward));
                }
            }
            let value = best.map_or_else(
                || 1i64.clamp(gs.config.action_min, gs.config.action_max),
                |(own, _)| own,
            );
            let actions: BTreeMap<AgentId, String> =
                [(agent, value.to_string())].into_iter().collect();
            json!({
                "thoughts": "repeating my own best-performing action",
                "actions": actions_json(actions),
            })
            .to_string()
        }
        StatePayload::Grid(grid) => {
            let term = greedy_joint(grid)
                .get(agent)
                .map(ToString::to_string)
                .unwrap_or_else(|| "noop".to_string());
            let actions: BTreeMap<AgentId, String> = [(agent, term)].into_iter().collect();
            json!({
                "thoughts": "moving my nearest object along its shortest route",
                "actions": actions_json(actions),
            })
            .to_string()
        }
    }
}
