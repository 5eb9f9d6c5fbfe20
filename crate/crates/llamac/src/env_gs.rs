//! System resource allocation environment.
//!
//! Every agent picks an integer, the system pays all agents the same reward
//! `R(x) = x * exp(-(x - mu)^2 / sigma^2)` where `x` is the sum of the chosen
//! integers. Includes an exhaustive-scan optimum oracle used by tests, the
//! scripted backend, and the `oracle-gs` CLI command.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::core::{
    ActionTerm, AgentAction, AgentId, EnvError, EnvKind, EnvState, Environment, JointAction,
    Observation, ObservationPayload, StatePayload, StepOutcome,
};

/// Environment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsConfig {
    pub n_agents: usize,
    pub mu: f64,
    pub sigma: f64,
    pub action_min: i64,
    pub action_max: i64,
    pub max_rounds: u64,
}

impl GsConfig {
    /// Defaults place the optimum strictly inside the joint action range so
    /// both under- and over-shooting are observable.
    pub fn with_defaults(n_agents: usize) -> Self {
        Self {
            n_agents,
            mu: 2.5 * n_agents as f64,
            sigma: 0.5 * n_agents as f64,
            action_min: 0,
            action_max: 9,
            max_rounds: 20,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_agents < 1 {
            return Err("n_agents must be >= 1".into());
        }
        if self.mu <= 0.0 {
            return Err("mu must be > 0".into());
        }
        if self.sigma <= 0.0 {
            return Err("sigma must be > 0".into());
        }
        if self.action_min > self.action_max {
            return Err("action_min must be <= action_max".into());
        }
        Ok(())
    }

    pub fn sum_range(&self) -> (i64, i64) {
        let n = self.n_agents as i64;
        (n * self.action_min, n * self.action_max)
    }
}

/// One agent's integer choice.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct GsAction {
    pub value: i64,
}

impl fmt::Display for GsAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

/// One completed round: everyone's action, the sum, and the broadcast reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsRoundRecord {
    pub actions: Vec<i64>,
    pub sum_x: i64,
    pub reward: f64,
}

/// Full environment state: the configuration plus all completed rounds.
/// Self-contained so transcript snapshots render without external context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsState {
    pub config: GsConfig,
    pub history: Vec<GsRoundRecord>,
}

impl GsState {
    pub fn render_text(&self, step_index: u64) -> String {
        let c = &self.config;
        let mut out = format!(
            "resource allocation: {} agents, each picks an integer in [{}, {}], round {}/{}\n",
            c.n_agents, c.action_min, c.action_max, step_index, c.max_rounds
        );
        if self.history.is_empty() {
            out.push_str("no rounds played yet");
        } else {
            out.push_str("history (actions, sum, mean action, system reward):\n");
            for (i, r) in self.history.iter().enumerate() {
                let mean = r.sum_x as f64 / r.actions.len() as f64;
                out.push_str(&format!(
                    "  round {}: actions {:?}, sum {}, mean {:.2}, reward {}\n",
                    i + 1,
                    r.actions,
                    r.sum_x,
                    mean,
                    r.reward
                ));
            }
            out.pop();
        }
        out
    }
}

/// What a single agent sees: its own action history and the system reward
/// series, nothing about other agents' choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsObservation {
    pub own_actions: Vec<i64>,
    pub system_rewards: Vec<f64>,
    pub action_min: i64,
    pub action_max: i64,
}

impl GsObservation {
    pub fn render_text(&self, agent: AgentId) -> String {
        format!(
            "{agent}: own actions {:?}, system rewards {:?}, next action must be an integer in [{}, {}]",
            self.own_actions, self.system_rewards, self.action_min, self.action_max
        )
    }
}

/// `R(x) = x * exp(-(x - mu)^2 / sigma^2)`.
///
/// Computed with `libm` rather than the platform math library: host libm
/// picks CPU-specific code paths whose last bit can differ between machines,
/// which would break bit-exact transcript replay.
pub fn gaussian_squeeze(x: f64, mu: f64, sigma: f64) -> Result<f64, EnvError> {
    if sigma <= 0.0 {
        return Err(EnvError::NonPositiveSigma(sigma));
    }
    let d = x - mu;
    Ok(x * libm::exp(-(d * d) / (sigma * sigma)))
}

/// Exhaustive optimum of the squeeze reward over integer sums.
///
/// Scans every integer in `[n*action_min, n*action_max]` and returns the
/// argmax (smallest sum on ties) with its reward. The comparison runs in log
/// space (`ln x - (x - mu)^2 / sigma^2` for positive x) so that a mean far
/// outside the range, where the direct form underflows to zero for every
/// candidate, still ranks correctly. Debug builds also check the continuous
/// stationarity condition `2x^2 - 2*mu*x - sigma^2 = 0`: whenever the
/// positive root lies inside the range, the integer argmax must land within
/// distance one of it.
pub fn brute_force_optimum(config: &GsConfig) -> (i64, f64) {
    let (lo, hi) = config.sum_range();
    let score = |x: i64| -> f64 {
        if x <= 0 {
            // R(0) = 0, below every positive-sum reward.
            return f64::NEG_INFINITY;
        }
        let d = x as f64 - config.mu;
        libm::log(x as f64) - d * d / (config.sigma * config.sigma)
    };
    let mut best_x = lo;
    let mut best_r = score(lo);
    for x in lo..=hi {
        let r = score(x);
        if r > best_r {
            best_r = r;
            best_x = x;
        }
    }
    let best_r = gaussian_squeeze(best_x as f64, config.mu, config.sigma)
        .expect("validated sigma");
    debug_assert!({
        let root = stationary_point(config.mu, config.sigma);
        let (lo_f, hi_f) = (lo as f64, hi as f64);
        if root >= lo_f && root <= hi_f {
            (best_x as f64 - root).abs() <= 1.0
        } else {
            true
        }
    });
    (best_x, best_r)
}

/// Positive root of `2x^2 - 2*mu*x - sigma^2 = 0`, the stationary point of
/// the squeeze reward for x > 0.
pub fn stationary_point(mu: f64, sigma: f64) -> f64 {
    (mu + (mu * mu + 2.0 * sigma * sigma).sqrt()) / 2.0
}

/// Greedy integer allocation of a target sum across agents, each share
/// clamped to the action range.
pub fn allocate_sum(config: &GsConfig, target_sum: i64) -> Vec<i64> {
    let n = config.n_agents as i64;
    let (lo, hi) = config.sum_range();
    let sum = target_sum.clamp(lo, hi);
    let base = sum.div_euclid(n);
    let extra = sum.rem_euclid(n);
    (0..n)
        .map(|i| {
            let v = base + i64::from(i < extra);
            v.clamp(config.action_min, config.action_max)
        })
        .collect()
}

/// The environment itself.
#[derive(Debug, Clone)]
pub struct GsEnv {
    config: GsConfig,
}

impl GsEnv {
    pub fn new(config: GsConfig) -> Result<Self, EnvError> {
        if config.sigma <= 0.0 {
            return Err(EnvError::NonPositiveSigma(config.sigma));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &GsConfig {
        &self.config
    }

    fn payload<'a>(&self, state: &'a EnvState) -> Result<&'a GsState, EnvError> {
        match &state.payload {
            StatePayload::Gs(s) => Ok(s),
            _ => Err(EnvError::WrongEnvironment),
        }
    }
}

impl Environment for GsEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Gs
    }

    fn agent_count(&self) -> usize {
        self.config.n_agents
    }

    fn reset(&self, _seed: u64) -> (EnvState, BTreeMap<AgentId, Observation>) {
        let state = EnvState::new(
            0,
            StatePayload::Gs(GsState {
                config: self.config.clone(),
                history: Vec::new(),
            }),
        );
        let observations = (0..self.config.n_agents)
            .map(|i| {
                let id = AgentId(i);
                (id, self.observe(&state, id).expect("fresh state"))
            })
            .collect();
        (state, observations)
    }

    fn step(&self, state: &EnvState, joint: &JointAction) -> Result<StepOutcome, EnvError> {
        let gs = self.payload(state)?;
        if !joint.covers(self.config.n_agents) {
            return Err(EnvError::IncompleteJointAction {
                expected: self.config.n_agents,
                found: joint.actions.len(),
            });
        }
        let mut actions = Vec::with_capacity(self.config.n_agents);
        for (agent, act) in &joint.actions {
            let value = match &act.action {
                ActionTerm::Gs(a) => a.value,
                _ => {
                    return Err(EnvError::IllegalAction {
                        agent: *agent,
                        reason: "action from a different environment".into(),
                    })
                }
            };
            if value < self.config.action_min || value > self.config.action_max {
                return Err(EnvError::IllegalAction {
                    agent: *agent,
                    reason: format!(
                        "{value} outside [{}, {}]",
                        self.config.action_min, self.config.action_max
                    ),
                });
            }
            actions.push(value);
        }
        let sum_x: i64 = actions.iter().sum();
        let reward = gaussian_squeeze(sum_x as f64, self.config.mu, self.config.sigma)?;

        let mut history = gs.history.clone();
        history.push(GsRoundRecord {
            actions,
            sum_x,
            reward,
        });
        let done = history.len() as u64 >= self.config.max_rounds;
        let next_state = EnvState::new(
            state.step_index + 1,
            StatePayload::Gs(GsState {
                config: self.config.clone(),
                history,
            }),
        );
        let rewards = (0..self.config.n_agents)
            .map(|i| (AgentId(i), reward))
            .collect();
        Ok(StepOutcome {
            next_state,
            rewards,
            done,
            goal_reached: false,
        })
    }

    fn observe(&self, state: &EnvState, agent: AgentId) -> Result<Observation, EnvError> {
        let gs = self.payload(state)?;
        if agent.0 >= self.config.n_agents {
            return Err(EnvError::UnknownAgent(agent));
        }
        let payload = GsObservation {
            own_actions: gs.history.iter().map(|r| r.actions[agent.0]).collect(),
            system_rewards: gs.history.iter().map(|r| r.reward).collect(),
            action_min: self.config.action_min,
            action_max: self.config.action_max,
        };
        Ok(Observation::new(agent, ObservationPayload::Gs(payload)))
    }

    fn legal_actions(&self, state: &EnvState, agent: AgentId) -> Result<Vec<ActionTerm>, EnvError> {
        self.payload(state)?;
        if agent.0 >= self.config.n_agents {
            return Err(EnvError::UnknownAgent(agent));
        }
        Ok((self.config.action_min..=self.config.action_max)
            .map(|value| ActionTerm::Gs(GsAction { value }))
            .collect())
    }

    fn goal_oriented(&self) -> bool {
        false
    }

    fn action_grammar_help(&self) -> String {
        format!(
            "Each action is a bare integer between {} and {} (inclusive).",
            self.config.action_min, self.config.action_max
        )
    }
}

/// Build a joint action from one integer per agent.
pub fn joint_from_values(values: &[i64]) -> JointAction {
    JointAction::from_actions(values.iter().enumerate().map(|(i, &value)| AgentAction {
        agent: AgentId(i),
        action: ActionTerm::Gs(GsAction { value }),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, mu: f64, sigma: f64) -> GsConfig {
        GsConfig {
            n_agents: n,
            mu,
            sigma,
            action_min: 0,
            action_max: 9,
            max_rounds: 20,
        }
    }

    #[test]
    fn squeeze_zero_at_origin() {
        assert_eq!(gaussian_squeeze(0.0, 15.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn squeeze_identity_at_mean() {
        assert_eq!(gaussian_squeeze(15.0, 15.0, 5.0).unwrap(), 15.0);
    }

    #[test]
    fn squeeze_known_point() {
        // 20 * e^(-25/25)
        let r = gaussian_squeeze(20.0, 15.0, 5.0).unwrap();
        assert!((r - 20.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((r - 7.357588823428847).abs() < 1e-10);
    }

    #[test]
    fn squeeze_rejects_bad_sigma() {
        assert!(matches!(
            gaussian_squeeze(1.0, 1.0, 0.0),
            Err(EnvError::NonPositiveSigma(_))
        ));
    }

    #[test]
    fn optimum_interior() {
        // Stationary point (14 + sqrt(196 + 50)) / 2 ~= 14.84.
        let (x, _) = brute_force_optimum(&cfg(3, 14.0, 5.0));
        assert!(x == 14 || x == 15, "got {x}");
    }

    #[test]
    fn optimum_boundary_when_mean_far_right() {
        let (x, _) = brute_force_optimum(&cfg(1, 100.0, 1.0));
        assert_eq!(x, 9);
    }

    #[test]
    fn optimum_near_zero() {
        let (x, _) = brute_force_optimum(&cfg(3, 0.5, 0.1));
        assert!(x == 0 || x == 1, "got {x}");
    }

    #[test]
    fn reset_deterministic() {
        let env = GsEnv::new(cfg(3, 15.0, 5.0)).unwrap();
        let (a, oa) = env.reset(7);
        let (b, ob) = env.reset(7);
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert_eq!(a.step_index, 0);
        assert_eq!(oa.len(), 3);
    }

    #[test]
    fn step_broadcasts_reward_at_mean() {
        let env = GsEnv::new(cfg(3, 15.0, 5.0)).unwrap();
        let (state, _) = env.reset(0);
        let out = env.step(&state, &joint_from_values(&[5, 5, 5])).unwrap();
        for r in out.rewards.values() {
            assert!((r - 15.0).abs() < 1e-12);
        }
        assert_eq!(out.next_state.step_index, 1);
        assert!(!out.done);
    }

    #[test]
    fn step_rejects_out_of_range() {
        let env = GsEnv::new(cfg(2, 5.0, 2.0)).unwrap();
        let (state, _) = env.reset(0);
        let err = env.step(&state, &joint_from_values(&[3, 11])).unwrap_err();
        assert!(matches!(err, EnvError::IllegalAction { .. }));
    }

    #[test]
    fn step_zero_actions_zero_reward() {
        let env = GsEnv::new(cfg(3, 15.0, 5.0)).unwrap();
        let (state, _) = env.reset(0);
        let out = env.step(&state, &joint_from_values(&[0, 0, 0])).unwrap();
        assert_eq!(out.rewards[&AgentId(0)], 0.0);
    }

    #[test]
    fn fifty_agents_all_nine() {
        let config = cfg(50, 225.0, 50.0);
        let env = GsEnv::new(config).unwrap();
        let (state, _) = env.reset(0);
        let out = env.step(&state, &joint_from_values(&[9; 50])).unwrap();
        let expect = 450.0 * (-(225.0f64 * 225.0) / 2500.0).exp();
        assert!((out.rewards[&AgentId(0)] - expect).abs() < 1e-9);
    }

    #[test]
    fn observation_hides_other_agents() {
        let env = GsEnv::new(cfg(3, 15.0, 5.0)).unwrap();
        let (state, _) = env.reset(0);
        let out = env.step(&state, &joint_from_values(&[4, 7, 9])).unwrap();
        let obs = env.observe(&out.next_state, AgentId(2)).unwrap();
        match &obs.payload {
            ObservationPayload::Gs(o) => {
                assert_eq!(o.own_actions, vec![9]);
                assert_eq!(o.system_rewards.len(), 1);
            }
            _ => panic!("wrong payload"),
        }
        assert!(obs.text.contains("own actions [9]"), "{}", obs.text);
        assert!(!obs.text.contains("4, 7"), "leaked other actions: {}", obs.text);
    }

    #[test]
    fn observe_unknown_agent_errors() {
        let env = GsEnv::new(cfg(2, 5.0, 2.0)).unwrap();
        let (state, _) = env.reset(0);
        assert!(matches!(
            env.observe(&state, AgentId(5)),
            Err(EnvError::UnknownAgent(_))
        ));
    }

    #[test]
    fn done_at_max_rounds() {
        let mut config = cfg(1, 5.0, 2.0);
        config.max_rounds = 2;
        let env = GsEnv::new(config).unwrap();
        let (s0, _) = env.reset(0);
        let o1 = env.step(&s0, &joint_from_values(&[1])).unwrap();
        assert!(!o1.done);
        let o2 = env.step(&o1.next_state, &joint_from_values(&[1])).unwrap();
        assert!(o2.done);
        assert!(!o2.goal_reached);
    }

    #[test]
    fn allocation_reaches_target() {
        let config = cfg(3, 14.0, 5.0);
        let alloc = allocate_sum(&config, 14);
        assert_eq!(alloc.iter().sum::<i64>(), 14);
        assert!(alloc.iter().all(|&v| (0..=9).contains(&v)));
    }
}
