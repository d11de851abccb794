//! Egoism and courtesy rewards and their courtesy-weighted blend.
//!
//! The egoism reward of one agent over an N-step plan is
//!
//! ```text
//! theta_comfort * sum_t exp(-alpha * a_t^2) + theta_eff * sum_t (1 - exp(-beta * v_{t+1}^2))
//! ```
//!
//! and the social reward of an agent is `gamma * own_egoism + (1 - gamma) * courtesy`, where the
//! courtesy term is the other agent's egoism evaluated with the same parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{plan_unsafe, rollout_joint, Agent, AgentState, JointState, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Courtesy blend: 1 is purely egoistic, 0 purely courteous.
    pub gamma: f64,
    /// `[comfort, efficiency]` feature weights.
    pub theta: [f64; 2],
    /// Comfort shape constant (s⁴/m²).
    pub alpha: f64,
    /// Efficiency shape constant (s²/m²).
    pub beta: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            gamma: 1.0,
            theta: [1.0, 1.0],
            alpha: 0.1,
            beta: 0.1,
        }
    }
}

impl RewardParams {
    pub fn with_gamma(self, gamma: f64) -> Self {
        RewardParams { gamma, ..self }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::schema(format!("{field}.gamma"), "must lie in [0, 1]"));
        }
        if self.theta.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::schema(format!("{field}.theta"), "weights must be non-negative"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::schema(format!("{field}.alpha"), "must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::schema(format!("{field}.beta"), "must be positive"));
        }
        Ok(())
    }

    /// Upper bound of any egoism or social reward over `horizon` steps.
    pub fn max_reward(&self, horizon: usize) -> f64 {
        horizon as f64 * (self.theta[0] + self.theta[1])
    }
}

/// Reward parameters of both agents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardPair {
    pub ego: RewardParams,
    pub opp: RewardParams,
}

impl RewardPair {
    pub fn get(&self, agent: Agent) -> &RewardParams {
        match agent {
            Agent::Ego => &self.ego,
            Agent::Opp => &self.opp,
        }
    }

    pub fn swapped(&self) -> RewardPair {
        RewardPair {
            ego: self.opp,
            opp: self.ego,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub own_egoism: f64,
    pub other_egoism: f64,
    pub courtesy: f64,
    pub total: f64,
}

/// Egoism of one agent from its own accelerations and the states they produced.
pub fn egoism_from_states(accels: &[f64], states: &[AgentState], params: &RewardParams) -> f64 {
    debug_assert_eq!(accels.len(), states.len());
    let comfort: f64 = accels.iter().map(|a| (-params.alpha * a * a).exp()).sum();
    let efficiency: f64 = states.iter().map(|x| 1.0 - (-params.beta * x.v * x.v).exp()).sum();
    params.theta[0] * comfort + params.theta[1] * efficiency
}

/// `gamma * own + (1 - gamma) * other`.
pub fn blend(gamma: f64, own: f64, other: f64) -> f64 {
    gamma * own + (1.0 - gamma) * other
}

fn agent_states(traj: &[JointState], agent: Agent) -> Vec<AgentState> {
    traj.iter()
        .map(|x| match agent {
            Agent::Ego => x.ego,
            Agent::Opp => x.opp,
        })
        .collect()
}

/// Egoism reward of `agent` along the joint rollout of `(ego_accels, opp_accels)` from `x0`.
pub fn egoism_reward(
    x0: &JointState,
    ego_accels: &[f64],
    opp_accels: &[f64],
    params: &RewardParams,
    agent: Agent,
    scenario: &Scenario,
) -> Result<f64> {
    let traj = rollout_joint(x0, ego_accels, opp_accels, scenario)?;
    let accels = match agent {
        Agent::Ego => ego_accels,
        Agent::Opp => opp_accels,
    };
    Ok(egoism_from_states(accels, &agent_states(&traj, agent), params))
}

/// Social reward of `agent` given that agent's parameters.
pub fn social_reward(
    x0: &JointState,
    ego_accels: &[f64],
    opp_accels: &[f64],
    params: &RewardParams,
    agent: Agent,
    scenario: &Scenario,
) -> Result<RewardBreakdown> {
    let traj = rollout_joint(x0, ego_accels, opp_accels, scenario)?;
    Ok(social_from_trajectory(&traj, ego_accels, opp_accels, params, agent))
}

/// Social reward from an already computed joint rollout.
pub fn social_from_trajectory(
    traj: &[JointState],
    ego_accels: &[f64],
    opp_accels: &[f64],
    params: &RewardParams,
    agent: Agent,
) -> RewardBreakdown {
    let ego = egoism_from_states(ego_accels, &agent_states(traj, Agent::Ego), params);
    let opp = egoism_from_states(opp_accels, &agent_states(traj, Agent::Opp), params);
    let (own, other) = match agent {
        Agent::Ego => (ego, opp),
        Agent::Opp => (opp, ego),
    };
    RewardBreakdown {
        own_egoism: own,
        other_egoism: other,
        courtesy: other,
        total: blend(params.gamma, own, other),
    }
}

/// Social rewards `(ego, opp)` of a joint plan, both zero when the joint trajectory is unsafe.
pub fn gated_rewards(
    x0: &JointState,
    ego_accels: &[f64],
    opp_accels: &[f64],
    rewards: &RewardPair,
    scenario: &Scenario,
) -> Result<(f64, f64)> {
    let traj = rollout_joint(x0, ego_accels, opp_accels, scenario)?;
    Ok(gated_from_trajectory(
        x0, &traj, ego_accels, opp_accels, rewards, scenario,
    ))
}

/// Like [`gated_rewards`] with the rollout `traj` from `x0` already computed. Safety is checked
/// on the sub-sampled motion between states as well.
pub fn gated_from_trajectory(
    x0: &JointState,
    traj: &[JointState],
    ego_accels: &[f64],
    opp_accels: &[f64],
    rewards: &RewardPair,
    scenario: &Scenario,
) -> (f64, f64) {
    if plan_unsafe(x0, ego_accels, opp_accels, scenario) {
        return (0.0, 0.0);
    }
    let e = social_from_trajectory(traj, ego_accels, opp_accels, &rewards.ego, Agent::Ego);
    let o = social_from_trajectory(traj, ego_accels, opp_accels, &rewards.opp, Agent::Opp);
    (e.total, o.total)
}
