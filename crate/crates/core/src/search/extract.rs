use serde::{Deserialize, Serialize};

use super::tree::{GameTree, NodeId, NodeKind};
use crate::error::{Error, Result};
use crate::reward::{gated_from_trajectory, RewardPair};
use crate::scenario::{rollout_joint, JointState, Scenario};

/// Visit concentration at one depth of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthVisits {
    pub depth: usize,
    /// Visits of the most visited node at this depth.
    pub v_max: u64,
    /// Visits of the runner-up node at this depth (0 when there is only one node).
    pub v_other: u64,
    pub nodes: usize,
    pub total_visits: u64,
}

impl DepthVisits {
    pub fn concentration(&self) -> f64 {
        self.v_max as f64 / self.v_other.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub iteration: usize,
    pub ego_reward: f64,
    pub opp_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchStats {
    /// Depths 1..=max_depth.
    pub per_depth: Vec<DepthVisits>,
    pub max_depth: usize,
    pub node_count: usize,
    pub iterations: usize,
    pub curve: Vec<CurveSample>,
}

impl SearchStats {
    pub fn at_depth(&self, depth: usize) -> Option<&DepthVisits> {
        self.per_depth.iter().find(|d| d.depth == depth)
    }
}

/// The plan read off the tree.
///
/// The tree may not reach the horizon; `ego_actions`/`opp_actions` hold what was extracted and
/// the `completed_*` sequences pad the remainder with zero acceleration. `trajectory` and
/// `rewards` are evaluated on the completed plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub ego_actions: Vec<f64>,
    pub opp_actions: Vec<f64>,
    pub completed_ego: Vec<f64>,
    pub completed_opp: Vec<f64>,
    pub trajectory: Vec<JointState>,
    /// Safety-gated social rewards `[ego, opp]` of the completed plan.
    pub rewards: [f64; 2],
    /// Depth of the last extracted node.
    pub depth: usize,
}

impl PlanResult {
    pub fn first_action(&self) -> Option<f64> {
        self.ego_actions.first().copied()
    }

    /// Predicted opponent positions x_1..x_N under the plan.
    pub fn opponent_positions(&self) -> Vec<f64> {
        self.trajectory.iter().map(|x| x.opp.s).collect()
    }
}

/// The child an unbiased greedy descent takes from `n`: highest raw average reward of the
/// deciding agent, ties to the lowest action index.
pub fn greedy_child(tree: &GameTree, n: NodeId) -> Option<NodeId> {
    let agent = tree.node(n).kind.decider()?;
    let mut best: Option<(NodeId, f64, u8)> = None;
    for (id, child) in tree.children(n) {
        if child.visits == 0 || child.dead {
            continue;
        }
        let mean = child.mean(agent);
        let action = child.action.unwrap_or(0);
        let better = match best {
            None => true,
            Some((_, m, a)) => mean > m || (mean == m && action < a),
        };
        if better {
            best = Some((id, mean, action));
        }
    }
    best.map(|(id, _, _)| id)
}

pub fn extract_plan(tree: &GameTree, scenario: &Scenario, rewards: &RewardPair) -> Result<PlanResult> {
    let mut n = greedy_child(tree, GameTree::ROOT)
        .ok_or_else(|| Error::RefuseToPlan("the search tree has no visited child".into()))?;
    while tree.node(n).kind != NodeKind::Terminal {
        match greedy_child(tree, n) {
            Some(c) => n = c,
            None => break,
        }
    }
    let (ego, opp) = tree.sequences(n);
    let actions = &scenario.actions;
    let ego_actions = actions.to_accels(&ego);
    let opp_actions = actions.to_accels(&opp);
    let mut completed_ego = ego_actions.clone();
    let mut completed_opp = opp_actions.clone();
    completed_ego.resize(scenario.horizon, 0.0);
    completed_opp.resize(scenario.horizon, 0.0);
    let x0 = tree.root().state;
    let trajectory = rollout_joint(&x0, &completed_ego, &completed_opp, scenario)?;
    let (re, ro) = gated_from_trajectory(&x0, &trajectory, &completed_ego, &completed_opp, rewards, scenario);
    Ok(PlanResult {
        ego_actions,
        opp_actions,
        completed_ego,
        completed_opp,
        trajectory,
        rewards: [re, ro],
        depth: tree.node(n).depth,
    })
}

/// Per-depth visit tallies of the most and second most visited node.
pub fn collect_stats(tree: &GameTree) -> SearchStats {
    let max_possible = 2 * tree.horizon();
    let mut top: Vec<(u64, u64, usize, u64)> = vec![(0, 0, 0, 0); max_possible + 1];
    let mut max_depth = 0;
    for node in tree.nodes() {
        if node.visits == 0 {
            continue;
        }
        max_depth = max_depth.max(node.depth);
        let slot = &mut top[node.depth];
        slot.2 += 1;
        slot.3 += node.visits;
        if node.visits > slot.0 {
            slot.1 = slot.0;
            slot.0 = node.visits;
        } else if node.visits > slot.1 {
            slot.1 = node.visits;
        }
    }
    let per_depth = (1..=max_depth)
        .map(|d| DepthVisits {
            depth: d,
            v_max: top[d].0,
            v_other: top[d].1,
            nodes: top[d].2,
            total_visits: top[d].3,
        })
        .collect();
    SearchStats {
        per_depth,
        max_depth,
        node_count: tree.len(),
        iterations: 0,
        curve: Vec::new(),
    }
}
