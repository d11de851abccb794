//! Prediction-heuristic Monte Carlo tree search over the Stackelberg game tree.
//!
//! Each iteration selects a leaf with UCB over the confidence-weighted searching rewards,
//! completes the partial plan with a roll-out, gates the outcome through the safety predicate
//! and back-propagates both the raw and the confidence-weighted rewards. Plans are extracted
//! from the raw (unweighted) averages.

mod extract;
mod rollout;
mod tree;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use extract::{collect_stats, extract_plan, CurveSample, DepthVisits, PlanResult, SearchStats};
pub use tree::{GameNode, GameTree, NodeId, NodeKind};

use crate::error::{Error, Result};
use crate::prediction::{confidence_weight, PredictionSet};
use crate::reward::{gated_from_trajectory, RewardPair};
use crate::rng::{rng_from_seed, PlannerRng};
use crate::scenario::{rollout_joint, state_unsafe, step_dynamics, step_unsafe, JointState, Scenario};

/// Roll-out policy used to complete partial plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutPolicy {
    /// Jerk-limited random actions, with opponent actions kept inside the confidence ranges of
    /// one predicted trajectory while the heuristic is enabled.
    Heuristic,
    /// Jerk-limited random actions only.
    Uniform,
}

/// Default exploration constant, applied to rewards normalized by their upper bound.
pub const DEFAULT_EXPLORATION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub iterations: usize,
    pub exploration_c: f64,
    pub seed: u64,
    #[serde(with = "on_off")]
    pub heuristic: bool,
    pub rollout: RolloutPolicy,
    /// Sample the reward-vs-iteration curve every this many iterations (0 disables it).
    pub stats_stride: usize,
    /// Apply the confidence weight at opponent layers too (ablation).
    pub weight_all_nodes: bool,
    /// Accelerations currently applied by (ego, opponent); the jerk bound of the first
    /// roll-out action below the root is measured against these.
    pub prev_accel: [f64; 2],
    /// Attempts per roll-out step to keep the opponent inside its governing range.
    pub retry_budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 30_000,
            exploration_c: DEFAULT_EXPLORATION,
            seed: 0,
            heuristic: true,
            rollout: RolloutPolicy::Heuristic,
            stats_stride: 100,
            weight_all_nodes: false,
            prev_accel: [0.0, 0.0],
            retry_budget: 16,
        }
    }
}

impl SearchConfig {
    /// The configuration of the plain MCTS baseline: no confidence weighting, uniform roll-outs.
    pub fn general(&self) -> SearchConfig {
        SearchConfig {
            heuristic: false,
            rollout: RolloutPolicy::Uniform,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::schema("iterations", "must be at least 1"));
        }
        if !(self.exploration_c >= 0.0 && self.exploration_c.is_finite()) {
            return Err(Error::schema("exploration_c", "must be non-negative"));
        }
        Ok(())
    }
}

mod on_off {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if *v { "on" } else { "off" })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bool(bool),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Bool(b) => Ok(b),
            Raw::Str(s) => match s.as_str() {
                "on" => Ok(true),
                "off" => Ok(false),
                other => Err(de::Error::custom(format!("expected on|off, found {other}"))),
            },
        }
    }
}

/// Result of one search: the built tree, its statistics and the extracted plan.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub tree: GameTree,
    pub stats: SearchStats,
    pub plan: PlanResult,
}

/// Run the full search from `x0`.
pub fn search(
    x0: &JointState,
    preds: Option<&PredictionSet>,
    scenario: &Scenario,
    rewards: &RewardPair,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let mut planner = Planner::new(x0, preds, scenario, rewards, config)?;
    planner.run()?;
    planner.finish()
}

/// Incremental search state. One planner owns and mutates one tree.
pub struct Planner<'a> {
    scenario: &'a Scenario,
    preds: Option<&'a PredictionSet>,
    rewards: RewardPair,
    config: SearchConfig,
    rng: PlannerRng,
    tree: GameTree,
    /// 1 / R_max per agent.
    scale: [f64; 2],
    iterations_done: usize,
    curve: Vec<CurveSample>,
}

impl<'a> Planner<'a> {
    pub fn new(
        x0: &JointState,
        preds: Option<&'a PredictionSet>,
        scenario: &'a Scenario,
        rewards: &RewardPair,
        config: &SearchConfig,
    ) -> Result<Self> {
        config.validate()?;
        let x0 = JointState { t: 0, ..*x0 };
        if state_unsafe(&x0, scenario) {
            return Err(Error::RefuseToPlan(
                "initial state violates the safety constraints".into(),
            ));
        }
        if config.heuristic {
            match preds {
                None => {
                    return Err(Error::invalid("heuristic search requires predictions"));
                }
                Some(p) if p.horizon() != scenario.horizon => {
                    return Err(Error::invalid(format!(
                        "prediction horizon {} differs from planning horizon {}",
                        p.horizon(),
                        scenario.horizon
                    )));
                }
                _ => {}
            }
        }
        let scale = [rewards.ego, rewards.opp].map(|p| {
            let m = p.max_reward(scenario.horizon);
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        });
        Ok(Planner {
            scenario,
            preds: if config.heuristic { preds } else { None },
            rewards: *rewards,
            config: config.clone(),
            rng: rng_from_seed(config.seed),
            tree: GameTree::new(x0, scenario.horizon, scenario.actions.len(), 1.0),
            scale,
            iterations_done: 0,
            curve: Vec::new(),
        })
    }

    pub fn tree(&self) -> &GameTree {
        &self.tree
    }

    pub fn iterations_done(&self) -> usize {
        self.iterations_done
    }

    pub fn run(&mut self) -> Result<()> {
        while self.iterations_done < self.config.iterations {
            self.iterate()?;
            let stride = self.config.stats_stride;
            if stride > 0
                && (self.iterations_done.is_multiple_of(stride) || self.iterations_done == self.config.iterations)
            {
                let plan = extract_plan(&self.tree, self.scenario, &self.rewards)?;
                self.curve.push(CurveSample {
                    iteration: self.iterations_done,
                    ego_reward: plan.rewards[0],
                    opp_reward: plan.rewards[1],
                });
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<SearchOutcome> {
        let plan = extract_plan(&self.tree, self.scenario, &self.rewards)?;
        let mut stats = collect_stats(&self.tree);
        stats.curve = self.curve;
        stats.iterations = self.iterations_done;
        Ok(SearchOutcome {
            tree: self.tree,
            stats,
            plan,
        })
    }

    /// One select / roll-out / evaluate / back-propagate cycle.
    pub fn iterate(&mut self) -> Result<()> {
        let leaf = self.selection()?;
        let (ego, opp) = if self.tree.node(leaf).kind == NodeKind::Terminal {
            self.tree.sequences(leaf)
        } else {
            self.rollout(leaf)
        };
        let q = self.evaluate(&ego, &opp);
        self.backpropagate(leaf, q);
        self.iterations_done += 1;
        Ok(())
    }

    /// Safety-gated social rewards of a complete plan.
    pub fn evaluate(&self, ego: &[u8], opp: &[u8]) -> [f64; 2] {
        let actions = &self.scenario.actions;
        let ea = actions.to_accels(ego);
        let oa = actions.to_accels(opp);
        let x0 = self.tree.root().state;
        let traj = rollout_joint(&x0, &ea, &oa, self.scenario).expect("complete plans have equal length");
        let (e, o) = gated_from_trajectory(&x0, &traj, &ea, &oa, &self.rewards, self.scenario);
        [e, o]
    }

    /// Descend from the root to the node to evaluate next, expanding one untried action at the
    /// first node that is not fully expanded.
    pub fn selection(&mut self) -> Result<NodeId> {
        'restart: loop {
            if self.tree.root().dead {
                return Err(Error::RefuseToPlan(
                    "every action from the current state leads to an unsafe state".into(),
                ));
            }
            let mut n = GameTree::ROOT;
            loop {
                if self.tree.node(n).kind == NodeKind::Terminal {
                    return Ok(n);
                }
                if let Some(child) = self.expand(n) {
                    return Ok(child);
                }
                match self.best_child(n) {
                    Some(c) => n = c,
                    None => {
                        self.tree.node_mut(n).dead = true;
                        continue 'restart;
                    }
                }
            }
        }
    }

    /// Try untried actions of `n` in random order until one yields a safe child.
    fn expand(&mut self, n: NodeId) -> Option<NodeId> {
        while !self.tree.node(n).untried.is_empty() {
            let len = self.tree.node(n).untried.len();
            let k = self.rng.random_range(0..len);
            let action = self.tree.node_mut(n).untried.swap_remove(k);
            let node = self.tree.node(n);
            let state = match node.kind {
                NodeKind::Ego => node.state,
                NodeKind::Opponent => {
                    let ego_action = node.action.expect("opponent nodes have a parent action");
                    let x = node.state;
                    let s = self.scenario;
                    let a_ego = s.actions.get(usize::from(ego_action));
                    let a_opp = s.actions.get(usize::from(action));
                    if step_unsafe(&x, a_ego, a_opp, s) {
                        continue;
                    }
                    JointState {
                        ego: step_dynamics(x.ego, a_ego, s.dt, &s.ego_path),
                        opp: step_dynamics(x.opp, a_opp, s.dt, &s.opp_path),
                        t: x.t + 1,
                    }
                }
                NodeKind::Terminal => unreachable!("terminal nodes have no untried actions"),
            };
            let w = self.conf_weight_of(&state);
            return Some(self.tree.add_child(n, action, state, w));
        }
        None
    }

    fn conf_weight_of(&self, state: &JointState) -> f64 {
        match self.preds {
            Some(p) if state.t >= 1 => confidence_weight(state.opp.s, state.t, p),
            _ => 1.0,
        }
    }

    /// UCB choice among live children using the searching reward of the deciding agent.
    fn best_child(&self, n: NodeId) -> Option<NodeId> {
        let node = self.tree.node(n);
        let agent = node.kind.decider()?;
        let ln_parent = (node.visits.max(1) as f64).ln();
        let c = self.config.exploration_c;
        let mut best: Option<(NodeId, f64, u8)> = None;
        for (id, child) in self.tree.children(n) {
            if child.dead || child.visits == 0 {
                continue;
            }
            let visits = child.visits as f64;
            let score = child.qs[agent] / visits * self.scale[agent] + c * (2.0 * ln_parent / visits).sqrt();
            let action = child.action.unwrap_or(0);
            let better = match best {
                None => true,
                Some((_, s, a)) => score > s || (score == s && action < a),
            };
            if better {
                best = Some((id, score, action));
            }
        }
        best.map(|(id, _, _)| id)
    }

    /// Add the outcome of one roll-out to every node from `leaf` up to the root.
    pub fn backpropagate(&mut self, leaf: NodeId, q: [f64; 2]) {
        let weighted = self.config.heuristic;
        let all = self.config.weight_all_nodes;
        let mut cur = Some(leaf);
        while let Some(id) = cur {
            let node = self.tree.node_mut(id);
            node.visits += 1;
            let w = if weighted && (all || node.kind.is_ego_layer()) {
                node.conf_weight
            } else {
                1.0
            };
            for (k, &qk) in q.iter().enumerate() {
                node.q[k] += qk;
                node.qs[k] += w * qk;
            }
            cur = node.parent;
        }
    }
}
