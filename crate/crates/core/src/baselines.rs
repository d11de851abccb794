//! Comparison solvers: plain MCTS, alternating best response and the exhaustive Stackelberg
//! solution of the bilevel problem.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prediction::PredictionSet;
use crate::reward::{blend, egoism_from_states, RewardPair};
use crate::rng::rng_from_seed;
use crate::scenario::{pair_unsafe, rollout_agent, state_unsafe, swept_rollout, AgentState, JointState, Scenario};
use crate::search::{search, SearchConfig};

/// Default cap on `|A|^(2N)` for exhaustive enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOutcome {
    pub ego_actions: Vec<f64>,
    pub opp_actions: Vec<f64>,
    /// Safety-gated social rewards `[ego, opp]`.
    pub rewards: [f64; 2],
    /// Iterations (tree solvers) or payoff evaluations (enumerating solvers).
    pub work: u64,
    pub wall_time_s: f64,
    pub converged: bool,
    /// Deepest visited tree layer, for tree solvers.
    pub max_depth: Option<usize>,
}

/// A finite two-player game over action sequences, indexed lexicographically.
pub trait JointPayoff {
    /// Number of sequences available to each agent.
    fn sequence_count(&self) -> usize;
    /// `[ego, opp]` payoff of the sequence pair.
    fn payoff(&self, ego: usize, opp: usize) -> [f64; 2];
}

/// Decode a lexicographic sequence index (first action most significant).
pub fn decode_sequence(mut index: usize, n_actions: usize, horizon: usize) -> Vec<u8> {
    let mut out = vec![0u8; horizon];
    for slot in out.iter_mut().rev() {
        *slot = (index % n_actions) as u8;
        index /= n_actions;
    }
    out
}

struct AgentTable {
    accels: Vec<Vec<f64>>,
    states: Vec<Vec<AgentState>>,
    /// Sub-sampled states for the safety check.
    swept: Vec<Vec<AgentState>>,
    /// Egoism of each sequence under the ego's and the opponent's parameters.
    egoism: Vec<[f64; 2]>,
}

/// The driving game: both agents' sequences rolled out independently, joined by the safety
/// predicate and scored with each agent's social reward.
pub struct ScenarioGame<'a> {
    scenario: &'a Scenario,
    rewards: RewardPair,
    ego: AgentTable,
    opp: AgentTable,
}

impl<'a> ScenarioGame<'a> {
    pub fn new(x0: &JointState, scenario: &'a Scenario, rewards: &RewardPair) -> Result<Self> {
        let n = scenario.actions.len() as u64;
        let count = n
            .checked_pow(scenario.horizon as u32)
            .filter(|&c| c <= 1 << 24)
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "{n}^{} sequences per agent are too many to tabulate",
                    scenario.horizon
                ))
            })? as usize;
        let table = |start: AgentState, path| {
            let mut t = AgentTable {
                accels: Vec::with_capacity(count),
                states: Vec::with_capacity(count),
                swept: Vec::with_capacity(count),
                egoism: Vec::with_capacity(count),
            };
            for i in 0..count {
                let seq = decode_sequence(i, scenario.actions.len(), scenario.horizon);
                let accels = scenario.actions.to_accels(&seq);
                let states = rollout_agent(start, &accels, scenario.dt, path);
                t.egoism.push([
                    egoism_from_states(&accels, &states, &rewards.ego),
                    egoism_from_states(&accels, &states, &rewards.opp),
                ]);
                t.swept.push(swept_rollout(start, &accels, scenario.dt, path));
                t.accels.push(accels);
                t.states.push(states);
            }
            t
        };
        Ok(ScenarioGame {
            scenario,
            rewards: *rewards,
            ego: table(x0.ego, &scenario.ego_path),
            opp: table(x0.opp, &scenario.opp_path),
        })
    }

    pub fn ego_accels(&self, i: usize) -> &[f64] {
        &self.ego.accels[i]
    }

    pub fn opp_accels(&self, j: usize) -> &[f64] {
        &self.opp.accels[j]
    }
}

impl JointPayoff for ScenarioGame<'_> {
    fn sequence_count(&self) -> usize {
        self.ego.accels.len()
    }

    fn payoff(&self, ego: usize, opp: usize) -> [f64; 2] {
        if pair_unsafe(&self.ego.swept[ego], &self.opp.swept[opp], self.scenario) {
            return [0.0, 0.0];
        }
        let fe = self.ego.egoism[ego];
        let fo = self.opp.egoism[opp];
        [
            blend(self.rewards.ego.gamma, fe[0], fo[0]),
            blend(self.rewards.opp.gamma, fo[1], fe[1]),
        ]
    }
}

/// Solution of the bilevel problem on an abstract game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackelbergSolution {
    pub ego: usize,
    pub opp: usize,
    pub payoff: [f64; 2],
    pub evaluations: u64,
}

/// The opponent's best response to a fixed ego sequence; ties to the lowest index.
pub fn best_response_opp<G: JointPayoff + ?Sized>(game: &G, ego: usize) -> (usize, [f64; 2]) {
    let mut best = (0, game.payoff(ego, 0));
    for j in 1..game.sequence_count() {
        let p = game.payoff(ego, j);
        if p[1] > best.1[1] {
            best = (j, p);
        }
    }
    best
}

/// The ego's best response to a fixed opponent sequence; ties to the lowest index.
pub fn best_response_ego<G: JointPayoff + ?Sized>(game: &G, opp: usize) -> (usize, [f64; 2]) {
    let mut best = (0, game.payoff(0, opp));
    for i in 1..game.sequence_count() {
        let p = game.payoff(i, opp);
        if p[0] > best.1[0] {
            best = (i, p);
        }
    }
    best
}

/// Enumerate every leader sequence, let the follower best-respond, keep the leader's best.
pub fn solve_stackelberg<G: JointPayoff + ?Sized>(game: &G) -> StackelbergSolution {
    let n = game.sequence_count();
    let mut best: Option<StackelbergSolution> = None;
    for i in 0..n {
        let (j, p) = best_response_opp(game, i);
        if best.is_none_or(|b| p[0] > b.payoff[0]) {
            best = Some(StackelbergSolution {
                ego: i,
                opp: j,
                payoff: p,
                evaluations: 0,
            });
        }
    }
    let mut sol = best.expect("at least one sequence");
    sol.evaluations = (n as u64) * (n as u64);
    sol
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlternatingResult {
    pub ego: usize,
    pub opp: usize,
    pub rounds: usize,
    pub converged: bool,
    pub evaluations: u64,
}

/// Alternating best response from `init`: the ego, then the opponent, replaces its sequence by
/// an exhaustive best response to the other's current one. A switch happens only on strict
/// improvement. Stops after a round without change (converged), on a revisited round state
/// (cycle), or after `max_rounds`.
pub fn alternate<G: JointPayoff + ?Sized>(game: &G, init: (usize, usize), max_rounds: usize) -> AlternatingResult {
    let n = game.sequence_count() as u64;
    let (mut ego, mut opp) = init;
    let mut seen = HashSet::new();
    seen.insert((ego, opp));
    let mut evaluations = 0;
    for round in 0..max_rounds {
        let mut changed = false;
        let (bi, p) = best_response_ego(game, opp);
        evaluations += n;
        if p[0] > game.payoff(ego, opp)[0] {
            ego = bi;
            changed = true;
        }
        let (bj, p) = best_response_opp(game, ego);
        evaluations += n;
        if p[1] > game.payoff(ego, opp)[1] {
            opp = bj;
            changed = true;
        }
        if !changed {
            return AlternatingResult {
                ego,
                opp,
                rounds: round + 1,
                converged: true,
                evaluations,
            };
        }
        if !seen.insert((ego, opp)) {
            return AlternatingResult {
                ego,
                opp,
                rounds: round + 1,
                converged: false,
                evaluations,
            };
        }
    }
    AlternatingResult {
        ego,
        opp,
        rounds: max_rounds,
        converged: false,
        evaluations,
    }
}

fn check_start(x0: &JointState, scenario: &Scenario) -> Result<()> {
    scenario.validate()?;
    if state_unsafe(x0, scenario) {
        return Err(Error::RefuseToPlan(
            "initial state violates the safety constraints".into(),
        ));
    }
    Ok(())
}

/// Exhaustive solution of the leader-follower problem with the ego as leader.
pub fn exhaustive_stackelberg(
    x0: &JointState,
    scenario: &Scenario,
    rewards: &RewardPair,
    cap: u64,
) -> Result<SolverOutcome> {
    check_start(x0, scenario)?;
    let n = scenario.actions.len() as u64;
    let total = n.checked_pow(2 * scenario.horizon as u32);
    if total.is_none_or(|t| t > cap) {
        return Err(Error::Infeasible(format!(
            "{n}^{} joint sequences exceed the enumeration cap {cap}",
            2 * scenario.horizon
        )));
    }
    let start = Instant::now();
    let game = ScenarioGame::new(x0, scenario, rewards)?;
    let sol = solve_stackelberg(&game);
    Ok(SolverOutcome {
        ego_actions: game.ego_accels(sol.ego).to_vec(),
        opp_actions: game.opp_accels(sol.opp).to_vec(),
        rewards: sol.payoff,
        work: sol.evaluations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: true,
        max_depth: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlternatingConfig {
    pub seed: u64,
    pub max_rounds: usize,
}

impl Default for AlternatingConfig {
    fn default() -> Self {
        AlternatingConfig {
            seed: 0,
            max_rounds: 50,
        }
    }
}

/// Alternating best response from a random initialization.
pub fn alternating_best_response(
    x0: &JointState,
    scenario: &Scenario,
    rewards: &RewardPair,
    config: &AlternatingConfig,
) -> Result<SolverOutcome> {
    check_start(x0, scenario)?;
    let start = Instant::now();
    let game = ScenarioGame::new(x0, scenario, rewards)?;
    let mut rng = rng_from_seed(config.seed);
    let n = game.sequence_count();
    let init = (rng.random_range(0..n), rng.random_range(0..n));
    let res = alternate(&game, init, config.max_rounds);
    Ok(SolverOutcome {
        ego_actions: game.ego_accels(res.ego).to_vec(),
        opp_actions: game.opp_accels(res.opp).to_vec(),
        rewards: game.payoff(res.ego, res.opp),
        work: res.evaluations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: res.converged,
        max_depth: None,
    })
}

fn tree_outcome(
    x0: &JointState,
    preds: Option<&PredictionSet>,
    scenario: &Scenario,
    rewards: &RewardPair,
    config: &SearchConfig,
) -> Result<SolverOutcome> {
    let start = Instant::now();
    let out = search(x0, preds, scenario, rewards, config)?;
    Ok(SolverOutcome {
        ego_actions: out.plan.completed_ego,
        opp_actions: out.plan.completed_opp,
        rewards: out.plan.rewards,
        work: out.stats.iterations as u64,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: true,
        max_depth: Some(out.stats.max_depth),
    })
}

/// MCTS without the prediction heuristic: no confidence weighting, uniform roll-outs.
pub fn general_mcts(
    x0: &JointState,
    scenario: &Scenario,
    rewards: &RewardPair,
    config: &SearchConfig,
) -> Result<SolverOutcome> {
    tree_outcome(x0, None, scenario, rewards, &config.general())
}

/// The prediction-heuristic search packaged as a solver.
pub fn proposed_mcts(
    x0: &JointState,
    preds: &PredictionSet,
    scenario: &Scenario,
    rewards: &RewardPair,
    config: &SearchConfig,
) -> Result<SolverOutcome> {
    tree_outcome(x0, Some(preds), scenario, rewards, config)
}
