//! Property checks shared by the property suite and the acceptance runner.
#![allow(dead_code)]

use phmcts::baselines::{
    alternating_best_response, best_response_ego, best_response_opp, exhaustive_stackelberg, general_mcts,
    solve_stackelberg, AlternatingConfig, JointPayoff, ScenarioGame, DEFAULT_ENUMERATION_CAP,
};
use phmcts::inference::{likelihood, Belief, ObservationWindow, WindowTable, DEFAULT_SEQUENCE_CAP};
use phmcts::prediction::{
    confidence_weight, in_confidence_range, synthetic_predict, PredictedTrajectory, PredictionSet,
};
use phmcts::reward::{egoism_from_states, egoism_reward, social_reward, RewardPair, RewardParams};
use phmcts::scenario::{
    is_unsafe, make_synthetic_scenario, plan_unsafe, rollout_agent, rollout_joint, step_dynamics, ActionSet, Agent,
    AgentState, JointState, PathSpec, Scenario, SyntheticKnobs,
};
use phmcts::search::{search, GameTree, NodeKind, Planner, RolloutPolicy, SearchConfig};
use phmcts::simulator::{read_trace_csv, run_closed_loop, trace_rows, write_trace_csv, SimConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseError, TestRunner};

pub const CASES: u32 = 256;

pub fn config() -> Config {
    Config {
        cases: CASES,
        rng_seed: RngSeed::Fixed(0x5eed_cafe),
        failure_persistence: None,
        ..Config::default()
    }
}

/// Run `check` on `CASES` inputs drawn from `strategy`.
pub fn run<S, F>(strategy: S, check: F) -> Result<(), String>
where
    S: Strategy,
    F: Fn(S::Value) -> Result<(), TestCaseError>,
{
    TestRunner::new(config())
        .run(&strategy, check)
        .map_err(|e| e.to_string())
}

fn fail(msg: impl Into<String>) -> TestCaseError {
    TestCaseError::fail(msg.into())
}

// ---------------------------------------------------------------------------
// scenario

fn path() -> PathSpec {
    PathSpec {
        l_ref: 60.0,
        v_max: 10.0,
        conflict: [30.0, 34.0],
    }
}

pub fn dynamics_case() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.0..=60.0f64, 0.0..=10.0f64, -8.0..8.0f64, 0.01..1.5f64)
}

pub fn dynamics_clamped((s, v, a, dt): (f64, f64, f64, f64)) -> Result<(), TestCaseError> {
    let p = path();
    let x = step_dynamics(AgentState::new(s, v), a, dt, &p);
    prop_assert!((0.0..=p.v_max).contains(&x.v), "v = {}", x.v);
    prop_assert!((0.0..=p.l_ref).contains(&x.s), "s = {}", x.s);
    prop_assert!(x.s >= s);
    Ok(())
}

pub fn dynamics_monotone((s, v, a, dt): (f64, f64, f64, f64)) -> Result<(), TestCaseError> {
    let p = path();
    let lo = step_dynamics(AgentState::new(s, v), a, dt, &p);
    let hi = step_dynamics(AgentState::new(s, v), a + 0.5, dt, &p);
    prop_assert!(hi.s >= lo.s && hi.v >= lo.v);
    Ok(())
}

fn reference() -> Scenario {
    Scenario::reference()
}

pub fn sequences_case() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, usize)> {
    (1usize..=7).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..6, n),
            prop::collection::vec(0u8..6, n),
            0..=n,
        )
    })
}

pub fn rollout_prefix((ego, opp, cut): (Vec<u8>, Vec<u8>, usize)) -> Result<(), TestCaseError> {
    let s = reference();
    let ea = s.actions.to_accels(&ego);
    let oa = s.actions.to_accels(&opp);
    let full = rollout_joint(&s.init, &ea, &oa, &s).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(full.len(), ego.len());
    let prefix = rollout_joint(&s.init, &ea[..cut], &oa[..cut], &s).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(&full[..cut], &prefix[..]);
    Ok(())
}

pub fn unsafe_monotone((ego, opp, cut): (Vec<u8>, Vec<u8>, usize)) -> Result<(), TestCaseError> {
    let s = reference();
    let traj = rollout_joint(&s.init, &s.actions.to_accels(&ego), &s.actions.to_accels(&opp), &s)
        .map_err(|e| fail(e.to_string()))?;
    let cut = cut.max(1);
    if is_unsafe(&traj[..cut], &s) {
        prop_assert!(is_unsafe(&traj, &s));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reward

pub fn reward_case() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, f64, f64, f64)> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..6, n),
            prop::collection::vec(0u8..6, n),
            0.0..=1.0f64,
            0.1..3.0f64,
            0.1..3.0f64,
        )
    })
}

fn params(gamma: f64, tc: f64, te: f64) -> RewardParams {
    RewardParams {
        gamma,
        theta: [tc, te],
        ..RewardParams::default()
    }
}

pub fn reward_bounded((ego, opp, gamma, tc, te): (Vec<u8>, Vec<u8>, f64, f64, f64)) -> Result<(), TestCaseError> {
    let s = reference();
    let p = params(gamma, tc, te);
    let (ea, oa) = (s.actions.to_accels(&ego), s.actions.to_accels(&opp));
    let bound = p.max_reward(ego.len());
    for agent in [Agent::Ego, Agent::Opp] {
        let e = egoism_reward(&s.init, &ea, &oa, &p, agent, &s).map_err(|e| fail(e.to_string()))?;
        prop_assert!((0.0..=bound + 1e-12).contains(&e));
        let r = social_reward(&s.init, &ea, &oa, &p, agent, &s).map_err(|e| fail(e.to_string()))?;
        prop_assert!((0.0..=bound + 1e-12).contains(&r.total));
    }
    Ok(())
}

pub fn reward_affine_in_gamma((ego, opp, _, tc, te): (Vec<u8>, Vec<u8>, f64, f64, f64)) -> Result<(), TestCaseError> {
    let s = reference();
    let (ea, oa) = (s.actions.to_accels(&ego), s.actions.to_accels(&opp));
    let at = |g: f64| {
        social_reward(&s.init, &ea, &oa, &params(g, tc, te), Agent::Ego, &s)
            .map(|r| r.total)
            .map_err(|e| fail(e.to_string()))
    };
    let (g1, g2, g3) = (0.1, 0.35, 0.9);
    let (f1, f2, f3) = (at(g1)?, at(g2)?, at(g3)?);
    let slope_a = (f2 - f1) / (g2 - g1);
    let slope_b = (f3 - f2) / (g3 - g2);
    prop_assert!((slope_a - slope_b).abs() <= 1e-9 * (1.0 + slope_a.abs()));
    Ok(())
}

pub fn courtesy_symmetry((ego, opp, gamma, tc, te): (Vec<u8>, Vec<u8>, f64, f64, f64)) -> Result<(), TestCaseError> {
    let s = reference();
    let p = params(gamma, tc, te);
    let (ea, oa) = (s.actions.to_accels(&ego), s.actions.to_accels(&opp));
    let courtesy = social_reward(&s.init, &ea, &oa, &p, Agent::Ego, &s)
        .map_err(|e| fail(e.to_string()))?
        .courtesy;
    let opp_egoism = egoism_reward(&s.init, &ea, &oa, &p, Agent::Opp, &s).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(courtesy, opp_egoism);
    Ok(())
}

// ---------------------------------------------------------------------------
// prediction

#[derive(Debug, Clone)]
pub struct PredCase {
    pub trajectories: Vec<PredictedTrajectory>,
    pub extra: PredictedTrajectory,
    pub s: f64,
    pub t: usize,
    pub scale: f64,
}

fn trajectory(horizon: usize) -> impl Strategy<Value = PredictedTrajectory> {
    (
        0.01..1.0f64,
        prop::collection::vec(0.0..40.0f64, horizon),
        prop::collection::vec(0.01..4.0f64, horizon),
    )
        .prop_map(|(probability, points, variances)| PredictedTrajectory {
            probability,
            points,
            variances,
        })
}

pub fn prediction_case() -> impl Strategy<Value = PredCase> {
    (1usize..=5, 1usize..=4).prop_flat_map(|(h, k)| {
        (
            prop::collection::vec(trajectory(h), k),
            trajectory(h),
            0.0..40.0f64,
            1..=h,
            prop::sample::select(vec![0.25, 0.5, 2.0, 4.0]),
        )
            .prop_map(move |(mut trajectories, mut extra, s, t, scale)| {
                // Keep the raw probabilities summable to at most one, extra trajectory included.
                let share = 1.0 / (k + 1) as f64;
                trajectories.iter_mut().for_each(|tr| tr.probability *= share);
                extra.probability *= share;
                PredCase {
                    trajectories,
                    extra,
                    s,
                    t,
                    scale,
                }
            })
    })
}

fn near_point(c: &PredCase) -> f64 {
    // Half of the draws sit close to a predicted point so the range test sees both outcomes.
    if c.s < 20.0 {
        c.trajectories[0].points[c.t - 1] + (c.s - 10.0) * 0.1
    } else {
        c.s
    }
}

pub fn weight_brute_force(c: PredCase) -> Result<(), TestCaseError> {
    let s = near_point(&c);
    let set = PredictionSet::new(c.trajectories.clone(), 4.0).map_err(|e| fail(e.to_string()))?;
    let mut brute = 0.0;
    for tr in set.trajectories() {
        let d = s - tr.points[c.t - 1];
        if d * d / tr.variances[c.t - 1] <= set.rho() {
            brute += tr.probability;
        }
    }
    let w = confidence_weight(s, c.t, &set);
    prop_assert!((w - brute).abs() <= 1e-12, "{} vs {}", w, brute);
    prop_assert!((0.0..=1.0 + 1e-12).contains(&w));
    Ok(())
}

pub fn weight_monotone_under_adding(c: PredCase) -> Result<(), TestCaseError> {
    let s = near_point(&c);
    let raw = |trs: &[PredictedTrajectory]| -> Result<f64, TestCaseError> {
        let total: f64 = trs.iter().map(|t| t.probability).sum();
        let set = PredictionSet::new(trs.to_vec(), 4.0).map_err(|e| fail(e.to_string()))?;
        Ok(confidence_weight(s, c.t, &set) * total)
    };
    let before = raw(&c.trajectories)?;
    let mut more = c.trajectories.clone();
    more.push(c.extra.clone());
    let after = raw(&more)?;
    prop_assert!(after >= before - 1e-12, "{} < {}", after, before);
    Ok(())
}

pub fn range_scale_invariant(c: PredCase) -> Result<(), TestCaseError> {
    let s = near_point(&c);
    let tr = &c.trajectories[0];
    let scaled = PredictedTrajectory {
        probability: tr.probability,
        points: tr.points.iter().map(|y| s + c.scale * (y - s)).collect(),
        variances: tr.variances.iter().map(|v| c.scale * c.scale * v).collect(),
    };
    let a = in_confidence_range(tr, c.t, s, 4.0).map_err(|e| fail(e.to_string()))?;
    let b = in_confidence_range(&scaled, c.t, s, 4.0).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(a, b);
    Ok(())
}

// ---------------------------------------------------------------------------
// search

#[derive(Debug, Clone)]
pub struct SearchCase {
    pub scenario: Scenario,
    pub preds: PredictionSet,
    pub iterations: usize,
    pub seed: u64,
    pub gammas: (f64, f64),
}

pub fn search_case() -> impl Strategy<Value = SearchCase> {
    (
        any::<u64>(),
        2usize..=3,
        20usize..=300,
        0.0..=1.0f64,
        0.0..=1.0f64,
        any::<bool>(),
    )
        .prop_filter_map(
            "generator could not place the opponent",
            |(seed, horizon, iterations, ge, go, coarse)| {
                let actions = if coarse {
                    ActionSet::new(vec![-2.0, 0.0, 2.0]).ok()?
                } else {
                    ActionSet::standard()
                };
                let knobs = SyntheticKnobs {
                    horizon,
                    actions,
                    ..SyntheticKnobs::default()
                };
                let syn = make_synthetic_scenario(seed, &knobs).ok()?;
                let truth: Vec<f64> = syn.opp_ground_truth.iter().map(|x| x.s).collect();
                let preds = synthetic_predict(&truth, 0.4, 2, None, seed ^ 1).ok()?;
                let mut scenario = syn.scenario;
                scenario.rewards.ego.gamma = ge;
                scenario.rewards.opp.gamma = go;
                Some(SearchCase {
                    scenario,
                    preds,
                    iterations,
                    seed,
                    gammas: (ge, go),
                })
            },
        )
}

fn config_for(c: &SearchCase) -> SearchConfig {
    SearchConfig {
        iterations: c.iterations,
        seed: c.seed,
        stats_stride: 0,
        ..SearchConfig::default()
    }
}

pub fn tree_conservation(c: SearchCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let out = search(&s.init, Some(&c.preds), s, &s.rewards, &config_for(&c)).map_err(|e| fail(e.to_string()))?;
    let tree = &out.tree;
    prop_assert_eq!(tree.root().visits, c.iterations as u64);
    let r_max = [s.rewards.ego.max_reward(s.horizon), s.rewards.opp.max_reward(s.horizon)];
    for (id, node) in tree.nodes().iter().enumerate() {
        let child_sum: u64 = tree.children(id).map(|(_, ch)| ch.visits).sum();
        prop_assert!(
            node.visits >= child_sum,
            "node {} visits {} < {}",
            id,
            node.visits,
            child_sum
        );
        for (agent, &bound) in r_max.iter().enumerate() {
            let (qs, q) = (node.qs[agent], node.q[agent]);
            let cap = node.visits as f64 * bound * (1.0 + 1e-12);
            prop_assert!(0.0 <= qs && qs <= q + 1e-9 && q <= cap, "qs {} q {} cap {}", qs, q, cap);
        }
    }
    Ok(())
}

pub fn heuristic_off_reduction(c: SearchCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let off = SearchConfig {
        heuristic: false,
        rollout: RolloutPolicy::Uniform,
        ..config_for(&c)
    };
    let with_preds = search(&s.init, Some(&c.preds), s, &s.rewards, &off).map_err(|e| fail(e.to_string()))?;
    let general = search(&s.init, None, s, &s.rewards, &config_for(&c).general()).map_err(|e| fail(e.to_string()))?;
    prop_assert!(with_preds.tree == general.tree, "trees differ");
    prop_assert_eq!(with_preds.plan, general.plan);
    Ok(())
}

pub fn tree_safe_and_alternating(c: SearchCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let out = search(&s.init, Some(&c.preds), s, &s.rewards, &config_for(&c)).map_err(|e| fail(e.to_string()))?;
    let tree = &out.tree;
    for (id, node) in tree.nodes().iter().enumerate() {
        prop_assert_eq!(node.kind, NodeKind::at_depth(node.depth, s.horizon));
        if let Some(p) = node.parent {
            prop_assert_eq!(tree.node(p).depth + 1, node.depth);
        }
        let (ego, opp) = tree.sequences(id);
        prop_assert!(ego.len() == opp.len() || ego.len() == opp.len() + 1);
        let k = opp.len();
        let unsafe_prefix = plan_unsafe(&s.init, &s.actions.to_accels(&ego[..k]), &s.actions.to_accels(&opp), s);
        prop_assert!(!unsafe_prefix, "node {} stores an unsafe prefix", id);
    }
    Ok(())
}

pub fn unsafe_plans_score_zero((c, ego, opp): (SearchCase, Vec<u8>, Vec<u8>)) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let n = s.horizon;
    let na = s.actions.len() as u8;
    let ego: Vec<u8> = ego.iter().take(n).map(|a| a % na).collect();
    let opp: Vec<u8> = opp.iter().take(n).map(|a| a % na).collect();
    let planner =
        Planner::new(&s.init, Some(&c.preds), s, &s.rewards, &config_for(&c)).map_err(|e| fail(e.to_string()))?;
    let q = planner.evaluate(&ego, &opp);
    if plan_unsafe(&s.init, &s.actions.to_accels(&ego), &s.actions.to_accels(&opp), s) {
        prop_assert_eq!(q, [0.0, 0.0]);
    }
    Ok(())
}

pub fn plan_pair_case() -> impl Strategy<Value = (SearchCase, Vec<u8>, Vec<u8>)> {
    (
        search_case(),
        prop::collection::vec(0u8..6, 3),
        prop::collection::vec(0u8..6, 3),
    )
}

pub fn argmax_scale_invariant((c, k): (SearchCase, i32)) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let factor = 2f64.powi(k);
    let mut scaled = s.rewards;
    for p in [&mut scaled.ego, &mut scaled.opp] {
        p.theta = [p.theta[0] * factor, p.theta[1] * factor];
    }
    let a = search(&s.init, Some(&c.preds), s, &s.rewards, &config_for(&c)).map_err(|e| fail(e.to_string()))?;
    let b = search(&s.init, Some(&c.preds), s, &scaled, &config_for(&c)).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(&a.plan.ego_actions, &b.plan.ego_actions);
    prop_assert_eq!(&a.plan.opp_actions, &b.plan.opp_actions);
    let visits = |t: &GameTree| t.nodes().iter().map(|n| n.visits).collect::<Vec<_>>();
    prop_assert_eq!(visits(&a.tree), visits(&b.tree));
    Ok(())
}

pub fn scale_case() -> impl Strategy<Value = (SearchCase, i32)> {
    (search_case(), -2i32..=3)
}

// ---------------------------------------------------------------------------
// inference

#[derive(Debug, Clone)]
pub struct WindowCase {
    pub scenario: Scenario,
    pub ego: Vec<u8>,
    pub opp: Vec<u8>,
    pub gamma: f64,
}

/// Speeds stay strictly inside the limits over the window, so reconstruction is exact.
pub fn window_case() -> impl Strategy<Value = WindowCase> {
    (any::<u64>(), 1usize..=3, 0.0..=1.0f64, any::<bool>()).prop_flat_map(|(seed, r, gamma, far)| {
        (prop::collection::vec(0u8..3, r), prop::collection::vec(0u8..3, r)).prop_filter_map(
            "generator could not place the opponent",
            move |(ego, opp)| {
                let knobs = SyntheticKnobs {
                    horizon: 3,
                    actions: ActionSet::new(vec![-1.0, 0.0, 1.0]).ok()?,
                    ..SyntheticKnobs::default()
                };
                let mut scenario = make_synthetic_scenario(seed, &knobs).ok()?.scenario;
                if far {
                    scenario.init.ego.s = 0.0;
                    scenario.init.opp.s = 0.0;
                }
                Some(WindowCase {
                    scenario,
                    ego,
                    opp,
                    gamma,
                })
            },
        )
    })
}

fn window_states(s: &Scenario, ego: &[u8], opp: &[u8]) -> Vec<JointState> {
    let ea = s.actions.to_accels(ego);
    let oa = s.actions.to_accels(opp);
    let mut states = vec![s.init];
    states.extend(rollout_joint(&s.init, &ea, &oa, s).expect("equal lengths"));
    states
}

fn decode(mut i: usize, n: usize, r: usize) -> Vec<u8> {
    let mut out = vec![0u8; r];
    for k in (0..r).rev() {
        out[k] = (i % n) as u8;
        i /= n;
    }
    out
}

pub fn softmax_normalized(c: WindowCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let params = RewardParams::default();
    let n = s.actions.len();
    let r = c.ego.len();
    let mut total = 0.0;
    for j in 0..n.pow(r as u32) {
        let opp = decode(j, n, r);
        let window =
            ObservationWindow::from_states(&window_states(s, &c.ego, &opp), s).map_err(|e| fail(e.to_string()))?;
        prop_assert_eq!(&window.opp_actions, &opp);
        total += likelihood(&window, c.gamma, &params, s, DEFAULT_SEQUENCE_CAP).map_err(|e| fail(e.to_string()))?;
    }
    prop_assert!((total - 1.0).abs() <= 1e-9, "sum = {}", total);
    Ok(())
}

pub fn log_space_matches_direct(c: WindowCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let params = RewardParams::default();
    let window =
        ObservationWindow::from_states(&window_states(s, &c.ego, &c.opp), s).map_err(|e| fail(e.to_string()))?;
    let table = WindowTable::new(&window, &params, s, DEFAULT_SEQUENCE_CAP).map_err(|e| fail(e.to_string()))?;
    let rewards = table.rewards(c.gamma);
    let direct = rewards[table.observed()].exp() / rewards.iter().map(|x| x.exp()).sum::<f64>();
    let logged = likelihood(&window, c.gamma, &params, s, DEFAULT_SEQUENCE_CAP).map_err(|e| fail(e.to_string()))?;
    prop_assert!(
        (direct - logged).abs() <= 1e-9 * direct.abs(),
        "{} vs {}",
        direct,
        logged
    );
    Ok(())
}

/// Far from the conflict zone the ego's motion only shifts every opponent reward by the same
/// constant, which the softmax ignores.
pub fn softmax_shift_invariant(c: WindowCase) -> Result<(), TestCaseError> {
    let mut s = c.scenario.clone();
    s.init.ego.s = 0.0;
    s.init.opp.s = 0.0;
    let params = RewardParams::default();
    let other_ego: Vec<u8> = c.ego.iter().map(|a| 2 - a).collect();
    let lik = |ego: &[u8]| -> Result<f64, TestCaseError> {
        let w = ObservationWindow::from_states(&window_states(&s, ego, &c.opp), &s).map_err(|e| fail(e.to_string()))?;
        likelihood(&w, c.gamma, &params, &s, DEFAULT_SEQUENCE_CAP).map_err(|e| fail(e.to_string()))
    };
    let (a, b) = (lik(&c.ego)?, lik(&other_ego)?);
    prop_assert!((a - b).abs() <= 1e-9 * a, "{} vs {}", a, b);
    Ok(())
}

pub fn belief_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=25).prop_flat_map(|m| {
        (
            prop::collection::vec(0.0..1.0f64, m),
            prop::collection::vec(prop_oneof![Just(0.0), 1e-300..1.0f64], m),
        )
    })
}

pub fn belief_normalized((prior, lik): (Vec<f64>, Vec<f64>)) -> Result<(), TestCaseError> {
    let m = prior.len();
    let samples: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let mut weights = prior;
    weights[0] += 1e-3;
    let belief = Belief::new(samples, weights).map_err(|e| fail(e.to_string()))?;
    let post = belief.update(&lik).map_err(|e| fail(e.to_string()))?;
    let sum: f64 = post.weights().iter().sum();
    prop_assert!((sum - 1.0).abs() <= 1e-9, "sum = {}", sum);
    prop_assert!(post.weights().iter().all(|&w| w >= 0.0));
    let g = post.mean();
    prop_assert!((0.0..=1.0).contains(&g));
    Ok(())
}

// ---------------------------------------------------------------------------
// baselines

#[derive(Debug, Clone)]
pub struct GameCase {
    pub scenario: Scenario,
    pub i: usize,
    pub j: usize,
}

pub fn game_case() -> impl Strategy<Value = GameCase> {
    (any::<u64>(), 0.0..=1.0f64, 0.0..=1.0f64, any::<usize>(), any::<usize>()).prop_filter_map(
        "generator could not place the opponent",
        |(seed, ge, go, i, j)| {
            let knobs = SyntheticKnobs {
                horizon: 2,
                actions: ActionSet::new(vec![-2.0, 0.0, 2.0]).ok()?,
                ..SyntheticKnobs::default()
            };
            let mut scenario = make_synthetic_scenario(seed, &knobs).ok()?.scenario;
            scenario.rewards = RewardPair {
                ego: RewardParams::default().with_gamma(ge),
                opp: RewardParams::default().with_gamma(go),
            };
            Some(GameCase {
                scenario,
                i: i % 9,
                j: j % 9,
            })
        },
    )
}

pub fn oracle_dominates(c: GameCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let game = ScenarioGame::new(&s.init, s, &s.rewards).map_err(|e| fail(e.to_string()))?;
    let sol = solve_stackelberg(&game);
    for i in 0..game.sequence_count() {
        let (_, p) = best_response_opp(&game, i);
        prop_assert!(sol.payoff[0] >= p[0]);
    }
    Ok(())
}

pub fn best_response_monotone(c: GameCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let game = ScenarioGame::new(&s.init, s, &s.rewards).map_err(|e| fail(e.to_string()))?;
    let here = game.payoff(c.i, c.j);
    prop_assert!(best_response_ego(&game, c.j).1[0] >= here[0]);
    prop_assert!(best_response_opp(&game, c.i).1[1] >= here[1]);
    Ok(())
}

/// Agents that cannot reach the conflict zone each maximize their own egoism, and every solver
/// finds that.
pub fn decoupled_agreement(c: GameCase) -> Result<(), TestCaseError> {
    let mut s = c.scenario.clone();
    s.init.ego.s = 0.0;
    s.init.opp.s = 0.0;
    s.rewards = RewardPair::default();
    let best_own = |start: AgentState, path: &PathSpec| {
        (0..9)
            .map(|k| {
                let accels = s.actions.to_accels(&decode(k, 3, 2));
                egoism_from_states(
                    &accels,
                    &rollout_agent(start, &accels, s.dt, path),
                    &RewardParams::default(),
                )
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let expected = best_own(s.init.ego, &s.ego_path);
    let oracle =
        exhaustive_stackelberg(&s.init, &s, &s.rewards, DEFAULT_ENUMERATION_CAP).map_err(|e| fail(e.to_string()))?;
    let abr = alternating_best_response(&s.init, &s, &s.rewards, &AlternatingConfig::default())
        .map_err(|e| fail(e.to_string()))?;
    let cfg = SearchConfig {
        iterations: 20_000,
        stats_stride: 0,
        seed: c.i as u64,
        ..SearchConfig::default()
    };
    let mcts = general_mcts(&s.init, &s, &s.rewards, &cfg).map_err(|e| fail(e.to_string()))?;
    for (name, r) in [("oracle", oracle.rewards), ("abr", abr.rewards), ("mcts", mcts.rewards)] {
        prop_assert!(
            (r[0] - expected).abs() <= 1e-9,
            "{} ego reward {} vs {}",
            name,
            r[0],
            expected
        );
    }
    prop_assert!((oracle.rewards[1] - best_own(s.init.opp, &s.opp_path)).abs() <= 1e-9);
    Ok(())
}

// ---------------------------------------------------------------------------
// simulator

#[derive(Debug, Clone)]
pub struct SimCase {
    pub scenario: Scenario,
    pub config: SimConfig,
}

pub fn sim_case() -> impl Strategy<Value = SimCase> {
    (any::<u64>(), 1usize..=15, 10usize..=40, 0.0..=1.0f64, 0.0..=1.0f64).prop_filter_map(
        "generator could not place the opponent",
        |(seed, steps, iterations, ge, go)| {
            let knobs = SyntheticKnobs {
                horizon: 3,
                ..SyntheticKnobs::default()
            };
            let scenario = make_synthetic_scenario(seed, &knobs).ok()?.scenario;
            let mut config = SimConfig {
                duration: steps as f64 * 0.1,
                seed,
                ..SimConfig::default()
            };
            config.ego.gamma = ge;
            config.opp.gamma = go;
            config.search.iterations = iterations;
            Some(SimCase { scenario, config })
        },
    )
}

pub fn trace_replays_exactly(c: SimCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let trace = run_closed_loop(s, &c.config).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(trace.states.len(), trace.accels.len() + 1);
    for (k, a) in trace.accels.iter().enumerate() {
        let x = trace.states[k];
        let ego = step_dynamics(x.ego, a[0], trace.dt_sim, &s.ego_path);
        let opp = step_dynamics(x.opp, a[1], trace.dt_sim, &s.opp_path);
        let next = trace.states[k + 1];
        prop_assert!(ego.s.to_bits() == next.ego.s.to_bits() && ego.v.to_bits() == next.ego.v.to_bits());
        prop_assert!(opp.s.to_bits() == next.opp.s.to_bits() && opp.v.to_bits() == next.opp.v.to_bits());
        let a_max = s.actions.as_slice().iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let dt = trace.dt_sim;
        for (p, q, path) in [(x.ego, next.ego, &s.ego_path), (x.opp, next.opp, &s.opp_path)] {
            prop_assert!(q.s - p.s <= path.v_max * dt + 0.5 * a_max * dt * dt + 1e-12);
        }
    }
    Ok(())
}

pub fn trace_deterministic_and_round_trips(c: SimCase) -> Result<(), TestCaseError> {
    let s = &c.scenario;
    let a = run_closed_loop(s, &c.config).map_err(|e| fail(e.to_string()))?;
    let b = run_closed_loop(s, &c.config).map_err(|e| fail(e.to_string()))?;
    prop_assert!(a == b, "traces differ under the same seed");
    let mut buf = Vec::new();
    write_trace_csv(&a, &mut buf).map_err(|e| fail(e.to_string()))?;
    let rows = read_trace_csv(&buf[..]).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(rows, trace_rows(&a));
    Ok(())
}
