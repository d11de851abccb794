//! Closed-loop two-agent simulation with both agents driven by the planner.
//!
//! Every replan each agent searches from the current joint state and applies the first planned
//! acceleration, held until the next replan. The ego models the opponent with the current
//! courtesy estimate; the opponent knows the ego's parameters.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{BeliefRecord, InferenceConfig, OnlineEstimator};
use crate::prediction::{synthetic_predict, PredictionSet};
use crate::reward::{egoism_from_states, RewardPair, RewardParams};
use crate::rng::derive_seed;
use crate::scenario::{
    intent_trajectory, passed_conflict, rollout_agent, state_unsafe, step_dynamics, Agent, AgentState, JointState,
    PathSpec, Scenario, VehicleGeometry,
};
use crate::search::{search, PlanResult, SearchConfig};

/// Where the ground truth behind each agent's synthetic predictions comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    /// The other agent's scripted speed-tracking intent, regenerated from the current state.
    Intent,
    /// The other agent's most recent plan, replayed from the current state.
    LastPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub source: PredictionSource,
    /// Standard deviation of the position noise (m).
    pub sigma: f64,
    /// Predicted trajectories per prediction set.
    pub k: usize,
    /// Intent speed as a fraction of the path speed limit.
    pub intent_speed_fraction: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            source: PredictionSource::Intent,
            sigma: 0.4,
            k: 1,
            intent_speed_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_sim: f64,
    /// Simulated time (s).
    pub duration: f64,
    pub ego: RewardParams,
    pub opp: RewardParams,
    /// Sim steps between replans.
    pub replan_stride: usize,
    /// Estimate the opponent's courtesy online; when off the ego uses the true value.
    pub inference: bool,
    /// Let the opponent estimate the ego's courtesy too instead of knowing it.
    pub symmetric_inference: bool,
    pub inference_config: InferenceConfig,
    /// Sim steps between belief updates; `None` updates once per planning step. Windows always
    /// span whole planning steps.
    pub inference_stride: Option<usize>,
    pub prediction: PredictionConfig,
    pub search: SearchConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_sim: 0.1,
            duration: 10.0,
            ego: RewardParams::default(),
            opp: RewardParams::default(),
            replan_stride: 1,
            inference: true,
            symmetric_inference: false,
            inference_config: InferenceConfig::default(),
            inference_stride: None,
            prediction: PredictionConfig::default(),
            search: SearchConfig {
                iterations: 3000,
                stats_stride: 0,
                ..SearchConfig::default()
            },
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Sim steps between belief updates.
    pub fn update_stride(&self, scenario: &Scenario) -> Result<usize> {
        Ok(match self.inference_stride {
            Some(n) => n,
            None => self.steps_per_plan(scenario)?,
        })
    }

    /// Sim steps per planning step.
    pub fn steps_per_plan(&self, scenario: &Scenario) -> Result<usize> {
        let ratio = scenario.dt / self.dt_sim;
        let rounded = ratio.round();
        if self.dt_sim.is_nan() || self.dt_sim <= 0.0 || rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
            return Err(Error::schema("dt_sim", "must divide the planning step"));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        self.steps_per_plan(scenario)?;
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::schema("duration", "must be finite and non-negative"));
        }
        if self.replan_stride == 0 {
            return Err(Error::schema("replan_stride", "must be at least 1"));
        }
        if self.inference_stride == Some(0) {
            return Err(Error::schema("inference_stride", "must be at least 1"));
        }
        if self.prediction.sigma.is_nan() || self.prediction.sigma < 0.0 || self.prediction.k == 0 {
            return Err(Error::schema("prediction", "needs sigma >= 0 and k >= 1"));
        }
        self.ego.validate("ego")?;
        self.opp.validate("opp")?;
        self.inference_config.validate()?;
        self.search.validate()
    }
}

/// One agent's plan expressed in its own frame: `own` is the planning agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub own_actions: Vec<f64>,
    pub other_actions: Vec<f64>,
    pub own_positions: Vec<f64>,
    pub other_positions: Vec<f64>,
    pub rewards: [f64; 2],
    pub depth: usize,
}

impl From<&PlanResult> for PlanSummary {
    fn from(p: &PlanResult) -> Self {
        PlanSummary {
            own_actions: p.completed_ego.clone(),
            other_actions: p.completed_opp.clone(),
            own_positions: p.trajectory.iter().map(|x| x.ego.s).collect(),
            other_positions: p.trajectory.iter().map(|x| x.opp.s).collect(),
            rewards: p.rewards,
            depth: p.depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanRecord {
    pub step: usize,
    pub time: f64,
    pub gamma_hat: f64,
    pub ego_plan: PlanSummary,
    pub opp_plan: PlanSummary,
    /// Most likely predicted opponent positions handed to the ego planner.
    pub opp_prediction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub dt_sim: f64,
    pub steps_per_plan: usize,
    /// Sim steps between belief updates.
    pub inference_stride: usize,
    /// States at every sim step, starting with the initial one. Empty for zero duration.
    pub states: Vec<JointState>,
    /// `[ego, opp]` acceleration applied from `states[k]` to `states[k + 1]`.
    pub accels: Vec<[f64; 2]>,
    /// Courtesy estimate in force at each state.
    pub gamma_hat: Vec<f64>,
    pub replans: Vec<ReplanRecord>,
    pub beliefs: Vec<BeliefRecord>,
    /// The opponent's true courtesy.
    pub gamma_true: f64,
    pub failure: Option<String>,
}

impl SimTrace {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt_sim
    }
}

fn predictions_for(
    config: &SimConfig,
    scenario: &Scenario,
    other_state: AgentState,
    other_accel: f64,
    other_plan: Option<&[f64]>,
    seed: u64,
) -> Result<PredictionSet> {
    let path = scenario.path(Agent::Opp);
    let truth: Vec<f64> = match (config.prediction.source, other_plan) {
        (PredictionSource::LastPlan, Some(plan)) => rollout_agent(other_state, plan, scenario.dt, path)
            .iter()
            .map(|x| x.s)
            .collect(),
        (PredictionSource::LastPlan, None) => {
            rollout_agent(other_state, &vec![0.0; scenario.horizon], scenario.dt, path)
                .iter()
                .map(|x| x.s)
                .collect()
        }
        (PredictionSource::Intent, _) => {
            let v_des = config.prediction.intent_speed_fraction * path.v_max;
            intent_trajectory(other_state, v_des, other_accel, scenario, Agent::Opp)
                .1
                .iter()
                .map(|x| x.s)
                .collect()
        }
    };
    synthetic_predict(&truth, config.prediction.sigma, config.prediction.k, None, seed)
}

/// Drive both agents with the planner until `duration`, until both have left the conflict
/// zone, or until a planner refuses.
pub fn run_closed_loop(scenario: &Scenario, config: &SimConfig) -> Result<SimTrace> {
    scenario.validate()?;
    config.validate(scenario)?;
    let ratio = config.steps_per_plan(scenario)?;
    let mut trace = SimTrace {
        dt_sim: config.dt_sim,
        steps_per_plan: ratio,
        inference_stride: config.update_stride(scenario)?,
        states: Vec::new(),
        accels: Vec::new(),
        gamma_hat: Vec::new(),
        replans: Vec::new(),
        beliefs: Vec::new(),
        gamma_true: config.opp.gamma,
        failure: None,
    };
    let total = (config.duration / config.dt_sim).round() as usize;
    if total == 0 {
        return Ok(trace);
    }
    if state_unsafe(&scenario.init, scenario) {
        return Err(Error::RefuseToPlan(
            "initial state violates the safety constraints".into(),
        ));
    }
    let swapped = scenario.swapped();
    let stride = trace.inference_stride;
    let mut ego_est = OnlineEstimator::new(config.opp, config.inference_config)?.with_cadence(ratio, stride)?;
    let mut opp_est = OnlineEstimator::new(config.ego, config.inference_config)?.with_cadence(ratio, stride)?;

    let mut x = JointState { t: 0, ..scenario.init };
    let mut accel = [0.0f64; 2];
    let mut last_plans: [Option<Vec<f64>>; 2] = [None, None];
    trace.states.push(x);
    trace
        .gamma_hat
        .push(current_gamma(config, &ego_est, config.opp.gamma, true));
    if config.inference {
        observe(
            &mut ego_est,
            &mut opp_est,
            config,
            0.0,
            x,
            scenario,
            &swapped,
            &mut trace,
        )?;
    }

    for k in 0..total {
        if passed_conflict(&x.ego, &scenario.ego_path, &scenario.vehicle)
            && passed_conflict(&x.opp, &scenario.opp_path, &scenario.vehicle)
        {
            break;
        }
        if k % config.replan_stride == 0 {
            match replan(config, scenario, &swapped, x, accel, &last_plans, &ego_est, &opp_est, k) {
                Ok((record, plans)) => {
                    accel = [record.ego_plan.own_actions[0], record.opp_plan.own_actions[0]];
                    last_plans = plans;
                    trace.replans.push(record);
                }
                Err(Error::RefuseToPlan(cause)) => {
                    trace.failure = Some(cause);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        x = JointState {
            ego: step_dynamics(x.ego, accel[0], config.dt_sim, &scenario.ego_path),
            opp: step_dynamics(x.opp, accel[1], config.dt_sim, &scenario.opp_path),
            t: k + 1,
        };
        trace.accels.push(accel);
        trace.states.push(x);
        if config.inference {
            let time = trace.time(k + 1);
            observe(
                &mut ego_est,
                &mut opp_est,
                config,
                time,
                x,
                scenario,
                &swapped,
                &mut trace,
            )?;
        }
        trace
            .gamma_hat
            .push(current_gamma(config, &ego_est, config.opp.gamma, true));
        if state_unsafe(&x, scenario) {
            trace.failure = Some(format!("collision at t = {:.1} s", trace.time(k + 1)));
            break;
        }
    }
    Ok(trace)
}

fn current_gamma(config: &SimConfig, est: &OnlineEstimator, truth: f64, enabled: bool) -> f64 {
    if config.inference && enabled {
        est.gamma_hat()
    } else {
        truth
    }
}

#[allow(clippy::too_many_arguments)]
fn observe(
    ego_est: &mut OnlineEstimator,
    opp_est: &mut OnlineEstimator,
    config: &SimConfig,
    time: f64,
    x: JointState,
    scenario: &Scenario,
    swapped: &Scenario,
    trace: &mut SimTrace,
) -> Result<()> {
    if let Some(rec) = ego_est.observe(time, x, scenario)? {
        trace.beliefs.push(rec);
    }
    if config.symmetric_inference {
        opp_est.observe(time, x.swapped(), swapped)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn replan(
    config: &SimConfig,
    scenario: &Scenario,
    swapped: &Scenario,
    x: JointState,
    accel: [f64; 2],
    last_plans: &[Option<Vec<f64>>; 2],
    ego_est: &OnlineEstimator,
    opp_est: &OnlineEstimator,
    k: usize,
) -> Result<(ReplanRecord, [Option<Vec<f64>>; 2])> {
    let gamma_hat = current_gamma(config, ego_est, config.opp.gamma, true);
    let ego_gamma = current_gamma(config, opp_est, config.ego.gamma, config.symmetric_inference);
    let idx = k as u64;
    let root = config.seed;
    let heuristic = config.search.heuristic;

    let ego_rewards = RewardPair {
        ego: config.ego,
        opp: config.opp.with_gamma(gamma_hat),
    };
    let ego_preds = if heuristic {
        Some(predictions_for(
            config,
            scenario,
            x.opp,
            accel[1],
            last_plans[1].as_deref(),
            derive_seed(root, "ego-predictions", idx),
        )?)
    } else {
        None
    };
    let ego_search = SearchConfig {
        seed: derive_seed(root, "ego-search", idx),
        prev_accel: accel,
        ..config.search.clone()
    };
    let x_ego = JointState { t: 0, ..x };
    let ego_out = search(&x_ego, ego_preds.as_ref(), scenario, &ego_rewards, &ego_search)?;

    let opp_rewards = RewardPair {
        ego: config.opp,
        opp: config.ego.with_gamma(ego_gamma),
    };
    let opp_preds = if heuristic {
        Some(predictions_for(
            config,
            swapped,
            x.ego,
            accel[0],
            last_plans[0].as_deref(),
            derive_seed(root, "opp-predictions", idx),
        )?)
    } else {
        None
    };
    let opp_search = SearchConfig {
        seed: derive_seed(root, "opp-search", idx),
        prev_accel: [accel[1], accel[0]],
        ..config.search.clone()
    };
    let x_opp = JointState { t: 0, ..x.swapped() };
    let opp_out = search(&x_opp, opp_preds.as_ref(), swapped, &opp_rewards, &opp_search)?;

    let ego_plan = PlanSummary::from(&ego_out.plan);
    let opp_plan = PlanSummary::from(&opp_out.plan);
    let plans = [Some(ego_plan.own_actions.clone()), Some(opp_plan.own_actions.clone())];
    let record = ReplanRecord {
        step: k,
        time: k as f64 * config.dt_sim,
        gamma_hat,
        opp_prediction: ego_preds
            .as_ref()
            .map(|p| p.most_likely().points.clone())
            .unwrap_or_default(),
        ego_plan,
        opp_plan,
    };
    Ok((record, plans))
}

/// The opponent branch of the ego's plan at replan `index`: the planner used as a predictor.
pub fn inferred_opponent_trajectory(trace: &SimTrace, index: usize) -> Result<Vec<f64>> {
    trace
        .replans
        .get(index)
        .map(|r| r.ego_plan.other_positions.clone())
        .ok_or_else(|| {
            Error::invalid(format!(
                "replan index {index} out of range ({} replans)",
                trace.replans.len()
            ))
        })
}

/// Pooled RMSE of the inferred opponent trajectory and of the most likely prediction against
/// the opponent's executed positions, over every replan and every horizon point that falls
/// inside the trace. `None` when there is nothing to compare.
pub fn recovery_rmse(trace: &SimTrace) -> Option<(f64, f64)> {
    let mut inferred = 0.0;
    let mut predicted = 0.0;
    let mut n = 0usize;
    for rec in &trace.replans {
        for (j, (&si, &sp)) in rec.ego_plan.other_positions.iter().zip(&rec.opp_prediction).enumerate() {
            let target = rec.step + (j + 1) * trace.steps_per_plan;
            let Some(actual) = trace.states.get(target) else {
                break;
            };
            inferred += (si - actual.opp.s).powi(2);
            predicted += (sp - actual.opp.s).powi(2);
            n += 1;
        }
    }
    (n > 0).then(|| ((inferred / n as f64).sqrt(), (predicted / n as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingOrder {
    EgoFirst,
    OppFirst,
    Simultaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub steps: usize,
    pub crossing_order: Option<CrossingOrder>,
    /// Time each agent's position first reaches the interaction point.
    pub ego_cross_time: Option<f64>,
    pub opp_cross_time: Option<f64>,
    /// Smallest summed distance of the two vehicles' footprints to their conflict intervals.
    pub min_gap: Option<f64>,
    /// Egoism accumulated over the applied accelerations, `[ego, opp]`.
    pub egoism: Option<[f64; 2]>,
    /// 1-based index of the first belief update within 0.1 of the true courtesy.
    pub gamma_convergence_step: Option<usize>,
    pub collision: Option<bool>,
    pub failure: Option<String>,
}

/// Distance from a vehicle footprint to its conflict interval, 0 when they overlap.
fn zone_distance(state: &AgentState, path: &PathSpec, vehicle: &VehicleGeometry) -> f64 {
    let front = state.s + vehicle.front_len;
    let rear = state.s - vehicle.rear_len;
    if front <= path.conflict[0] {
        path.conflict[0] - front
    } else if rear >= path.conflict[1] {
        rear - path.conflict[1]
    } else {
        0.0
    }
}

pub fn metrics(trace: &SimTrace, scenario: &Scenario) -> SimMetrics {
    let mut m = SimMetrics {
        steps: trace.accels.len(),
        crossing_order: None,
        ego_cross_time: None,
        opp_cross_time: None,
        min_gap: None,
        egoism: None,
        gamma_convergence_step: None,
        collision: None,
        failure: trace.failure.clone(),
    };
    if trace.states.is_empty() {
        return m;
    }
    let cross = |path: &PathSpec, pick: fn(&JointState) -> f64| {
        trace
            .states
            .iter()
            .position(|x| pick(x) >= path.interaction_point())
            .map(|k| trace.time(k))
    };
    m.ego_cross_time = cross(&scenario.ego_path, |x| x.ego.s);
    m.opp_cross_time = cross(&scenario.opp_path, |x| x.opp.s);
    m.crossing_order = match (m.ego_cross_time, m.opp_cross_time) {
        (Some(e), Some(o)) if e < o => Some(CrossingOrder::EgoFirst),
        (Some(e), Some(o)) if o < e => Some(CrossingOrder::OppFirst),
        (Some(_), Some(_)) => Some(CrossingOrder::Simultaneous),
        (Some(_), None) => Some(CrossingOrder::EgoFirst),
        (None, Some(_)) => Some(CrossingOrder::OppFirst),
        (None, None) => None,
    };
    m.min_gap = trace
        .states
        .iter()
        .map(|x| {
            zone_distance(&x.ego, &scenario.ego_path, &scenario.vehicle)
                + zone_distance(&x.opp, &scenario.opp_path, &scenario.vehicle)
        })
        .reduce(f64::min);
    let egoism = |i: usize, params: &RewardParams| {
        let accels: Vec<f64> = trace.accels.iter().map(|a| a[i]).collect();
        let states: Vec<AgentState> = trace.states[1..]
            .iter()
            .map(|x| if i == 0 { x.ego } else { x.opp })
            .collect();
        egoism_from_states(&accels, &states, params)
    };
    m.egoism = Some([egoism(0, &scenario.rewards.ego), egoism(1, &scenario.rewards.opp)]);
    m.gamma_convergence_step = trace
        .beliefs
        .iter()
        .position(|b| (b.gamma_hat - trace.gamma_true).abs() <= 0.1 + 1e-12)
        .map(|i| i + 1);
    m.collision = Some(trace.states.iter().any(|x| state_unsafe(x, scenario)));
    m
}

/// One row of the trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub s_ego: f64,
    pub v_ego: f64,
    pub a_ego: Option<f64>,
    pub s_opp: f64,
    pub v_opp: f64,
    pub a_opp: Option<f64>,
    pub gamma_hat: f64,
}

pub fn trace_rows(trace: &SimTrace) -> Vec<TraceRow> {
    trace
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let a = trace.accels.get(k);
            TraceRow {
                t: trace.time(k),
                s_ego: x.ego.s,
                v_ego: x.ego.v,
                a_ego: a.map(|a| a[0]),
                s_opp: x.opp.s,
                v_opp: x.opp.v,
                a_opp: a.map(|a| a[1]),
                gamma_hat: trace.gamma_hat[k],
            }
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::schema("trace", format!("{other:?}")),
    }
}

/// Header `t,s_ego,v_ego,a_ego,s_opp,v_opp,a_opp,gamma_hat`; the last row has empty
/// acceleration fields.
pub fn write_trace_csv<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    write_csv(&trace_rows(trace), out, &TRACE_HEADER)
}

const TRACE_HEADER: [&str; 8] = ["t", "s_ego", "v_ego", "a_ego", "s_opp", "v_opp", "a_opp", "gamma_hat"];
const BELIEF_HEADER: [&str; 5] = ["sim_time", "gamma_hat", "weight_entropy", "window_start", "window_end"];

fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W, header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let found = r.headers().map_err(csv_error)?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::schema(
            "header",
            format!(
                "expected {}, found {}",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    read_csv(input, &TRACE_HEADER)
}

pub fn write_belief_csv<W: Write>(records: &[BeliefRecord], out: W) -> Result<()> {
    write_csv(records, out, &BELIEF_HEADER)
}

pub fn read_belief_csv<R: Read>(input: R) -> Result<Vec<BeliefRecord>> {
    read_csv(input, &BELIEF_HEADER)
}

/// Replay the ego's courtesy inference over a recorded trace with the simulator's cadence.
pub fn replay_inference(
    rows: &[TraceRow],
    steps_per_plan: usize,
    inference_stride: usize,
    scenario: &Scenario,
    opp_params: &RewardParams,
    config: &InferenceConfig,
) -> Result<Vec<BeliefRecord>> {
    let mut est = OnlineEstimator::new(*opp_params, *config)?.with_cadence(steps_per_plan, inference_stride)?;
    let mut out = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        let x = JointState {
            ego: AgentState::new(row.s_ego, row.v_ego),
            opp: AgentState::new(row.s_opp, row.v_opp),
            t: k,
        };
        if let Some(rec) = est.observe(row.t, x, scenario)? {
            out.push(rec);
        }
    }
    Ok(out)
}
