//! Reference-path geometry, longitudinal dynamics and the conflict-zone safety predicate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{RewardPair, RewardParams};
use crate::rng::rng_from_seed;

pub const SCENARIO_VERSION: u32 = 1;

/// Longitudinal state of one agent on its reference path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    /// Position along the reference path (m).
    pub s: f64,
    /// Speed along the reference path (m/s).
    pub v: f64,
}

impl AgentState {
    pub fn new(s: f64, v: f64) -> Self {
        AgentState { s, v }
    }
}

/// Joint state of both agents at planning step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub ego: AgentState,
    pub opp: AgentState,
    pub t: usize,
}

impl JointState {
    pub fn new(ego: AgentState, opp: AgentState) -> Self {
        JointState { ego, opp, t: 0 }
    }

    /// The same state seen from the opponent's seat.
    pub fn swapped(&self) -> Self {
        JointState {
            ego: self.opp,
            opp: self.ego,
            t: self.t,
        }
    }
}

/// Which agent a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    Ego,
    Opp,
}

impl Agent {
    pub fn other(self) -> Agent {
        match self {
            Agent::Ego => Agent::Opp,
            Agent::Opp => Agent::Ego,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Agent::Ego => 0,
            Agent::Opp => 1,
        }
    }
}

/// Ordered, discrete longitudinal accelerations (m/s²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionSet {
    accelerations: Vec<f64>,
    zero: usize,
}

impl ActionSet {
    pub fn new(accelerations: Vec<f64>) -> Result<Self> {
        if accelerations.is_empty() {
            return Err(Error::schema("actions", "action set must not be empty"));
        }
        if accelerations.len() > usize::from(u8::MAX) {
            return Err(Error::schema("actions", "at most 255 actions are supported"));
        }
        if accelerations.iter().any(|a| !a.is_finite()) {
            return Err(Error::schema("actions", "accelerations must be finite"));
        }
        if accelerations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::schema("actions", "accelerations must be strictly increasing"));
        }
        let zero = accelerations
            .iter()
            .position(|&a| a == 0.0)
            .ok_or_else(|| Error::schema("actions", "action set must contain 0"))?;
        Ok(ActionSet { accelerations, zero })
    }

    /// `[-3, -2, -1, 0, 1, 2]` m/s².
    pub fn standard() -> Self {
        ActionSet::new(vec![-3.0, -2.0, -1.0, 0.0, 1.0, 2.0]).expect("valid default")
    }

    pub fn len(&self) -> usize {
        self.accelerations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accelerations.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.accelerations[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.accelerations
    }

    pub fn zero_index(&self) -> usize {
        self.zero
    }

    pub fn min(&self) -> f64 {
        self.accelerations[0]
    }

    pub fn max(&self) -> f64 {
        self.accelerations[self.accelerations.len() - 1]
    }

    /// Index of the element closest to `a`; ties go to the lower index.
    pub fn nearest(&self, a: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &x) in self.accelerations.iter().enumerate() {
            let d = (x - a).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }

    /// Inclusive index range of actions with `|a - prev| <= bound`, if any.
    pub fn jerk_feasible(&self, prev: f64, bound: f64) -> Option<(usize, usize)> {
        let tol = 1e-9;
        let lo = self.accelerations.iter().position(|&a| a >= prev - bound - tol)?;
        let hi = self.accelerations.iter().rposition(|&a| a <= prev + bound + tol)?;
        (lo <= hi).then_some((lo, hi))
    }

    pub fn to_accels(&self, indices: &[u8]) -> Vec<f64> {
        indices.iter().map(|&i| self.get(usize::from(i))).collect()
    }
}

impl TryFrom<Vec<f64>> for ActionSet {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        ActionSet::new(value)
    }
}

impl From<ActionSet> for Vec<f64> {
    fn from(value: ActionSet) -> Self {
        value.accelerations
    }
}

/// One reference path: its length, legal speed and the interval it shares with the other path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub l_ref: f64,
    pub v_max: f64,
    /// `[s_in, s_out]` on this path.
    pub conflict: [f64; 2],
}

impl PathSpec {
    pub fn interaction_point(&self) -> f64 {
        0.5 * (self.conflict[0] + self.conflict[1])
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.l_ref > 0.0 && self.l_ref.is_finite()) {
            return Err(Error::schema(format!("{name}.l_ref"), "must be positive"));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::schema(format!("{name}.v_max"), "must be positive"));
        }
        let [s_in, s_out] = self.conflict;
        if !(0.0 <= s_in && s_in < s_out && s_out <= self.l_ref) {
            return Err(Error::schema(
                format!("{name}.conflict"),
                "require 0 <= s_in < s_out <= l_ref",
            ));
        }
        Ok(())
    }
}

/// Occupancy half-lengths ahead of and behind the reference point (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleGeometry {
    pub front_len: f64,
    pub rear_len: f64,
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        VehicleGeometry {
            front_len: 2.0,
            rear_len: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ego_path: PathSpec,
    pub opp_path: PathSpec,
    /// Planning step (s).
    pub dt: f64,
    /// Planning horizon in steps.
    pub horizon: usize,
    /// Bound on the per-step change of acceleration during roll-outs (m/s²).
    pub jerk_comfort: f64,
    pub actions: ActionSet,
    pub vehicle: VehicleGeometry,
    pub init: JointState,
    pub rewards: RewardPair,
}

impl Scenario {
    pub fn path(&self, agent: Agent) -> &PathSpec {
        match agent {
            Agent::Ego => &self.ego_path,
            Agent::Opp => &self.opp_path,
        }
    }

    /// Exchange the roles of the two agents.
    pub fn swapped(&self) -> Scenario {
        Scenario {
            ego_path: self.opp_path,
            opp_path: self.ego_path,
            init: self.init.swapped(),
            rewards: RewardPair {
                ego: self.rewards.opp,
                opp: self.rewards.ego,
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::schema("dt", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::schema("horizon", "must be at least 1"));
        }
        if self.jerk_comfort.is_nan() || self.jerk_comfort <= 0.0 {
            return Err(Error::schema("jerk_comfort", "must be positive"));
        }
        self.ego_path.validate("ego_path")?;
        self.opp_path.validate("opp_path")?;
        if !(self.vehicle.front_len >= 0.0 && self.vehicle.rear_len >= 0.0) {
            return Err(Error::schema("vehicle", "lengths must be non-negative"));
        }
        check_agent(&self.init.ego, &self.ego_path, "init.ego")?;
        check_agent(&self.init.opp, &self.opp_path, "init.opp")?;
        self.rewards.ego.validate("rewards.ego")?;
        self.rewards.opp.validate("rewards.opp")?;
        Ok(())
    }

    /// The interactive crossing used for search-performance experiments.
    ///
    /// The opponent is slightly closer to the crossing and both agents reach the conflict
    /// zone inside the 2.5 s horizon.
    pub fn reference() -> Scenario {
        let path = PathSpec {
            l_ref: 80.0,
            v_max: 10.0,
            conflict: [38.0, 42.0],
        };
        Scenario {
            ego_path: path,
            opp_path: path,
            dt: 0.5,
            horizon: 5,
            jerk_comfort: 2.0,
            actions: ActionSet::standard(),
            vehicle: VehicleGeometry::default(),
            init: JointState::new(AgentState::new(24.0, 6.0), AgentState::new(26.0, 6.0)),
            rewards: RewardPair::default(),
        }
    }

    /// Scripted ground-truth opponent trajectory for [`Scenario::reference`].
    pub fn reference_ground_truth(&self) -> Vec<AgentState> {
        intent_trajectory(self.init.opp, self.opp_path.v_max * 0.8, 0.0, self, Agent::Opp).1
    }
}

fn check_agent(state: &AgentState, path: &PathSpec, field: &str) -> Result<()> {
    if !(0.0..=path.l_ref).contains(&state.s) {
        return Err(Error::schema(format!("{field}.s"), "must lie in [0, l_ref]"));
    }
    if !(0.0..=path.v_max).contains(&state.v) {
        return Err(Error::schema(format!("{field}.v"), "must lie in [0, v_max]"));
    }
    Ok(())
}

/// Advance one agent by one step of constant acceleration.
///
/// Speed is clamped to `[0, v_max]`; position uses the unclamped kinematics and is clamped to
/// `[s, l_ref]`, so an agent never moves backwards.
pub fn step_dynamics(state: AgentState, a: f64, dt: f64, path: &PathSpec) -> AgentState {
    let v = (state.v + a * dt).clamp(0.0, path.v_max);
    let s = (state.s + state.v * dt + 0.5 * a * dt * dt).clamp(state.s, path.l_ref.max(state.s));
    AgentState { s, v }
}

/// Roll one agent forward through `accels`, returning the states after each step.
pub fn rollout_agent(start: AgentState, accels: &[f64], dt: f64, path: &PathSpec) -> Vec<AgentState> {
    let mut out = Vec::with_capacity(accels.len());
    let mut x = start;
    for &a in accels {
        x = step_dynamics(x, a, dt, path);
        out.push(x);
    }
    out
}

/// Step both agents simultaneously through equal-length action sequences; returns x_1..x_N.
pub fn rollout_joint(
    x0: &JointState,
    ego_accels: &[f64],
    opp_accels: &[f64],
    scenario: &Scenario,
) -> Result<Vec<JointState>> {
    if ego_accels.len() != opp_accels.len() {
        return Err(Error::invalid(format!(
            "action sequences differ in length ({} vs {})",
            ego_accels.len(),
            opp_accels.len()
        )));
    }
    let mut out = Vec::with_capacity(ego_accels.len());
    let mut x = *x0;
    for (&ae, &ao) in ego_accels.iter().zip(opp_accels) {
        x = JointState {
            ego: step_dynamics(x.ego, ae, scenario.dt, &scenario.ego_path),
            opp: step_dynamics(x.opp, ao, scenario.dt, &scenario.opp_path),
            t: x.t + 1,
        };
        out.push(x);
    }
    Ok(out)
}

/// Whether the open occupancy interval `(s - rear, s + front)` overlaps the open conflict interval.
pub fn occupies_conflict(state: &AgentState, path: &PathSpec, vehicle: &VehicleGeometry) -> bool {
    state.s + vehicle.front_len > path.conflict[0] && state.s - vehicle.rear_len < path.conflict[1]
}

fn out_of_bounds(state: &AgentState, path: &PathSpec) -> bool {
    !(0.0..=path.l_ref).contains(&state.s) || !(0.0..=path.v_max).contains(&state.v)
}

/// Safety predicate for a single joint state.
pub fn state_unsafe(x: &JointState, scenario: &Scenario) -> bool {
    out_of_bounds(&x.ego, &scenario.ego_path)
        || out_of_bounds(&x.opp, &scenario.opp_path)
        || (occupies_conflict(&x.ego, &scenario.ego_path, &scenario.vehicle)
            && occupies_conflict(&x.opp, &scenario.opp_path, &scenario.vehicle))
}

/// True when any state has both agents inside their conflict intervals or leaves its path bounds.
pub fn is_unsafe(trajectory: &[JointState], scenario: &Scenario) -> bool {
    trajectory.iter().any(|x| state_unsafe(x, scenario))
}

/// Sub-samples per planning step at which plans are checked for safety.
///
/// Checking only the step endpoints lets two agents swap through the conflict zone between
/// samples; five sub-samples match the 0.1 s simulation step at the default 0.5 s planning step.
pub const SAFETY_SUBSTEPS: usize = 5;

/// States of one agent at `j * dt / SAFETY_SUBSTEPS` for `j = 1..=SAFETY_SUBSTEPS` under constant
/// acceleration `a`. The last sample equals `step_dynamics(start, a, dt, path)`.
pub fn swept_agent(start: AgentState, a: f64, dt: f64, path: &PathSpec) -> impl Iterator<Item = AgentState> + '_ {
    (1..=SAFETY_SUBSTEPS).map(move |j| {
        if j == SAFETY_SUBSTEPS {
            step_dynamics(start, a, dt, path)
        } else {
            step_dynamics(start, a, dt * j as f64 / SAFETY_SUBSTEPS as f64, path)
        }
    })
}

/// Sub-sampled states of one agent over a whole action sequence, `N * SAFETY_SUBSTEPS` long.
pub fn swept_rollout(start: AgentState, accels: &[f64], dt: f64, path: &PathSpec) -> Vec<AgentState> {
    let mut out = Vec::with_capacity(accels.len() * SAFETY_SUBSTEPS);
    let mut x = start;
    for &a in accels {
        out.extend(swept_agent(x, a, dt, path));
        x = *out.last().expect("at least one sub-sample per step");
    }
    out
}

/// Whether one planning step from `x` under `(a_ego, a_opp)` is unsafe at any sub-sample.
pub fn step_unsafe(x: &JointState, a_ego: f64, a_opp: f64, scenario: &Scenario) -> bool {
    let s = scenario;
    swept_agent(x.ego, a_ego, s.dt, &s.ego_path)
        .zip(swept_agent(x.opp, a_opp, s.dt, &s.opp_path))
        .any(|(e, o)| {
            state_unsafe(
                &JointState {
                    ego: e,
                    opp: o,
                    t: x.t + 1,
                },
                s,
            )
        })
}

/// Sub-sampled safety of a whole joint plan from `x0`.
pub fn plan_unsafe(x0: &JointState, ego_accels: &[f64], opp_accels: &[f64], scenario: &Scenario) -> bool {
    let ego = swept_rollout(x0.ego, ego_accels, scenario.dt, &scenario.ego_path);
    let opp = swept_rollout(x0.opp, opp_accels, scenario.dt, &scenario.opp_path);
    pair_unsafe(&ego, &opp, scenario)
}

/// Same predicate over separately rolled agent trajectories of equal length.
pub fn pair_unsafe(ego: &[AgentState], opp: &[AgentState], scenario: &Scenario) -> bool {
    ego.iter().zip(opp).any(|(e, o)| {
        out_of_bounds(e, &scenario.ego_path)
            || out_of_bounds(o, &scenario.opp_path)
            || (occupies_conflict(e, &scenario.ego_path, &scenario.vehicle)
                && occupies_conflict(o, &scenario.opp_path, &scenario.vehicle))
    })
}

/// True once the agent's rear has left its conflict interval.
pub fn passed_conflict(state: &AgentState, path: &PathSpec, vehicle: &VehicleGeometry) -> bool {
    state.s - vehicle.rear_len >= path.conflict[1]
}

/// Scripted speed-tracking intent: each step picks the action closest to reaching `v_des`,
/// limited by the comfort jerk bound relative to the previous action.
///
/// Returns the accelerations and the resulting states over the scenario horizon.
pub fn intent_trajectory(
    start: AgentState,
    v_des: f64,
    prev_accel: f64,
    scenario: &Scenario,
    agent: Agent,
) -> (Vec<f64>, Vec<AgentState>) {
    let path = scenario.path(agent);
    let actions = &scenario.actions;
    let mut x = start;
    let mut prev = prev_accel;
    let mut accels = Vec::with_capacity(scenario.horizon);
    let mut states = Vec::with_capacity(scenario.horizon);
    for _ in 0..scenario.horizon {
        let wanted = (v_des - x.v) / scenario.dt;
        let idx = match actions.jerk_feasible(prev, scenario.jerk_comfort) {
            Some((lo, hi)) => (lo..=hi)
                .min_by(|&a, &b| {
                    let da = (actions.get(a) - wanted).abs();
                    let db = (actions.get(b) - wanted).abs();
                    da.total_cmp(&db)
                })
                .unwrap_or(lo),
            None => actions.nearest(prev),
        };
        let a = actions.get(idx);
        x = step_dynamics(x, a, scenario.dt, path);
        prev = a;
        accels.push(a);
        states.push(x);
    }
    (accels, states)
}

// ---------------------------------------------------------------------------
// Documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBlock {
    pub ego: AgentState,
    pub opp: AgentState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardsBlock {
    pub ego: RewardParams,
    pub opp: RewardParams,
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub version: u32,
    pub dt: f64,
    pub horizon: usize,
    pub jerk_comfort: f64,
    pub actions: Vec<f64>,
    pub ego_path: PathSpec,
    pub opp_path: PathSpec,
    #[serde(default)]
    pub vehicle: Option<VehicleGeometry>,
    pub init: InitBlock,
    #[serde(default)]
    pub rewards: Option<RewardsBlock>,
}

impl ScenarioDocument {
    pub fn into_scenario(self) -> Result<Scenario> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::schema(
                "version",
                format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version),
            ));
        }
        let scenario = Scenario {
            ego_path: self.ego_path,
            opp_path: self.opp_path,
            dt: self.dt,
            horizon: self.horizon,
            jerk_comfort: self.jerk_comfort,
            actions: ActionSet::new(self.actions)?,
            vehicle: self.vehicle.unwrap_or_default(),
            init: JointState::new(self.init.ego, self.init.opp),
            rewards: self
                .rewards
                .map(|r| RewardPair { ego: r.ego, opp: r.opp })
                .unwrap_or_default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl From<&Scenario> for ScenarioDocument {
    fn from(s: &Scenario) -> Self {
        ScenarioDocument {
            version: SCENARIO_VERSION,
            dt: s.dt,
            horizon: s.horizon,
            jerk_comfort: s.jerk_comfort,
            actions: s.actions.as_slice().to_vec(),
            ego_path: s.ego_path,
            opp_path: s.opp_path,
            vehicle: Some(s.vehicle),
            init: InitBlock {
                ego: s.init.ego,
                opp: s.init.opp,
            },
            rewards: Some(RewardsBlock {
                ego: s.rewards.ego,
                opp: s.rewards.opp,
            }),
        }
    }
}

/// Map a serde error onto a schema error that names the offending field where possible.
pub(crate) fn json_error(err: serde_json::Error) -> Error {
    let msg = err.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_owned)
        .unwrap_or_else(|| "document".to_owned());
    Error::schema(field, msg)
}

pub fn load_scenario(text: &str) -> Result<Scenario> {
    let doc: ScenarioDocument = serde_json::from_str(text).map_err(json_error)?;
    doc.into_scenario()
}

pub fn scenario_to_string(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioDocument::from(scenario)).expect("serializable")
}

// ---------------------------------------------------------------------------
// Synthetic scenarios

/// Ranges the synthetic generator samples from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticKnobs {
    /// Gap between the ego front and its conflict entry at t = 0 (m).
    pub ego_gap: (f64, f64),
    /// Gap between the opponent front and its conflict entry at t = 0 (m).
    pub opp_gap: (f64, f64),
    pub initial_speed: (f64, f64),
    /// Opponent cruise speed as a fraction of v_max.
    pub opp_target_fraction: (f64, f64),
    pub horizon: usize,
    pub actions: ActionSet,
}

impl Default for SyntheticKnobs {
    fn default() -> Self {
        SyntheticKnobs {
            ego_gap: (6.0, 16.0),
            opp_gap: (4.0, 12.0),
            initial_speed: (3.0, 7.0),
            opp_target_fraction: (0.6, 0.9),
            horizon: 5,
            actions: ActionSet::standard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub scenario: Scenario,
    /// Opponent states x_1..x_N under its scripted intent.
    pub opp_ground_truth: Vec<AgentState>,
}

/// Sample a crossing scenario whose scripted opponent reaches the conflict zone within the
/// horizon. Deterministic in `seed`.
pub fn make_synthetic_scenario(seed: u64, knobs: &SyntheticKnobs) -> Result<SyntheticScenario> {
    if knobs.horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let vehicle = VehicleGeometry::default();
    let sample = |r: (f64, f64), rng: &mut crate::rng::PlannerRng| {
        if r.1 > r.0 {
            rng.random_range(r.0..r.1)
        } else {
            r.0
        }
    };
    for _ in 0..256 {
        let v_max = sample((8.0, 12.0), &mut rng);
        let width = sample((3.0, 5.0), &mut rng);
        let ego_gap = sample(knobs.ego_gap, &mut rng);
        let opp_gap = sample(knobs.opp_gap, &mut rng);
        let ego_v = sample(knobs.initial_speed, &mut rng).min(v_max);
        let opp_v = sample(knobs.initial_speed, &mut rng).min(v_max);
        let target = sample(knobs.opp_target_fraction, &mut rng) * v_max;

        let approach = 20.0 + sample((0.0, 10.0), &mut rng);
        let s_in = approach;
        let path = PathSpec {
            l_ref: s_in + width + 40.0,
            v_max,
            conflict: [s_in, s_in + width],
        };
        let scenario = Scenario {
            ego_path: path,
            opp_path: path,
            dt: 0.5,
            horizon: knobs.horizon,
            jerk_comfort: 2.0,
            actions: knobs.actions.clone(),
            vehicle,
            init: JointState::new(
                AgentState::new(s_in - vehicle.front_len - ego_gap, ego_v),
                AgentState::new(s_in - vehicle.front_len - opp_gap, opp_v),
            ),
            rewards: RewardPair::default(),
        };
        scenario.validate()?;
        let (_, truth) = intent_trajectory(scenario.init.opp, target, 0.0, &scenario, Agent::Opp);
        let reaches = truth.iter().any(|x| occupies_conflict(x, &scenario.opp_path, &vehicle));
        let parked: Vec<AgentState> = vec![scenario.init.ego; truth.len()];
        if reaches && !pair_unsafe(&parked, &truth, &scenario) {
            return Ok(SyntheticScenario {
                scenario,
                opp_ground_truth: truth,
            });
        }
    }
    Err(Error::Infeasible(
        "synthetic generator could not place an opponent that reaches the conflict zone".into(),
    ))
}
