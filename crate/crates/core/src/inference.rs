//! Online Bayesian estimation of the opponent's courtesy parameter.
//!
//! Observed opponent motion is scored with a maximum-entropy model: the probability of an
//! observed action sequence is the softmax of its social reward over every sequence of the same
//! length, with the ego's observed actions held fixed.

use serde::{Deserialize, Serialize};

use crate::baselines::decode_sequence;
use crate::error::{Error, Result};
use crate::reward::{blend, egoism_from_states, RewardParams};
use crate::scenario::{pair_unsafe, rollout_agent, swept_rollout, JointState, Scenario};

pub const DEFAULT_GRID: usize = 21;
pub const DEFAULT_WINDOW: usize = 5;
/// Largest number of opponent sequences enumerated per window.
pub const DEFAULT_SEQUENCE_CAP: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Number of candidate values on the uniform grid over [0, 1].
    pub grid: usize,
    /// Window length r in planning steps.
    pub window: usize,
    pub sequence_cap: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            grid: DEFAULT_GRID,
            window: DEFAULT_WINDOW,
            sequence_cap: DEFAULT_SEQUENCE_CAP,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(Error::schema("grid", "needs at least 2 candidates"));
        }
        if self.window == 0 {
            return Err(Error::schema("window", "must be at least 1"));
        }
        Ok(())
    }
}

/// Discrete posterior over candidate courtesy values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    samples: Vec<f64>,
    weights: Vec<f64>,
}

impl Belief {
    /// `m` evenly spaced candidates on [0, 1] with a uniform prior.
    pub fn uniform_grid(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid("a belief needs at least 2 candidates"));
        }
        let samples = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        Ok(Belief {
            samples,
            weights: vec![1.0 / m as f64; m],
        })
    }

    pub fn new(samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 || samples.len() != weights.len() {
            return Err(Error::invalid("need at least 2 samples with one weight each"));
        }
        if samples.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::invalid("candidate values must lie in [0, 1]"));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("candidate values must be distinct"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("weights must not all be zero"));
        }
        Ok(Belief {
            samples,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Posterior mean.
    pub fn mean(&self) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(g, w)| g * w).sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }

    /// Bayes update with per-candidate likelihoods.
    pub fn update(&self, likelihoods: &[f64]) -> Result<Belief> {
        let logs: Vec<f64> = likelihoods.iter().map(|l| l.ln()).collect();
        self.update_log(&logs)
    }

    /// Bayes update with per-candidate log-likelihoods. When every posterior weight vanishes
    /// the belief resets to uniform.
    pub fn update_log(&self, log_likelihoods: &[f64]) -> Result<Belief> {
        if log_likelihoods.len() != self.samples.len() {
            return Err(Error::invalid("one likelihood per candidate is required"));
        }
        let max = log_likelihoods
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = if max.is_finite() {
            log_likelihoods
                .iter()
                .zip(&self.weights)
                .map(|(l, w)| w * (l - max).exp())
                .collect()
        } else {
            vec![0.0; self.weights.len()]
        };
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            log::warn!("every candidate likelihood vanished; resetting the belief to uniform");
            let m = self.samples.len();
            weights = vec![1.0 / m as f64; m];
        } else {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Belief {
            samples: self.samples.clone(),
            weights,
        })
    }
}

/// Observed joint states `x̂_{k-r..k}` at planning-step spacing with the actions reconstructed
/// from consecutive speed changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub states: Vec<JointState>,
    pub ego_actions: Vec<u8>,
    pub opp_actions: Vec<u8>,
}

impl ObservationWindow {
    /// Build a window from `r + 1` consecutive observations spaced by the scenario step.
    pub fn from_states(states: &[JointState], scenario: &Scenario) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::invalid("a window needs at least two observations"));
        }
        let snap = |v0: f64, v1: f64| scenario.actions.nearest((v1 - v0) / scenario.dt) as u8;
        let ego_actions = states.windows(2).map(|w| snap(w[0].ego.v, w[1].ego.v)).collect();
        let opp_actions = states.windows(2).map(|w| snap(w[0].opp.v, w[1].opp.v)).collect();
        Ok(ObservationWindow {
            states: states.to_vec(),
            ego_actions,
            opp_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.opp_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opp_actions.is_empty()
    }
}

/// Everything about a window that does not depend on the candidate courtesy value.
#[derive(Debug, Clone)]
pub struct WindowTable {
    /// Opponent egoism of every opponent sequence, in lexicographic order.
    own: Vec<f64>,
    safe: Vec<bool>,
    /// Egoism of the ego's fixed observed motion.
    other: f64,
    observed: usize,
}

impl WindowTable {
    pub fn new(window: &ObservationWindow, params: &RewardParams, scenario: &Scenario, cap: u64) -> Result<Self> {
        let r = window.len();
        let n = scenario.actions.len();
        let count = (n as u64).checked_pow(r as u32).filter(|&c| c <= cap).ok_or_else(|| {
            Error::Infeasible(format!(
                "{n}^{r} opponent sequences exceed the cap {cap}; use a shorter window"
            ))
        })? as usize;
        let x0 = window.states[0];
        let ego_accels = scenario.actions.to_accels(&window.ego_actions);
        let ego_states = rollout_agent(x0.ego, &ego_accels, scenario.dt, &scenario.ego_path);
        let other = egoism_from_states(&ego_accels, &ego_states, params);
        let ego_swept = swept_rollout(x0.ego, &ego_accels, scenario.dt, &scenario.ego_path);
        let mut own = Vec::with_capacity(count);
        let mut safe = Vec::with_capacity(count);
        for i in 0..count {
            let accels = scenario.actions.to_accels(&decode_sequence(i, n, r));
            let states = rollout_agent(x0.opp, &accels, scenario.dt, &scenario.opp_path);
            own.push(egoism_from_states(&accels, &states, params));
            let swept = swept_rollout(x0.opp, &accels, scenario.dt, &scenario.opp_path);
            safe.push(!pair_unsafe(&ego_swept, &swept, scenario));
        }
        let observed = window
            .opp_actions
            .iter()
            .fold(0usize, |acc, &a| acc * n + usize::from(a));
        Ok(WindowTable {
            own,
            safe,
            other,
            observed,
        })
    }

    pub fn len(&self) -> usize {
        self.own.len()
    }

    pub fn is_empty(&self) -> bool {
        self.own.is_empty()
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    /// Social reward of every opponent sequence under courtesy `gamma`; unsafe sequences
    /// score 0.
    pub fn rewards(&self, gamma: f64) -> Vec<f64> {
        self.own
            .iter()
            .zip(&self.safe)
            .map(|(&f, &ok)| if ok { blend(gamma, f, self.other) } else { 0.0 })
            .collect()
    }

    /// Log of the softmax probability of the observed sequence.
    pub fn log_likelihood(&self, gamma: f64) -> f64 {
        let r = self.rewards(gamma);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + r.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        r[self.observed] - lse
    }
}

/// Probability of the window's observed opponent sequence under courtesy `gamma`.
pub fn likelihood(
    window: &ObservationWindow,
    gamma: f64,
    params: &RewardParams,
    scenario: &Scenario,
    cap: u64,
) -> Result<f64> {
    Ok(WindowTable::new(window, params, scenario, cap)?
        .log_likelihood(gamma)
        .exp())
}

/// Multiply the belief by the window likelihoods of every candidate; returns the new belief
/// and its posterior mean.
pub fn update_belief(
    belief: &Belief,
    window: &ObservationWindow,
    params: &RewardParams,
    scenario: &Scenario,
    cap: u64,
) -> Result<(Belief, f64)> {
    let table = WindowTable::new(window, params, scenario, cap)?;
    let logs: Vec<f64> = belief.samples().iter().map(|&g| table.log_likelihood(g)).collect();
    let next = belief.update_log(&logs)?;
    let mean = next.mean();
    Ok((next, mean))
}

/// One row of the belief trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefRecord {
    pub sim_time: f64,
    pub gamma_hat: f64,
    pub weight_entropy: f64,
    pub window_start: f64,
    pub window_end: f64,
}

/// Sliding-window estimator fed with observations at planning-step spacing.
#[derive(Debug, Clone)]
pub struct OnlineEstimator {
    belief: Belief,
    params: RewardParams,
    config: InferenceConfig,
    spacing: usize,
    stride: usize,
    history: Vec<(f64, JointState)>,
}

impl OnlineEstimator {
    /// `params` are the opponent's reward parameters apart from its courtesy.
    pub fn new(params: RewardParams, config: InferenceConfig) -> Result<Self> {
        config.validate()?;
        Ok(OnlineEstimator {
            belief: Belief::uniform_grid(config.grid)?,
            params,
            config,
            spacing: 1,
            stride: 1,
            history: Vec::new(),
        })
    }

    /// Observations arrive `spacing` per planning step and the belief is updated every `stride`
    /// observations; windows always take every `spacing`-th observation.
    pub fn with_cadence(mut self, spacing: usize, stride: usize) -> Result<Self> {
        if spacing == 0 || stride == 0 {
            return Err(Error::invalid(
                "observation spacing and update stride must be at least 1",
            ));
        }
        self.spacing = spacing;
        self.stride = stride;
        Ok(self)
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn gamma_hat(&self) -> f64 {
        self.belief.mean()
    }

    /// Record the joint state observed at `time`; once a full window of `r` planning steps is
    /// available, update the belief on every `stride`-th observation.
    pub fn observe(&mut self, time: f64, state: JointState, scenario: &Scenario) -> Result<Option<BeliefRecord>> {
        self.history.push((time, state));
        let span = self.config.window * self.spacing;
        let len = self.history.len();
        if len < span + 1 || !(len - 1).is_multiple_of(self.stride) {
            return Ok(None);
        }
        let first = len - 1 - span;
        let states: Vec<JointState> = self.history[first..]
            .iter()
            .step_by(self.spacing)
            .map(|(_, x)| *x)
            .collect();
        let window = ObservationWindow::from_states(&states, scenario)?;
        let (belief, gamma_hat) =
            update_belief(&self.belief, &window, &self.params, scenario, self.config.sequence_cap)?;
        self.belief = belief;
        Ok(Some(BeliefRecord {
            sim_time: time,
            gamma_hat,
            weight_entropy: self.belief.entropy(),
            window_start: self.history[first].0,
            window_end: time,
        }))
    }
}
