use rand::Rng;

use super::{NodeId, Planner, RolloutPolicy};
use crate::prediction::PredictionSet;
use crate::scenario::{step_dynamics, AgentState};

impl Planner<'_> {
    /// Complete the partial plan stored at `leaf` to the full horizon.
    ///
    /// Every roll-out action respects the comfort jerk bound relative to the same agent's
    /// previous action. With the heuristic roll-out, a governing predicted trajectory is drawn
    /// among those whose range contains the leaf, and opponent actions are resampled until the
    /// successor position stays in that trajectory's range; after `retry_budget` failed draws the
    /// step falls back to jerk-limited sampling.
    pub fn rollout(&mut self, leaf: NodeId) -> (Vec<u8>, Vec<u8>) {
        let (mut ego, mut opp) = self.tree.sequences(leaf);
        let node = self.tree.node(leaf);
        let horizon = self.scenario.horizon;
        let t0 = node.depth / 2;
        let actions = &self.scenario.actions;
        let mut prev_e = ego
            .last()
            .map(|&a| actions.get(usize::from(a)))
            .unwrap_or(self.config.prev_accel[0]);
        let mut prev_o = opp
            .last()
            .map(|&a| actions.get(usize::from(a)))
            .unwrap_or(self.config.prev_accel[1]);
        let mut opp_state = node.state.opp;

        let guided = match (self.config.rollout, self.preds) {
            (RolloutPolicy::Heuristic, Some(preds)) => governing_trajectory(preds, opp_state.s, t0, &mut self.rng),
            _ => None,
        };

        for step in t0..horizon {
            if ego.len() == step {
                let a = self.jerk_sample(prev_e);
                prev_e = self.scenario.actions.get(usize::from(a));
                ego.push(a);
            }
            let a = match guided {
                Some(i) => self.guided_sample(prev_o, opp_state, i, step + 1),
                None => self.jerk_sample(prev_o),
            };
            let accel = self.scenario.actions.get(usize::from(a));
            opp_state = step_dynamics(opp_state, accel, self.scenario.dt, &self.scenario.opp_path);
            prev_o = accel;
            opp.push(a);
        }
        (ego, opp)
    }

    fn jerk_sample(&mut self, prev: f64) -> u8 {
        let actions = &self.scenario.actions;
        match actions.jerk_feasible(prev, self.scenario.jerk_comfort) {
            Some((lo, hi)) => self.rng.random_range(lo..=hi) as u8,
            None => actions.nearest(prev) as u8,
        }
    }

    fn guided_sample(&mut self, prev: f64, state: AgentState, traj: usize, step: usize) -> u8 {
        for _ in 0..self.config.retry_budget {
            let a = self.jerk_sample(prev);
            if self.keeps_in_range(state, a, traj, step, 1) {
                return a;
            }
        }
        self.jerk_sample(prev)
    }

    /// Whether action `a` from `state` lands inside the range of `traj` at `step`, and, for
    /// `lookahead` further steps, some jerk-feasible continuation can stay inside as well.
    fn keeps_in_range(&self, state: AgentState, a: u8, traj: usize, step: usize, lookahead: usize) -> bool {
        let preds = self.preds.expect("guided roll-outs need predictions");
        let pred = &preds.trajectories()[traj];
        let s = self.scenario;
        let accel = s.actions.get(usize::from(a));
        let next = step_dynamics(state, accel, s.dt, &s.opp_path);
        let d = next.s - pred.points[step - 1];
        if d * d / pred.variances[step - 1] > preds.rho() {
            return false;
        }
        if lookahead == 0 || step >= pred.points.len() {
            return true;
        }
        match s.actions.jerk_feasible(accel, s.jerk_comfort) {
            Some((lo, hi)) => (lo..=hi).any(|b| self.keeps_in_range(next, b as u8, traj, step + 1, lookahead - 1)),
            None => self.keeps_in_range(next, s.actions.nearest(accel) as u8, traj, step + 1, lookahead - 1),
        }
    }
}

/// Draw one trajectory, proportionally to its probability, among those whose range contains the
/// opponent position at step `t`. At `t = 0` the opponent sits at the origin of every
/// prediction, so all trajectories are candidates.
fn governing_trajectory<R: Rng>(preds: &PredictionSet, s_opp: f64, t: usize, rng: &mut R) -> Option<usize> {
    if t >= preds.horizon() {
        return None;
    }
    let candidates: Vec<usize> = if t == 0 {
        (0..preds.trajectories().len()).collect()
    } else {
        preds.containing(s_opp, t).collect()
    };
    match candidates.len() {
        0 => None,
        1 => Some(candidates[0]),
        _ => {
            let total: f64 = candidates.iter().map(|&i| preds.trajectories()[i].probability).sum();
            if total <= 0.0 {
                return Some(candidates[rng.random_range(0..candidates.len())]);
            }
            let mut r = rng.random::<f64>() * total;
            for &i in &candidates {
                r -= preds.trajectories()[i].probability;
                if r < 0.0 {
                    return Some(i);
                }
            }
            candidates.last().copied()
        }
    }
}
