//! Predicted opponent trajectories and the confidence ranges they induce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::json_error;

pub const PREDICTION_VERSION: u32 = 1;

/// Default Mahalanobis threshold (squared form, roughly 95% coverage in one dimension).
pub const DEFAULT_RHO: f64 = 4.0;

/// Smallest variance handed out by the synthetic predictor, used when the noise is zero.
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedTrajectory {
    pub probability: f64,
    /// Predicted opponent positions for steps 1..=N (m).
    pub points: Vec<f64>,
    /// Per-step position variance (m²).
    pub variances: Vec<f64>,
}

impl PredictedTrajectory {
    pub fn horizon(&self) -> usize {
        self.points.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    trajectories: Vec<PredictedTrajectory>,
    rho: f64,
}

impl PredictionSet {
    /// Validates the trajectories and normalizes their probabilities to sum to one.
    pub fn new(mut trajectories: Vec<PredictedTrajectory>, rho: f64) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::schema("trajectories", "at least one trajectory is required"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::schema("rho", "must be positive"));
        }
        let horizon = trajectories[0].horizon();
        if horizon == 0 {
            return Err(Error::schema("trajectories[0].points", "must not be empty"));
        }
        for (i, tr) in trajectories.iter().enumerate() {
            if tr.points.len() != horizon {
                return Err(Error::schema(
                    format!("trajectories[{i}].points"),
                    format!("expected {horizon} points, found {}", tr.points.len()),
                ));
            }
            if tr.variances.len() != horizon {
                return Err(Error::schema(
                    format!("trajectories[{i}].variances"),
                    format!("expected {horizon} variances, found {}", tr.variances.len()),
                ));
            }
            if tr.variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::schema(
                    format!("trajectories[{i}].variances"),
                    "variances must be positive",
                ));
            }
            if tr.points.iter().any(|p| !p.is_finite()) {
                return Err(Error::schema(format!("trajectories[{i}].points"), "must be finite"));
            }
            if !(0.0..=1.0).contains(&tr.probability) {
                return Err(Error::schema(
                    format!("trajectories[{i}].probability"),
                    "must lie in [0, 1]",
                ));
            }
        }
        let total: f64 = trajectories.iter().map(|t| t.probability).sum();
        if total > 1.0 + 1e-6 {
            return Err(Error::schema("trajectories", "probabilities sum above 1"));
        }
        if total > 0.0 {
            for tr in &mut trajectories {
                tr.probability /= total;
            }
        } else {
            let uniform = 1.0 / trajectories.len() as f64;
            for tr in &mut trajectories {
                tr.probability = uniform;
            }
        }
        Ok(PredictionSet { trajectories, rho })
    }

    pub fn trajectories(&self) -> &[PredictedTrajectory] {
        &self.trajectories
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    /// The trajectory with the largest probability (first on ties).
    pub fn most_likely(&self) -> &PredictedTrajectory {
        let mut best = &self.trajectories[0];
        for tr in &self.trajectories[1..] {
            if tr.probability > best.probability {
                best = tr;
            }
        }
        best
    }

    /// Indices of trajectories whose range at step `t` contains `s_opp`.
    pub fn containing(&self, s_opp: f64, t: usize) -> impl Iterator<Item = usize> + '_ {
        self.trajectories
            .iter()
            .enumerate()
            .filter(move |(_, tr)| range_contains(tr, t, s_opp, self.rho))
            .map(|(i, _)| i)
    }
}

fn range_contains(pred: &PredictedTrajectory, t: usize, s_opp: f64, rho: f64) -> bool {
    if t == 0 || t > pred.horizon() {
        return false;
    }
    let d = s_opp - pred.points[t - 1];
    d * d / pred.variances[t - 1] <= rho
}

/// Whether `s_opp` lies in the Mahalanobis range of `pred` at step `t` (1-based).
pub fn in_confidence_range(pred: &PredictedTrajectory, t: usize, s_opp: f64, rho: f64) -> Result<bool> {
    if t == 0 || t > pred.horizon() {
        return Err(Error::invalid(format!(
            "step {t} outside prediction horizon 1..={}",
            pred.horizon()
        )));
    }
    Ok(range_contains(pred, t, s_opp, rho))
}

/// Sum of the probabilities of all trajectories whose range at step `t` contains `s_opp`.
pub fn confidence_weight(s_opp: f64, t: usize, preds: &PredictionSet) -> f64 {
    preds
        .containing(s_opp, t)
        .map(|i| preds.trajectories[i].probability)
        .sum()
}

/// Source of opponent predictions for the planner.
pub trait Predictor {
    /// Predict the opponent over the next `ground_truth.len()` steps. Predictors that do not
    /// use the ground truth are free to ignore it.
    fn predict(&mut self, ground_truth: &[f64]) -> Result<PredictionSet>;
}

/// Ground truth plus independent Gaussian noise on every point.
#[derive(Debug, Clone)]
pub struct SyntheticPredictor {
    pub sigma: f64,
    pub probabilities: Vec<f64>,
    pub variance: Option<f64>,
    pub rho: f64,
    rng: ChaCha8Rng,
}

impl SyntheticPredictor {
    /// `k` equally likely trajectories with noise `sigma` (m).
    pub fn new(sigma: f64, k: usize, seed: u64) -> Self {
        SyntheticPredictor {
            sigma,
            probabilities: vec![1.0 / k.max(1) as f64; k.max(1)],
            variance: None,
            rho: DEFAULT_RHO,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Predictor for SyntheticPredictor {
    fn predict(&mut self, ground_truth: &[f64]) -> Result<PredictionSet> {
        sample_predictions(
            ground_truth,
            self.sigma,
            &self.probabilities,
            self.variance,
            self.rho,
            &mut self.rng,
        )
    }
}

/// A fixed prediction set, e.g. loaded from a file produced by an external model.
#[derive(Debug, Clone)]
pub struct FixedPredictor(pub PredictionSet);

impl Predictor for FixedPredictor {
    fn predict(&mut self, ground_truth: &[f64]) -> Result<PredictionSet> {
        if !ground_truth.is_empty() && ground_truth.len() != self.0.horizon() {
            return Err(Error::invalid(format!(
                "prediction horizon {} does not match requested {}",
                self.0.horizon(),
                ground_truth.len()
            )));
        }
        Ok(self.0.clone())
    }
}

fn sample_predictions(
    ground_truth: &[f64],
    sigma: f64,
    probabilities: &[f64],
    variance: Option<f64>,
    rho: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    if probabilities.is_empty() {
        return Err(Error::invalid("at least one predicted trajectory is required"));
    }
    if ground_truth.is_empty() {
        return Err(Error::invalid("ground truth must not be empty"));
    }
    let var = variance.unwrap_or((sigma * sigma).max(VARIANCE_FLOOR));
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let trajectories = probabilities
        .iter()
        .map(|&p| PredictedTrajectory {
            probability: p,
            points: ground_truth
                .iter()
                .map(|&g| if sigma > 0.0 { g + noise.sample(rng) } else { g })
                .collect(),
            variances: vec![var; ground_truth.len()],
        })
        .collect();
    PredictionSet::new(trajectories, rho)
}

/// Noisy copies of `ground_truth`, deterministic in `seed`.
pub fn synthetic_predict(
    ground_truth: &[f64],
    sigma: f64,
    k: usize,
    probabilities: Option<&[f64]>,
    seed: u64,
) -> Result<PredictionSet> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let uniform = vec![1.0 / k as f64; k];
    let probs = probabilities.unwrap_or(&uniform);
    if probs.len() != k {
        return Err(Error::invalid("one probability per trajectory is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_predictions(ground_truth, sigma, probs, None, DEFAULT_RHO, &mut rng)
}

/// On-disk prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionDocument {
    pub version: u32,
    pub rho: f64,
    pub trajectories: Vec<PredictedTrajectory>,
}

pub fn load_predictions(text: &str, horizon: usize) -> Result<PredictionSet> {
    let doc: PredictionDocument = serde_json::from_str(text).map_err(json_error)?;
    if doc.version != PREDICTION_VERSION {
        return Err(Error::schema(
            "version",
            format!("unsupported version {}, expected {PREDICTION_VERSION}", doc.version),
        ));
    }
    let set = PredictionSet::new(doc.trajectories, doc.rho)?;
    if set.horizon() != horizon {
        return Err(Error::schema(
            "trajectories[0].points",
            format!(
                "expected {horizon} points to match the horizon, found {}",
                set.horizon()
            ),
        ));
    }
    Ok(set)
}

pub fn predictions_to_string(set: &PredictionSet) -> String {
    let doc = PredictionDocument {
        version: PREDICTION_VERSION,
        rho: set.rho,
        trajectories: set.trajectories.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("serializable")
}
