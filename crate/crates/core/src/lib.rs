//! Prediction-heuristic Monte Carlo tree search for two-agent longitudinal interaction planning.
//!
//! The ego agent leads a Stackelberg game against one opponent on crossing reference paths.
//! Plans come from a game-tree search whose selection statistics are weighted by how well tree
//! states agree with trajectory predictions; the opponent's courtesy is estimated online from
//! its observed motion.

pub mod baselines;
pub mod error;
pub mod inference;
pub mod prediction;
pub mod reward;
pub mod rng;
pub mod scenario;
pub mod search;
pub mod simulator;

pub use error::{Error, Result};
pub use prediction::{PredictedTrajectory, PredictionSet, Predictor, SyntheticPredictor};
pub use reward::{RewardPair, RewardParams};
pub use scenario::{ActionSet, Agent, AgentState, JointState, PathSpec, Scenario, VehicleGeometry};
pub use search::{search, PlanResult, SearchConfig, SearchOutcome, SearchStats};
