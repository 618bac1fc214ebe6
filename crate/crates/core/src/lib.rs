//! Seedable environments for studying causal induction in model-based RL,
//! plus the evaluation machinery around them.
//!
//! * [`physics`]: weighted-block pushing (an acyclic tournament of weights).
//! * [`chemistry`]: color transitions over an arbitrary DAG with learned-looking CPTs.
//! * [`store`]: interventional episode datasets on disk.
//! * [`world_models`], [`metrics`], [`discovery`], [`planner`]: evaluation.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix `f64`.

pub mod chemistry;
pub mod discovery;
pub mod env;
pub mod error;
pub mod graph_gen;
pub mod metrics;
pub mod noise;
pub mod physics;
pub mod planner;
pub mod render;
pub mod scalar;
pub mod scm;
pub mod store;
pub mod world_models;

pub use env::{Env, EnvAction, EnvConfig, EnvState, EpisodeStreams};
pub use error::{Error, Result};
pub use graph_gen::{GraphKind, GraphSpec};
pub use scalar::Real;
pub use scm::{Dag, InterventionKind, Scm};

/// Conditional tables in double precision.
pub type Cpt = chemistry::CptModel<f64>;
/// Ranking batch in double precision.
pub type Batch = metrics::RankingBatch<f64>;
/// Reward predictor in double precision.
pub type LinearReward = planner::RewardPredictor<f64>;

