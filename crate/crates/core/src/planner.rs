//! Reward prediction, one-step greedy planning and the downstream RL protocol.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvAction, EnvState, EpisodeStreams};
use crate::error::{Error, Result};
use crate::noise::hash_words;
use crate::scalar::Real;
use crate::store::Episode;
use crate::world_models::{OracleModel, WorldModel};

/// Reward features of a state relative to a target.
///
/// Physics: per object, the row and column distance to its target cell.
/// Chemistry: per object, whether its color agrees with the target.
pub fn reward_features<T: Real>(state: &EnvState, target: &EnvState) -> Result<Vec<T>> {
    match (state, target) {
        (EnvState::Physics(s), EnvState::Physics(t)) if s.positions.len() == t.positions.len() => Ok(s
            .positions
            .iter()
            .zip(&t.positions)
            .flat_map(|(a, b)| [T::of_usize(a.row.abs_diff(b.row)), T::of_usize(a.col.abs_diff(b.col))])
            .collect()),
        (EnvState::Chem(s), EnvState::Chem(t)) if s.colors.len() == t.colors.len() => Ok(s
            .colors
            .iter()
            .zip(&t.colors)
            .map(|(a, b)| if a == b { T::one() } else { T::zero() })
            .collect()),
        _ => Err(Error::Mismatch("state and target differ in kind or size".into())),
    }
}

/// Linear reward model over [`reward_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardPredictor<T> {
    pub weights: Vec<T>,
    pub bias: T,
    /// Set when every training reward was identical; the predictor is then
    /// that constant.
    pub degenerate: bool,
}

impl<T: Real> RewardPredictor<T> {
    pub fn constant(num_features: usize, value: T) -> Self {
        RewardPredictor { weights: vec![T::zero(); num_features], bias: value, degenerate: true }
    }

    pub fn predict(&self, state: &EnvState, target: &EnvState) -> Result<T> {
        let x = reward_features::<T>(state, target)?;
        if x.len() != self.weights.len() {
            return Err(Error::Mismatch(format!("{} features, predictor has {}", x.len(), self.weights.len())));
        }
        Ok(self.bias + x.iter().zip(&self.weights).map(|(&a, &w)| a * w).sum::<T>())
    }
}

/// Least-squares fit of the reward labels of every visited state against the
/// episode target.
pub fn fit_reward_predictor<T: Real>(env: &Env, episodes: &[Episode]) -> Result<RewardPredictor<T>> {
    let mut xs: Vec<Vec<T>> = Vec::new();
    let mut ys: Vec<T> = Vec::new();
    for ep in episodes {
        for (s, &r) in ep.states[1..].iter().zip(&ep.rewards) {
            xs.push(reward_features(s, &ep.target)?);
            ys.push(T::of(r));
        }
    }
    let d = match env.config() {
        crate::EnvConfig::Physics(c) => 2 * c.num_objects,
        crate::EnvConfig::Chemistry(c) => c.num_objects,
    };
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Mismatch("episodes from a different environment".into()));
    }
    let Some(&first) = ys.first() else {
        return Ok(RewardPredictor::constant(d, T::zero()));
    };
    if ys.iter().all(|&y| y == first) {
        return Ok(RewardPredictor::constant(d, first));
    }
    // Solved in double precision via SVD, which also covers features the
    // data never varies.
    let x = DMatrix::from_fn(xs.len(), d + 1, |i, j| if j < d { xs[i][j].as_f64() } else { 1.0 });
    let y = DVector::from_iterator(ys.len(), ys.iter().map(|v| v.as_f64()));
    let sol = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::Mismatch(format!("least squares failed: {e}")))?;
    let mut w: Vec<T> = sol.iter().map(|&v| T::of(v)).collect();
    let bias = w.pop().unwrap_or_else(T::zero);
    Ok(RewardPredictor { weights: w, bias, degenerate: false })
}

/// Reward used to score model predictions.
#[derive(Debug, Clone, Copy)]
pub enum RewardSource<'a, T> {
    /// The environment's true reward.
    Oracle,
    Learned(&'a RewardPredictor<T>),
}

/// The action whose one-step model prediction scores highest against the
/// target; the lowest action index wins ties.
pub fn greedy_policy<T: Real>(
    env: &Env,
    model: &dyn WorldModel,
    reward: RewardSource<'_, T>,
    state: &EnvState,
    target: &EnvState,
) -> Result<EnvAction> {
    let mut best: Option<(f64, EnvAction)> = None;
    for a in env.actions() {
        let next = model.predict(state, &a);
        let r = match reward {
            RewardSource::Oracle => env.reward(&next, target)?,
            RewardSource::Learned(p) => p.predict(&next, target)?.as_f64(),
        };
        if best.as_ref().is_none_or(|(b, _)| r > *b) {
            best = Some((r, a));
        }
    }
    best.map(|(_, a)| a).ok_or_else(|| Error::Config("empty action set".into()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// Reward of the state reached after the last step.
    #[default]
    Final,
    /// Sum of the rewards of every step.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Target distance in random actions, also the episode length.
    pub k: usize,
    pub episodes: usize,
    pub seed: u64,
    #[serde(default)]
    pub return_mode: ReturnMode,
}

impl EvalProtocol {
    pub fn new(k: usize, episodes: usize, seed: u64) -> Self {
        EvalProtocol { k, episodes, seed, return_mode: ReturnMode::Final }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Streams of evaluation episode `index`.
    pub fn streams(&self, index: usize) -> EpisodeStreams {
        EpisodeStreams::new(hash_words(&[self.seed, index as u64, 0x706c_616e]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlScore {
    pub mean_return: f64,
    pub success_rate: f64,
}

pub enum Policy<'a> {
    Greedy { model: &'a dyn WorldModel, reward: RewardSource<'a, f64> },
    /// Uniform random actions.
    Random,
    /// Physics: greedy on the true dynamics and reward. Chemistry: replay of
    /// the actions that produced the target.
    Optimal,
}

/// Run `policy` on every episode of the protocol.
pub fn evaluate_policy(env: &Env, policy: &Policy<'_>, protocol: &EvalProtocol) -> Result<RlScore> {
    protocol.validate()?;
    let oracle = match policy {
        Policy::Optimal => Some(OracleModel::new(*env.config())?),
        _ => None,
    };
    let outcomes: Vec<(f64, bool)> = (0..protocol.episodes)
        .into_par_iter()
        .map(|i| {
            let streams = protocol.streams(i);
            let (start, mut cursor) = env.start(streams)?;
            let (target, target_actions) = env.random_target(&start, streams, protocol.k)?;
            let mut rng = streams.policy_rng();
            let mut state = start;
            let mut total = 0.0;
            for step in 0..protocol.k {
                let action = match policy {
                    Policy::Greedy { model, reward } => greedy_policy(env, *model, *reward, &state, &target)?,
                    Policy::Random => env.random_action(&mut rng),
                    Policy::Optimal => match (&state, &oracle) {
                        (EnvState::Physics(_), Some(m)) => {
                            greedy_policy::<f64>(env, m, RewardSource::Oracle, &state, &target)?
                        }
                        _ => target_actions[step],
                    },
                };
                let (next, c) = env.step(&state, &action, cursor)?;
                cursor = c;
                state = next;
                total += env.reward(&state, &target)?;
            }
            let ret = match protocol.return_mode {
                ReturnMode::Final => env.reward(&state, &target)?,
                ReturnMode::Sum => total,
            };
            Ok((ret, env.success(&state, &target)))
        })
        .collect::<Result<_>>()?;
    let n = outcomes.len().max(1) as f64;
    Ok(RlScore {
        mean_return: outcomes.iter().map(|o| o.0).sum::<f64>() / n,
        success_rate: outcomes.iter().filter(|o| o.1).count() as f64 / n,
    })
}

/// Greedy planning through `model` under `reward`.
pub fn evaluate_rl(
    env: &Env,
    model: &dyn WorldModel,
    reward: RewardSource<'_, f64>,
    protocol: &EvalProtocol,
) -> Result<RlScore> {
    evaluate_policy(env, &Policy::Greedy { model, reward }, protocol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub k: usize,
    pub return_mode: ReturnMode,
    pub mean_return: f64,
    pub success: f64,
    pub baseline_random: RlScore,
    pub baseline_optimal: RlScore,
}

/// Greedy score plus both baselines on the same protocol.
pub fn plan_report(
    env: &Env,
    model: &dyn WorldModel,
    reward: RewardSource<'_, f64>,
    protocol: &EvalProtocol,
) -> Result<PlanReport> {
    let greedy = evaluate_rl(env, model, reward, protocol)?;
    Ok(PlanReport {
        k: protocol.k,
        return_mode: protocol.return_mode,
        mean_return: greedy.mean_return,
        success: greedy.success_rate,
        baseline_random: evaluate_policy(env, &Policy::Random, protocol)?,
        baseline_optimal: evaluate_policy(env, &Policy::Optimal, protocol)?,
    })
}
