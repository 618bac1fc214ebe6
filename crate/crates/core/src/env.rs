//! A single front door over both environments, used by the dataset store,
//! the world models and the planner.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chemistry::{self, ChemAction, ChemConfig, ChemState, ChemWorld, CHEM_GRID};
use crate::error::{Error, Result};
use crate::noise::{self, NoiseCursor};
use crate::physics::{self, IntensityDomain, PhysicsAction, PhysicsConfig, PhysicsSetting, PhysicsState};
use crate::render::{self, Frame};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum EnvConfig {
    Physics(PhysicsConfig),
    Chemistry(ChemConfig),
}

impl EnvConfig {
    /// Parse JSON, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EnvConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Physics(c) => c.validate(),
            EnvConfig::Chemistry(c) => c.validate(),
        }
    }

    pub fn num_objects(&self) -> usize {
        match self {
            EnvConfig::Physics(c) => c.num_objects,
            EnvConfig::Chemistry(c) => c.num_objects,
        }
    }

    pub fn grid_size(&self) -> usize {
        match self {
            EnvConfig::Physics(c) => c.grid_size,
            EnvConfig::Chemistry(_) => CHEM_GRID,
        }
    }

    /// Configuration for the zero-shot split: Observed physics with
    /// intensities disjoint from training. No other setting has one.
    pub fn zero_shot(&self) -> Result<Self> {
        match self {
            EnvConfig::Physics(c) if c.setting == PhysicsSetting::Observed => {
                let mut c = *c;
                c.intensities = IntensityDomain::Novel;
                Ok(EnvConfig::Physics(c))
            }
            _ => Err(Error::Config(
                "a zero-shot split exists only for the observed physics setting".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnvState {
    Physics(PhysicsState),
    Chem(ChemState),
}

impl EnvState {
    pub fn as_physics(&self) -> Option<&PhysicsState> {
        match self {
            EnvState::Physics(s) => Some(s),
            EnvState::Chem(_) => None,
        }
    }

    pub fn as_chem(&self) -> Option<&ChemState> {
        match self {
            EnvState::Chem(s) => Some(s),
            EnvState::Physics(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvAction {
    Physics(PhysicsAction),
    Chem(ChemAction),
}

#[derive(Debug, Clone)]
enum World {
    Physics(PhysicsConfig),
    Chem(Box<ChemWorld>),
}

/// Number of random actions that produce a training target.
pub const TARGET_ACTIONS: usize = 10;

/// Independent random streams owned by one episode seed.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStreams {
    pub seed: u64,
}

impl EpisodeStreams {
    const RESET: u64 = 1;
    const ACTIONS: u64 = 2;
    const TARGET: u64 = 3;
    const TARGET_NOISE: u64 = 4;
    const ROLLOUT_NOISE: u64 = 5;
    const POLICY: u64 = 6;

    pub fn new(seed: u64) -> Self {
        EpisodeStreams { seed }
    }

    pub fn reset_rng(&self) -> rand_chacha::ChaCha8Rng {
        noise::rng_for(&[self.seed, Self::RESET])
    }

    pub fn action_rng(&self) -> rand_chacha::ChaCha8Rng {
        noise::rng_for(&[self.seed, Self::ACTIONS])
    }

    pub fn target_rng(&self) -> rand_chacha::ChaCha8Rng {
        noise::rng_for(&[self.seed, Self::TARGET])
    }

    pub fn policy_rng(&self) -> rand_chacha::ChaCha8Rng {
        noise::rng_for(&[self.seed, Self::POLICY])
    }

    /// Noise for the main trajectory; step 0 is consumed by the reset.
    pub fn rollout_noise(&self) -> NoiseCursor {
        NoiseCursor::new(noise::hash_words(&[self.seed, Self::ROLLOUT_NOISE]))
    }

    pub fn target_noise(&self) -> NoiseCursor {
        NoiseCursor::new(noise::hash_words(&[self.seed, Self::TARGET_NOISE]))
    }
}

/// A constructed environment (graph and tables built once).
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    world: World,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let world = match config {
            EnvConfig::Physics(c) => World::Physics(c),
            EnvConfig::Chemistry(c) => World::Chem(Box::new(ChemWorld::new(c)?)),
        };
        Ok(Env { config, world })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn chem(&self) -> Option<&ChemWorld> {
        match &self.world {
            World::Chem(w) => Some(w),
            World::Physics(_) => None,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.config.grid_size()
    }

    pub fn num_objects(&self) -> usize {
        self.config.num_objects()
    }

    pub fn num_actions(&self) -> usize {
        match &self.config {
            EnvConfig::Physics(c) => c.num_actions(),
            EnvConfig::Chemistry(c) => c.num_actions(),
        }
    }

    pub fn action(&self, index: usize) -> EnvAction {
        match &self.config {
            EnvConfig::Physics(_) => EnvAction::Physics(PhysicsAction::from_index(index)),
            EnvConfig::Chemistry(c) => EnvAction::Chem(ChemAction::from_index(index, c.num_colors)),
        }
    }

    pub fn action_index(&self, action: &EnvAction) -> usize {
        match (action, &self.config) {
            (EnvAction::Physics(a), _) => a.index(),
            (EnvAction::Chem(a), EnvConfig::Chemistry(c)) => a.index(c.num_colors),
            (EnvAction::Chem(a), _) => a.node,
        }
    }

    pub fn actions(&self) -> impl Iterator<Item = EnvAction> + '_ {
        (0..self.num_actions()).map(|i| self.action(i))
    }

    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvAction {
        self.action(rng.gen_range(0..self.num_actions()))
    }

    /// Initial state of the episode owned by `streams`, plus the noise cursor
    /// the trajectory continues from.
    pub fn start(&self, streams: EpisodeStreams) -> Result<(EnvState, NoiseCursor)> {
        let mut rng = streams.reset_rng();
        let cursor = streams.rollout_noise();
        match &self.world {
            World::Physics(c) => Ok((EnvState::Physics(physics::reset(c, &mut rng)?), cursor.advance())),
            World::Chem(w) => {
                let (s, next) = w.reset(cursor, &mut rng)?;
                Ok((EnvState::Chem(s), next))
            }
        }
    }

    pub fn step(&self, state: &EnvState, action: &EnvAction, cursor: NoiseCursor) -> Result<(EnvState, NoiseCursor)> {
        match (&self.world, state, action) {
            (World::Physics(c), EnvState::Physics(s), EnvAction::Physics(a)) => {
                Ok((EnvState::Physics(physics::step(s, *a, c.grid_size)), cursor.advance()))
            }
            (World::Chem(w), EnvState::Chem(s), EnvAction::Chem(a)) => {
                let (n, next) = w.step(s, *a, cursor)?;
                Ok((EnvState::Chem(n), next))
            }
            _ => Err(Error::Mismatch("state or action from a different environment".into())),
        }
    }

    /// Roll `count` random actions from `start` using the episode's target
    /// streams. Returns the final state and the actions taken.
    pub fn random_target(
        &self,
        start: &EnvState,
        streams: EpisodeStreams,
        count: usize,
    ) -> Result<(EnvState, Vec<EnvAction>)> {
        let mut rng = streams.target_rng();
        let mut cursor = streams.target_noise();
        let mut state = start.clone();
        let mut actions = Vec::with_capacity(count);
        for _ in 0..count {
            let a = self.random_action(&mut rng);
            let (n, next) = self.step(&state, &a, cursor)?;
            state = n;
            cursor = next;
            actions.push(a);
        }
        Ok((state, actions))
    }

    pub fn reward(&self, state: &EnvState, target: &EnvState) -> Result<f64> {
        match (state, target) {
            (EnvState::Physics(s), EnvState::Physics(t)) => physics::reward(s, t, self.grid_size()),
            (EnvState::Chem(s), EnvState::Chem(t)) => chemistry::reward(s, t),
            _ => Err(Error::Mismatch("states from different environments".into())),
        }
    }

    pub fn success(&self, state: &EnvState, target: &EnvState) -> bool {
        match (state, target) {
            (EnvState::Physics(s), EnvState::Physics(t)) => physics::success(s, t),
            (EnvState::Chem(s), EnvState::Chem(t)) => chemistry::success(s, t),
            _ => false,
        }
    }

    pub fn render(&self, state: &EnvState) -> Frame {
        match state {
            EnvState::Physics(s) => render::render_physics(s, self.grid_size()),
            EnvState::Chem(s) => render::render_chem(s, self.grid_size()),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        let cells = self.grid_size() * self.grid_size();
        match &self.config {
            EnvConfig::Physics(c) => c.num_objects * cells,
            EnvConfig::Chemistry(c) => c.num_objects * (c.num_colors + cells),
        }
    }

    /// Concatenated one-hot attributes per object: the cell for physics
    /// objects (weight rank order), color then cell for chemistry objects.
    pub fn embed<T: Real>(&self, state: &EnvState) -> Vec<T> {
        let g = self.grid_size();
        let cells = g * g;
        let mut out = vec![T::zero(); self.embedding_dim()];
        match (state, &self.config) {
            (EnvState::Physics(s), _) => {
                for (i, p) in s.positions.iter().enumerate() {
                    out[i * cells + p.row * g + p.col] = T::one();
                }
            }
            (EnvState::Chem(s), EnvConfig::Chemistry(c)) => {
                let width = c.num_colors + cells;
                for i in 0..s.colors.len() {
                    out[i * width + s.colors[i] as usize] = T::one();
                    let p = s.positions[i];
                    out[i * width + c.num_colors + p.row * g + p.col] = T::one();
                }
            }
            (EnvState::Chem(_), EnvConfig::Physics(_)) => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_shapes() {
        let p = EnvConfig::from_json(
            r#"{"env":"physics","M":5,"grid":5,"setting":"fixed_unobserved","palette":8,"seed":123}"#,
        )
        .unwrap();
        assert!(matches!(p, EnvConfig::Physics(c) if c.num_objects == 5 && c.setting == PhysicsSetting::FixedUnobserved));
        let c = EnvConfig::from_json(
            r#"{"env":"chemistry","M":5,"K":5,"graph":"chain:5","skewness":10.0,"layout":"static","seed":123}"#,
        )
        .unwrap();
        assert!(matches!(c, EnvConfig::Chemistry(c) if c.graph.n == 5));
        let err = EnvConfig::from_json(r#"{"env":"physics","grid":5,"setting":"observed","seed":1}"#).unwrap_err();
        assert!(err.to_string().contains("`M`"), "{err}");
    }

    #[test]
    fn zero_shot_only_for_observed_physics() {
        let obs = EnvConfig::Physics(PhysicsConfig::new(3, PhysicsSetting::Observed, 0));
        assert!(matches!(obs.zero_shot().unwrap(), EnvConfig::Physics(c) if c.intensities == IntensityDomain::Novel));
        let un = EnvConfig::Physics(PhysicsConfig::new(3, PhysicsSetting::Unobserved, 0));
        assert!(un.zero_shot().is_err());
    }

    #[test]
    fn embedding_is_one_hot_per_attribute() {
        let env = Env::new(EnvConfig::Chemistry(ChemConfig::new("chain:3".parse().unwrap(), 4, 1.0, 0))).unwrap();
        let (s, _) = env.start(EpisodeStreams::new(3)).unwrap();
        let e: Vec<f64> = env.embed(&s);
        assert_eq!(e.len(), 3 * (4 + 25));
        assert_eq!(e.iter().sum::<f64>(), 6.0);
    }

    #[test]
    fn random_target_is_reproducible() {
        let env = Env::new(EnvConfig::Physics(PhysicsConfig::new(3, PhysicsSetting::Observed, 0))).unwrap();
        let streams = EpisodeStreams::new(17);
        let (s, _) = env.start(streams).unwrap();
        let a = env.random_target(&s, streams, TARGET_ACTIONS).unwrap();
        let b = env.random_target(&s, streams, TARGET_ACTIONS).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), TARGET_ACTIONS);
    }
}
