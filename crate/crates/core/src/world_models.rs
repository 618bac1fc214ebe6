//! Symbolic world models.
//!
//! The encoder and decoder are exact (`Env::embed` on symbolic states), so the
//! models differ only in how their transition is structured:
//!
//! * [`OracleModel`] runs the true dynamics, taking modes where they are stochastic.
//! * [`TabularCausalModel`] keeps one count table per node over its full parent
//!   set under a graph hypothesis (the modular analogue).
//! * [`PairwiseModel`] predicts each node from factors that each see the
//!   action plus one other node, combined as a product of experts.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::env::{Env, EnvAction, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::physics::{self, Cell, Direction, Outcome, PhysicsAction, PhysicsState};
use crate::chemistry::{ChemAction, ChemState};
use crate::scalar::argmax;
use crate::scm::{descendants, Dag};
use crate::metrics::{hits_at_1, mrr, reconstruction_error, MetricsReport, RankingBatch};
use crate::render::Frame;
use crate::store::Episode;
use rayon::prelude::*;

/// Dirichlet pseudo-count shared by every count-based model.
pub const ALPHA: f64 = 1.0;

pub trait WorldModel: Sync {
    /// Argmax-decoded next state.
    fn predict(&self, state: &EnvState, action: &EnvAction) -> EnvState;
}

/// Compose `actions.len()` one-step predictions. No actions is the identity.
pub fn predict_k(model: &dyn WorldModel, state: &EnvState, actions: &[EnvAction]) -> EnvState {
    actions
        .iter()
        .fold(state.clone(), |s, a| model.predict(&s, a))
}

/// The environment's own dynamics.
pub struct OracleModel {
    env: Env,
}

impl OracleModel {
    pub fn new(config: EnvConfig) -> Result<Self> {
        Ok(OracleModel { env: Env::new(config)? })
    }
}

impl WorldModel for OracleModel {
    fn predict(&self, state: &EnvState, action: &EnvAction) -> EnvState {
        match (state, action) {
            (EnvState::Physics(s), EnvAction::Physics(a)) => {
                EnvState::Physics(physics::step(s, *a, self.env.grid_size()))
            }
            (EnvState::Chem(s), EnvAction::Chem(a)) => match self.env.chem() {
                Some(w) => EnvState::Chem(w.mode_step(s, *a)),
                None => state.clone(),
            },
            _ => state.clone(),
        }
    }
}

/// Smoothed row `(count + alpha) / (total + alpha * k)`.
pub fn smoothed(counts: &[u64], alpha: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + alpha * counts.len() as f64;
    counts.iter().map(|&c| (c as f64 + alpha) / denom).collect()
}

/// Per-node conditional counts over the hypothesised parents.
#[derive(Debug, Clone, PartialEq)]
pub struct ChemTables {
    dag: Dag,
    k: usize,
    alpha: f64,
    /// node -> condition index -> counts over next colors
    counts: Vec<HashMap<usize, Vec<u64>>>,
}

impl ChemTables {
    fn new(dag: Dag, k: usize, alpha: f64) -> Self {
        let n = dag.n();
        ChemTables { dag, k, alpha, counts: vec![HashMap::new(); n] }
    }

    fn condition(&self, node: usize, colors: &[u8]) -> usize {
        self.dag
            .parents(node)
            .iter()
            .fold(0, |acc, &p| acc * self.k + colors[p] as usize)
    }

    fn observe(&mut self, node: usize, colors: &[u8]) {
        let cond = self.condition(node, colors);
        let k = self.k;
        self.counts[node].entry(cond).or_insert_with(|| vec![0; k])[colors[node] as usize] += 1;
    }

    /// Smoothed distribution of `node` given the parent colors in `colors`.
    pub fn row(&self, node: usize, colors: &[u8]) -> Vec<f64> {
        match self.counts[node].get(&self.condition(node, colors)) {
            Some(c) => smoothed(c, self.alpha),
            None => vec![1.0 / self.k as f64; self.k],
        }
    }

    fn mode(&self, node: usize, colors: &[u8]) -> u8 {
        match self.counts[node].get(&self.condition(node, colors)) {
            Some(c) => argmax(c) as u8,
            None => 0,
        }
    }

    fn predict(&self, s: &ChemState, a: ChemAction) -> ChemState {
        let mut colors = s.colors.clone();
        colors[a.node] = a.color as u8;
        let affected = descendants(&self.dag, a.node);
        for &v in self.dag.topo() {
            if affected.contains(&v) {
                colors[v] = self.mode(v, &colors);
            }
        }
        ChemState { colors, positions: s.positions.clone(), shapes: s.shapes.clone() }
    }
}

/// Occupancy of the destination cell, from the mover's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Dest {
    OffGrid,
    Empty,
    /// Another object; its rank when the hypothesis links the pair.
    Object(Option<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Beyond {
    OffGrid,
    Empty,
    Occupied,
}

/// Condition of a physics transition: mover rank, direction, and the local
/// occupancy pattern in front of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PushKey {
    pub rank: usize,
    pub direction: Direction,
    pub dest: Dest,
    pub beyond: Beyond,
}

const OUTCOMES: [Outcome; 3] = [Outcome::Blocked, Outcome::Moved, Outcome::Pushed];

/// Outcome counts per local condition. Objects are addressed by slot, and
/// states keep objects heaviest first, so slot equals action rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsTables {
    dag: Dag,
    grid: usize,
    alpha: f64,
    counts: BTreeMap<PushKey, [u64; 3]>,
}

impl PhysicsTables {
    fn key(&self, s: &PhysicsState, a: PhysicsAction) -> Option<(PushKey, Option<Cell>, Option<(usize, Cell)>)> {
        let mover = *s.positions.get(a.rank)?;
        let dest_cell = mover.offset(a.direction, self.grid);
        let (dest, beyond, push) = match dest_cell {
            None => (Dest::OffGrid, Beyond::OffGrid, None),
            Some(d) => match s.occupant(d) {
                None => (Dest::Empty, Beyond::OffGrid, None),
                Some(b) => {
                    let linked = self.dag.has_edge(a.rank, b) || self.dag.has_edge(b, a.rank);
                    let beyond_cell = d.offset(a.direction, self.grid);
                    let beyond = match beyond_cell {
                        None => Beyond::OffGrid,
                        Some(c) if s.occupant(c).is_some() => Beyond::Occupied,
                        Some(_) => Beyond::Empty,
                    };
                    (Dest::Object(linked.then_some(b)), beyond, beyond_cell.map(|c| (b, c)))
                }
            },
        };
        Some((PushKey { rank: a.rank, direction: a.direction, dest, beyond }, dest_cell, push))
    }

    fn observe(&mut self, s: &PhysicsState, a: PhysicsAction, next: &PhysicsState) {
        let Some((key, _, _)) = self.key(s, a) else { return };
        let moved = s.positions.iter().zip(&next.positions).filter(|(x, y)| x != y).count();
        let outcome = match moved {
            0 => 0,
            1 => 1,
            _ => 2,
        };
        self.counts.entry(key).or_insert([0; 3])[outcome] += 1;
    }

    fn predict(&self, s: &PhysicsState, a: PhysicsAction) -> PhysicsState {
        let Some((key, dest, push)) = self.key(s, a) else { return s.clone() };
        let outcome = self.counts.get(&key).map_or(Outcome::Blocked, |c| OUTCOMES[argmax(c)]);
        let mut next = s.clone();
        match (outcome, dest, push) {
            (Outcome::Moved, Some(d), None) => next.positions[a.rank] = d,
            (Outcome::Pushed, Some(d), Some((b, beyond))) if s.occupant(beyond).is_none() => {
                next.positions[b] = beyond;
                next.positions[a.rank] = d;
            }
            _ => {}
        }
        next
    }

    /// Smoothed outcome distribution for a condition.
    pub fn row(&self, key: &PushKey) -> [f64; 3] {
        let c = self.counts.get(key).copied().unwrap_or([0; 3]);
        let r = smoothed(&c, self.alpha);
        [r[0], r[1], r[2]]
    }

    pub fn conditions_seen(&self) -> usize {
        self.counts.len()
    }
}

/// Count-based model over a graph hypothesis with full parent sets.
#[derive(Debug, Clone, PartialEq)]
pub enum TabularCausalModel {
    Physics(PhysicsTables),
    Chem(ChemTables),
}

/// Fit a tabular model to episodes under the graph hypothesis `dag`.
///
/// Chemistry: every reset state is an observational sample for all nodes;
/// every transition is a sample for each descendant (under `dag`) of the
/// intervened node. Physics: every transition is a sample of its push key.
pub fn fit_tabular(config: &EnvConfig, episodes: &[Episode], dag: &Dag, alpha: f64) -> Result<TabularCausalModel> {
    let m = config.num_objects();
    if dag.n() != m {
        return Err(Error::Mismatch(format!("{}-node hypothesis for {m} objects", dag.n())));
    }
    if let Some(ep) = episodes.iter().find(|ep| ep.config.num_objects() != m) {
        return Err(Error::Mismatch(format!(
            "episode {} has {} objects, expected {m}",
            ep.seed,
            ep.config.num_objects()
        )));
    }
    match config {
        EnvConfig::Physics(c) => {
            let mut t = PhysicsTables { dag: dag.clone(), grid: c.grid_size, alpha, counts: BTreeMap::new() };
            for ep in episodes {
                for (i, a) in ep.actions.iter().enumerate() {
                    if let (EnvState::Physics(s), EnvAction::Physics(a), EnvState::Physics(n)) =
                        (&ep.states[i], a, &ep.states[i + 1])
                    {
                        t.observe(s, *a, n);
                    }
                }
            }
            Ok(TabularCausalModel::Physics(t))
        }
        EnvConfig::Chemistry(c) => {
            let mut t = ChemTables::new(dag.clone(), c.num_colors, alpha);
            let desc: Vec<_> = (0..m).map(|v| descendants(dag, v)).collect();
            for ep in episodes {
                if let Some(EnvState::Chem(s0)) = ep.states.first() {
                    for node in 0..m {
                        t.observe(node, &s0.colors);
                    }
                }
                for (i, a) in ep.actions.iter().enumerate() {
                    if let (EnvAction::Chem(a), EnvState::Chem(n)) = (a, &ep.states[i + 1]) {
                        for &node in &desc[a.node] {
                            t.observe(node, &n.colors);
                        }
                    }
                }
            }
            Ok(TabularCausalModel::Chem(t))
        }
    }
}

impl TabularCausalModel {
    /// JSON dump of the estimated tables.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            TabularCausalModel::Chem(t) => {
                let nodes: Vec<_> = (0..t.dag.n())
                    .map(|i| {
                        let mut rows: Vec<(usize, Vec<f64>)> =
                            t.counts[i].iter().map(|(&c, v)| (c, smoothed(v, t.alpha))).collect();
                        rows.sort_by_key(|r| r.0);
                        serde_json::json!({
                            "parents": t.dag.parents(i),
                            "rows": rows.into_iter().map(|(c, r)| serde_json::json!({"condition": c, "probs": r})).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                serde_json::json!({"model": "tabular", "env": "chemistry", "alpha": t.alpha, "dag": t.dag, "nodes": nodes})
            }
            TabularCausalModel::Physics(t) => {
                let rows: Vec<_> = t
                    .counts
                    .keys()
                    .map(|k| serde_json::json!({"key": k, "probs": t.row(k)}))
                    .collect();
                serde_json::json!({"model": "tabular", "env": "physics", "alpha": t.alpha, "dag": t.dag, "rows": rows})
            }
        }
    }
}

impl WorldModel for TabularCausalModel {
    fn predict(&self, state: &EnvState, action: &EnvAction) -> EnvState {
        match (self, state, action) {
            (TabularCausalModel::Physics(t), EnvState::Physics(s), EnvAction::Physics(a)) => {
                EnvState::Physics(t.predict(s, *a))
            }
            (TabularCausalModel::Chem(t), EnvState::Chem(s), EnvAction::Chem(a)) => EnvState::Chem(t.predict(s, *a)),
            _ => state.clone(),
        }
    }
}

/// Factor tables for ordered node pairs `(i, j)`: node i's next color given
/// the action as seen by i and j (the color set on that node, or nothing),
/// i's current color and j's current color.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseModel {
    m: usize,
    k: usize,
    alpha: f64,
    /// `(i, j)` flattened as `i * m + j` -> key -> counts
    factors: Vec<HashMap<(usize, usize, u8, u8), Vec<u64>>>,
}

impl PairwiseModel {
    fn partners(&self, i: usize) -> Vec<usize> {
        if self.m == 1 {
            vec![0]
        } else {
            (0..self.m).filter(|&j| j != i).collect()
        }
    }

    fn key(&self, a: ChemAction, s: &ChemState, i: usize, j: usize) -> (usize, usize, u8, u8) {
        let tag = |x: usize| if a.node == x { a.color } else { self.k };
        (tag(i), tag(j), s.colors[i], s.colors[j])
    }

    /// Product-of-experts log score for each candidate color of node `i`.
    pub fn scores(&self, s: &ChemState, a: ChemAction, i: usize) -> Vec<f64> {
        let mut logp = vec![0.0; self.k];
        for j in self.partners(i) {
            let row = match self.factors[i * self.m + j].get(&self.key(a, s, i, j)) {
                Some(c) => smoothed(c, self.alpha),
                None => vec![1.0 / self.k as f64; self.k],
            };
            for (acc, p) in logp.iter_mut().zip(row) {
                *acc += p.ln();
            }
        }
        logp
    }

    /// Renormalised product-of-experts distribution for node `i`.
    pub fn distribution(&self, s: &ChemState, a: ChemAction, i: usize) -> Vec<f64> {
        crate::scalar::softmax(&self.scores(s, a, i))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let factors: Vec<_> = (0..self.m)
            .flat_map(|i| self.partners(i).into_iter().map(move |j| (i, j)))
            .map(|(i, j)| {
                let mut rows: Vec<_> = self.factors[i * self.m + j]
                    .iter()
                    .map(|(key, c)| (*key, smoothed(c, self.alpha)))
                    .collect();
                rows.sort_by_key(|r| r.0);
                serde_json::json!({
                    "node": i,
                    "partner": j,
                    "rows": rows.into_iter().map(|(key, p)| serde_json::json!({"key": [key.0, key.1, key.2, key.3], "probs": p})).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({"model": "pairwise", "alpha": self.alpha, "factors": factors})
    }
}

pub fn fit_pairwise(config: &EnvConfig, episodes: &[Episode], alpha: f64) -> Result<PairwiseModel> {
    let EnvConfig::Chemistry(c) = config else {
        return Err(Error::Config("the pairwise model is defined for the chemistry environment".into()));
    };
    let m = c.num_objects;
    let mut model = PairwiseModel { m, k: c.num_colors, alpha, factors: vec![HashMap::new(); m * m] };
    for ep in episodes {
        for (t, a) in ep.actions.iter().enumerate() {
            let (EnvState::Chem(s), EnvAction::Chem(a), EnvState::Chem(n)) = (&ep.states[t], a, &ep.states[t + 1]) else {
                return Err(Error::Mismatch("non-chemistry episode".into()));
            };
            for i in 0..m {
                for j in model.partners(i) {
                    let key = model.key(*a, s, i, j);
                    let k = model.k;
                    model.factors[i * m + j].entry(key).or_insert_with(|| vec![0; k])[n.colors[i] as usize] += 1;
                }
            }
        }
    }
    Ok(model)
}

impl WorldModel for PairwiseModel {
    fn predict(&self, state: &EnvState, action: &EnvAction) -> EnvState {
        let (EnvState::Chem(s), EnvAction::Chem(a)) = (state, action) else {
            return state.clone();
        };
        let colors = (0..self.m).map(|i| argmax(&self.scores(s, *a, i)) as u8).collect();
        EnvState::Chem(ChemState { colors, positions: s.positions.clone(), shapes: s.shapes.clone() })
    }
}

/// Rank k-step predictions against the true k-step states for every window
/// `[t, t + k]` of every episode. The true states of each horizon form its
/// reference buffer.
pub fn evaluate(model: &dyn WorldModel, env: &Env, episodes: &[Episode], horizons: &[usize]) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for &k in horizons {
        let windows: Vec<(&Episode, usize)> = episodes
            .iter()
            .flat_map(|ep| (0..=ep.steps().saturating_sub(k)).filter(move |_| ep.steps() >= k).map(move |t| (ep, t)))
            .collect();
        let results: Vec<(EnvState, &EnvState)> = windows
            .par_iter()
            .map(|&(ep, t)| (predict_k(model, &ep.states[t], &ep.actions[t..t + k]), &ep.states[t + k]))
            .collect();
        let predicted: Vec<Vec<f64>> = results.iter().map(|(p, _)| env.embed(p)).collect();
        let truth: Vec<Vec<f64>> = results.iter().map(|(_, t)| env.embed(t)).collect();
        let batch = RankingBatch::new(predicted, truth)?;
        let frames_p: Vec<Frame> = results.iter().map(|(p, _)| env.render(p)).collect();
        let frames_t: Vec<Frame> = results.iter().map(|(_, t)| env.render(t)).collect();
        let key = k.to_string();
        report.h1.insert(key.clone(), hits_at_1(&batch));
        report.mrr.insert(key.clone(), mrr(&batch));
        report.recon.insert(key, reconstruction_error(&frames_p, &frames_t)?);
    }
    Ok(report)
}
