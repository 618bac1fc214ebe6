//! Color-transition environment over an arbitrary DAG.
//!
//! Each object's color is a categorical variable. Its conditional
//! distribution given the parents' colors comes from a small randomly
//! initialised network; the initialisation scale (skewness) sets how peaked
//! the distributions are. An action pins one object's color and redraws
//! every descendant in topological order.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_gen::{self, GraphSpec};
use crate::noise::{self, NoiseCursor};
use crate::physics::Cell;
use crate::render::{NUM_SHAPES, PALETTE};
use crate::scalar::{argmax, softmax, Real};
use crate::scm::{Dag, Mechanisms, Scm};

/// Hidden width of the per-node conditional network.
pub const HIDDEN: usize = 32;
/// Side of the chemistry grid.
pub const CHEM_GRID: usize = 5;

#[derive(Debug, Clone, PartialEq)]
enum NodeNet<T> {
    Root {
        logits: Vec<T>,
    },
    Hidden {
        /// `HIDDEN x (parents * k)`, row-major.
        w1: Vec<T>,
        b1: Vec<T>,
        /// `k x HIDDEN`, row-major.
        w2: Vec<T>,
        b2: Vec<T>,
    },
}

/// Per-node conditional color distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct CptModel<T> {
    k: usize,
    sigma: f64,
    seed: u64,
    parents: Vec<Vec<usize>>,
    nets: Vec<NodeNet<T>>,
}

/// Standard normal from two hashed uniforms (Box-Muller).
fn gaussian(seed: u64, node: usize, index: usize) -> f64 {
    let u1 = noise::uniform(seed, node as u64, 2 * index as u64);
    let u2 = noise::uniform(seed, node as u64, 2 * index as u64 + 1);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Sample the network parameters for every node. All weights and biases are
/// i.i.d. `N(0, sigma^2)`; the draw is a pure function of `(dag, k, sigma, seed)`.
pub fn build_cpt<T: Real>(dag: &Dag, k: usize, sigma: f64, seed: u64) -> Result<CptModel<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("skewness must be positive, got {sigma}")));
    }
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 colors, got {k}")));
    }
    let param_seed = noise::hash_words(&[seed, 0x6370_74]);
    let mut parents = Vec::with_capacity(dag.n());
    let mut nets = Vec::with_capacity(dag.n());
    for node in 0..dag.n() {
        let pa = dag.parents(node);
        let mut next = 0usize;
        let mut draw = |len: usize| -> Vec<T> {
            (0..len)
                .map(|_| {
                    next += 1;
                    T::of(sigma * gaussian(param_seed, node, next - 1))
                })
                .collect()
        };
        let net = if pa.is_empty() {
            NodeNet::Root { logits: draw(k) }
        } else {
            let inputs = pa.len() * k;
            let w1 = draw(HIDDEN * inputs);
            let b1 = draw(HIDDEN);
            let w2 = draw(k * HIDDEN);
            let b2 = draw(k);
            NodeNet::Hidden { w1, b1, w2, b2 }
        };
        parents.push(pa);
        nets.push(net);
    }
    Ok(CptModel {
        k,
        sigma,
        seed,
        parents,
        nets,
    })
}

impl<T: Real> CptModel<T> {
    pub fn num_colors(&self) -> usize {
        self.k
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    /// Distribution of `node`'s color given its parents' colors (ascending parent id).
    pub fn conditional(&self, node: usize, parent_values: &[usize]) -> Vec<T> {
        match &self.nets[node] {
            NodeNet::Root { logits } => softmax(logits),
            NodeNet::Hidden { w1, b1, w2, b2 } => {
                let k = self.k;
                let inputs = parent_values.len() * k;
                // one-hot input: only the active columns contribute
                let hidden: Vec<T> = (0..HIDDEN)
                    .map(|h| {
                        let row = &w1[h * inputs..(h + 1) * inputs];
                        let pre = parent_values
                            .iter()
                            .enumerate()
                            .fold(b1[h], |acc, (p, &c)| acc + row[p * k + c]);
                        pre.tanh()
                    })
                    .collect();
                let logits: Vec<T> = (0..k)
                    .map(|c| {
                        w2[c * HIDDEN..(c + 1) * HIDDEN]
                            .iter()
                            .zip(&hidden)
                            .fold(b2[c], |acc, (&w, &h)| acc + w * h)
                    })
                    .collect();
                softmax(&logits)
            }
        }
    }

    /// Most likely color, lowest index on ties.
    pub fn mode(&self, node: usize, parent_values: &[usize]) -> usize {
        argmax(&self.conditional(node, parent_values))
    }

    /// Number of parent configurations of `node`.
    pub fn num_conditions(&self, node: usize) -> usize {
        self.k.pow(self.parents[node].len() as u32)
    }

    /// Parent colors for condition index `c`; the first parent is the most
    /// significant digit.
    pub fn condition(&self, node: usize, mut c: usize) -> Vec<usize> {
        let p = self.parents[node].len();
        let mut out = vec![0; p];
        for slot in out.iter_mut().rev() {
            *slot = c % self.k;
            c /= self.k;
        }
        out
    }

    /// Every conditional row of `node`, in condition-index order.
    pub fn rows(&self, node: usize) -> Vec<Vec<T>> {
        (0..self.num_conditions(node))
            .map(|c| self.conditional(node, &self.condition(node, c)))
            .collect()
    }

    /// Inspectable table form (used for golden files).
    pub fn to_table(&self) -> CptTable {
        CptTable {
            k: self.k,
            sigma: self.sigma,
            seed: self.seed,
            nodes: (0..self.nets.len())
                .map(|i| NodeTable {
                    parents: self.parents[i].clone(),
                    rows: self
                        .rows(i)
                        .into_iter()
                        .map(|r| r.into_iter().map(Real::as_f64).collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Inverse-CDF draw from a probability row.
pub fn inverse_cdf<T: Real>(probs: &[T], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl<T: Real> Mechanisms for CptModel<T> {
    fn num_nodes(&self) -> usize {
        self.nets.len()
    }

    fn categories(&self) -> usize {
        self.k
    }

    fn sample(&self, node: usize, parent_values: &[usize], u: f64) -> usize {
        inverse_cdf(&self.conditional(node, parent_values), u)
    }
}

/// Serialized CPT: for each node its parents and one probability row per
/// parent configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptTable {
    pub k: usize,
    pub sigma: f64,
    pub seed: u64,
    pub nodes: Vec<NodeTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTable {
    pub parents: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Positions fixed across episodes.
    #[default]
    Static,
    /// Positions redrawn every episode.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemConfig {
    #[serde(rename = "M")]
    pub num_objects: usize,
    #[serde(rename = "K")]
    pub num_colors: usize,
    pub graph: GraphSpec,
    pub skewness: f64,
    #[serde(default)]
    pub layout: Layout,
    pub seed: u64,
}

impl ChemConfig {
    pub fn new(graph: GraphSpec, num_colors: usize, skewness: f64, seed: u64) -> Self {
        ChemConfig {
            num_objects: graph.n,
            num_colors,
            graph,
            skewness,
            layout: Layout::Static,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_objects == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if self.num_objects > CHEM_GRID * CHEM_GRID {
            return Err(Error::Config(format!("M = {} does not fit the grid", self.num_objects)));
        }
        if self.num_colors < 2 || self.num_colors > PALETTE.len() {
            return Err(Error::Config(format!(
                "K = {} outside 2..={}",
                self.num_colors,
                PALETTE.len()
            )));
        }
        if self.graph.n != self.num_objects {
            return Err(Error::Config(format!(
                "graph has {} nodes but M = {}",
                self.graph.n, self.num_objects
            )));
        }
        if !(self.skewness > 0.0 && self.skewness.is_finite()) {
            return Err(Error::Config(format!("skewness must be positive, got {}", self.skewness)));
        }
        self.graph.validate()
    }

    pub fn num_actions(&self) -> usize {
        self.num_objects * self.num_colors
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChemState {
    pub colors: Vec<u8>,
    pub positions: Vec<Cell>,
    pub shapes: Vec<u8>,
}

impl ChemState {
    pub fn color_values(&self) -> Vec<usize> {
        self.colors.iter().map(|&c| c as usize).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChemAction {
    pub node: usize,
    pub color: usize,
}

impl ChemAction {
    pub fn from_index(index: usize, k: usize) -> Self {
        ChemAction {
            node: index / k,
            color: index % k,
        }
    }

    pub fn index(&self, k: usize) -> usize {
        self.node * k + self.color
    }
}

/// Pin `action.node` to `action.color` and redraw its descendants. Colors of
/// all other nodes, positions and shapes are carried over unchanged.
pub fn intervene<T: Real>(
    state: &ChemState,
    cpt: &CptModel<T>,
    dag: &Dag,
    action: ChemAction,
    cursor: NoiseCursor,
) -> Result<(ChemState, NoiseCursor)> {
    let scm = Scm::new(dag.clone(), cpt, cursor.seed)?;
    let (colors, next) = scm.intervene(&state.color_values(), action.node, action.color, cursor)?;
    Ok((
        ChemState {
            colors: colors.into_iter().map(|c| c as u8).collect(),
            positions: state.positions.clone(),
            shapes: state.shapes.clone(),
        },
        next,
    ))
}

/// Fraction of objects whose color matches the target.
pub fn reward(state: &ChemState, target: &ChemState) -> Result<f64> {
    let m = state.colors.len();
    if target.colors.len() != m {
        return Err(Error::Mismatch(format!(
            "{m} objects against a {}-object target",
            target.colors.len()
        )));
    }
    if m == 0 {
        return Ok(1.0);
    }
    let hits = state.colors.iter().zip(&target.colors).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / m as f64)
}

pub fn success(state: &ChemState, target: &ChemState) -> bool {
    state.colors == target.colors
}

/// A built chemistry world: graph, conditional tables and static layout.
#[derive(Debug, Clone)]
pub struct ChemWorld {
    pub config: ChemConfig,
    pub dag: Dag,
    pub cpt: CptModel<f64>,
    static_positions: Vec<Cell>,
}

impl ChemWorld {
    pub fn new(config: ChemConfig) -> Result<Self> {
        config.validate()?;
        let dag = graph_gen::generate(&config.graph)?;
        let cpt = build_cpt(&dag, config.num_colors, config.skewness, config.seed)?;
        let mut rng = noise::rng_for(&[config.seed, 0x6c61_796f_7574]);
        let static_positions = random_cells(&mut rng, config.num_objects);
        Ok(ChemWorld {
            config,
            dag,
            cpt,
            static_positions,
        })
    }

    pub fn shapes(&self) -> Vec<u8> {
        (0..self.config.num_objects).map(|i| (i % NUM_SHAPES) as u8).collect()
    }

    pub fn static_positions(&self) -> &[Cell] {
        &self.static_positions
    }

    /// Fresh episode: colors from an unintervened ancestral sample at the
    /// cursor's step; positions static or drawn from `rng`.
    pub fn reset<R: Rng + ?Sized>(
        &self,
        cursor: NoiseCursor,
        rng: &mut R,
    ) -> Result<(ChemState, NoiseCursor)> {
        let scm = Scm::new(self.dag.clone(), &self.cpt, cursor.seed)?;
        let (colors, next) = scm.ancestral_sample(crate::scm::InterventionKind::None, cursor)?;
        let positions = match self.config.layout {
            Layout::Static => self.static_positions.clone(),
            Layout::Dynamic => random_cells(rng, self.config.num_objects),
        };
        Ok((
            ChemState {
                colors: colors.into_iter().map(|c| c as u8).collect(),
                positions,
                shapes: self.shapes(),
            },
            next,
        ))
    }

    pub fn step(&self, state: &ChemState, action: ChemAction, cursor: NoiseCursor) -> Result<(ChemState, NoiseCursor)> {
        intervene(state, &self.cpt, &self.dag, action, cursor)
    }

    /// Deterministic transition taking every redrawn node to its mode.
    pub fn mode_step(&self, state: &ChemState, action: ChemAction) -> ChemState {
        let mut colors = state.color_values();
        colors[action.node] = action.color;
        let affected = crate::scm::descendants(&self.dag, action.node);
        for &v in self.dag.topo() {
            if affected.contains(&v) {
                let pa: Vec<usize> = self.cpt.parents(v).iter().map(|&p| colors[p]).collect();
                colors[v] = self.cpt.mode(v, &pa);
            }
        }
        ChemState {
            colors: colors.into_iter().map(|c| c as u8).collect(),
            positions: state.positions.clone(),
            shapes: state.shapes.clone(),
        }
    }
}

fn random_cells<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<Cell> {
    index::sample(rng, CHEM_GRID * CHEM_GRID, m)
        .into_iter()
        .map(|c| Cell::new(c / CHEM_GRID, c % CHEM_GRID))
        .collect()
}
