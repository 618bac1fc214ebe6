//! Graph families with controlled size, sparsity and chain length.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise;
use crate::scm::Dag;

/// Largest node count for exhaustive enumeration.
pub const MAX_ENUMERATION_NODES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GraphKind {
    /// `i -> i+1`.
    Chain,
    /// Every node but the last points at the last one.
    Collider,
    /// Acyclic tournament: `i -> j` for all `i < j`.
    Full,
    /// Balanced binary out-tree rooted at 0: node `i` parents `2i+1` and `2i+2`.
    Jungle,
    /// Each forward edge `i -> j` (`i < j`) kept independently with `edge_prob`.
    RandomDag { edge_prob: f64 },
}

/// A graph family, its size, and the seed used by the random family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GraphSpec {
    pub kind: GraphKind,
    pub n: usize,
    pub seed: u64,
}

impl GraphSpec {
    pub fn new(kind: GraphKind, n: usize) -> Self {
        GraphSpec { kind, n, seed: 0 }
    }

    pub fn chain(n: usize) -> Self {
        Self::new(GraphKind::Chain, n)
    }

    pub fn collider(n: usize) -> Self {
        Self::new(GraphKind::Collider, n)
    }

    pub fn full(n: usize) -> Self {
        Self::new(GraphKind::Full, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("graph needs at least one node".into()));
        }
        if let GraphKind::RandomDag { edge_prob } = self.kind {
            if !(0.0..=1.0).contains(&edge_prob) {
                return Err(Error::Config(format!("edge_prob {edge_prob} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            GraphKind::Chain => write!(f, "chain:{}", self.n),
            GraphKind::Collider => write!(f, "collider:{}", self.n),
            GraphKind::Full => write!(f, "full:{}", self.n),
            GraphKind::Jungle => write!(f, "jungle:{}", self.n),
            GraphKind::RandomDag { edge_prob } => {
                write!(f, "random:{}:{}:seed={}", self.n, edge_prob, self.seed)
            }
        }
    }
}

impl FromStr for GraphSpec {
    type Err = Error;

    /// Accepts `chain:5`, `collider:3`, `full:5`, `jungle:7` and
    /// `random:5:0.5` with an optional `:seed=7` suffix.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("graph spec {s:?}: {why}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let n: usize = parts
            .get(1)
            .ok_or_else(|| bad("missing node count"))?
            .parse()
            .map_err(|_| bad("node count is not an integer"))?;
        let mut seed = 0;
        let mut rest = &parts[2..];
        let kind = match parts[0] {
            "chain" => GraphKind::Chain,
            "collider" => GraphKind::Collider,
            "full" => GraphKind::Full,
            "jungle" => GraphKind::Jungle,
            "random" => {
                let p = rest.first().ok_or_else(|| bad("missing edge probability"))?;
                let edge_prob = p.parse().map_err(|_| bad("edge probability is not a number"))?;
                rest = &rest[1..];
                GraphKind::RandomDag { edge_prob }
            }
            other => return Err(bad(&format!("unknown family {other:?}"))),
        };
        for extra in rest {
            match extra.strip_prefix("seed=") {
                Some(v) => seed = v.parse().map_err(|_| bad("seed is not an integer"))?,
                None => return Err(bad(&format!("unexpected field {extra:?}"))),
            }
        }
        let spec = GraphSpec { kind, n, seed };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for GraphSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GraphSpec> for String {
    fn from(g: GraphSpec) -> String {
        g.to_string()
    }
}

pub fn generate(spec: &GraphSpec) -> Result<Dag> {
    spec.validate()?;
    let n = spec.n;
    let edges: Vec<(usize, usize)> = match spec.kind {
        GraphKind::Chain => (1..n).map(|i| (i - 1, i)).collect(),
        GraphKind::Collider => (0..n.saturating_sub(1)).map(|i| (i, n - 1)).collect(),
        GraphKind::Full => forward_pairs(n).collect(),
        GraphKind::Jungle => (0..n)
            .flat_map(|i| [2 * i + 1, 2 * i + 2].into_iter().map(move |c| (i, c)))
            .filter(|&(_, c)| c < n)
            .collect(),
        GraphKind::RandomDag { edge_prob } => {
            let mut rng = noise::rng_for(&[spec.seed, n as u64, 0x6772_6170_68]);
            forward_pairs(n)
                .filter(|_| rng.gen::<f64>() < edge_prob)
                .collect()
        }
    };
    Dag::from_edges(n, &edges)
}

fn forward_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Edge count of the longest directed path.
pub fn max_chain_length(dag: &Dag) -> usize {
    let mut longest = vec![0usize; dag.n()];
    for &v in dag.topo() {
        for p in dag.parents(v) {
            longest[v] = longest[v].max(longest[p] + 1);
        }
    }
    longest.into_iter().max().unwrap_or(0)
}

/// Every labeled DAG on `n` nodes, each exactly once.
///
/// Graphs are yielded in increasing order of their packed off-diagonal
/// adjacency bits, so the empty graph always comes first.
pub fn enumerate_all_dags(n: usize) -> Result<impl Iterator<Item = Dag>> {
    if n == 0 || n > MAX_ENUMERATION_NODES {
        return Err(Error::Size {
            got: n,
            max: MAX_ENUMERATION_NODES,
        });
    }
    let slots: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let total = 1u64 << slots.len();
    Ok((0..total).filter_map(move |bits| {
        let mut masks = vec![0u16; n];
        for (b, &(child, parent)) in slots.iter().enumerate() {
            if bits & (1 << b) != 0 {
                masks[child] |= 1 << parent;
            }
        }
        if acyclic_masks(&masks) {
            Dag::from_parent_masks(&masks).ok()
        } else {
            None
        }
    }))
}

/// Peel parentless nodes until none are left or the remainder has a cycle.
fn acyclic_masks(parents: &[u16]) -> bool {
    let n = parents.len();
    let mut remaining: u16 = ((1u32 << n) - 1) as u16;
    while remaining != 0 {
        let ready = (0..n)
            .filter(|&i| remaining & (1 << i) != 0 && parents[i] & remaining == 0)
            .fold(0u16, |m, i| m | (1 << i));
        if ready == 0 {
            return false;
        }
        remaining &= !ready;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(spec: &str) -> Vec<(usize, usize)> {
        generate(&spec.parse().unwrap()).unwrap().edges()
    }

    #[test]
    fn family_edge_sets() {
        assert_eq!(edges("chain:3"), vec![(0, 1), (1, 2)]);
        assert_eq!(edges("collider:3"), vec![(0, 2), (1, 2)]);
        let full = edges("full:5");
        assert_eq!(full.len(), 10);
        assert!(full.iter().all(|&(p, c)| p < c));
        assert_eq!(edges("jungle:6"), vec![(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)]);
        assert!(edges("chain:1").is_empty());
    }

    #[test]
    fn chain_lengths() {
        let len = |s: &str| max_chain_length(&generate(&s.parse().unwrap()).unwrap());
        assert_eq!(len("collider:5"), 1);
        assert_eq!(len("chain:5"), 4);
        assert_eq!(len("full:5"), 4);
        assert_eq!(len("jungle:7"), 2);
    }

    #[test]
    fn random_extremes() {
        assert_eq!(edges("random:5:1.0:seed=3"), edges("full:5"));
        assert!(edges("random:5:0:seed=3").is_empty());
        assert_eq!(edges("random:6:0.5:seed=9"), edges("random:6:0.5:seed=9"));
    }

    #[test]
    fn spec_parsing_and_display() {
        let g: GraphSpec = "random:5:0.5:seed=7".parse().unwrap();
        assert_eq!(g.n, 5);
        assert_eq!(g.seed, 7);
        assert_eq!(g.kind, GraphKind::RandomDag { edge_prob: 0.5 });
        assert_eq!(g.to_string(), "random:5:0.5:seed=7");
        for bad in ["", "chain", "chain:x", "blob:3", "random:3", "random:3:1.5", "chain:3:7"] {
            assert!(bad.parse::<GraphSpec>().is_err(), "{bad}");
        }
        assert!("chain:0".parse::<GraphSpec>().is_err());
    }

    #[test]
    fn small_enumerations() {
        assert_eq!(enumerate_all_dags(1).unwrap().count(), 1);
        let two: Vec<_> = enumerate_all_dags(2).unwrap().map(|d| d.edges()).collect();
        assert_eq!(two, vec![vec![], vec![(1, 0)], vec![(0, 1)]]);
        assert!(enumerate_all_dags(6).is_err());
        assert!(enumerate_all_dags(0).is_err());
    }
}
