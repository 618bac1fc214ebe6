//! Structural causal models over discrete variables.
//!
//! Adjacency follows the row-parent convention: `adj[i][j] == true` means node
//! `j` is a parent of node `i`, i.e. the edge `j -> i`.

use std::collections::{BTreeSet, BinaryHeap, VecDeque};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseCursor;

/// Largest graph the simulators accept.
pub const MAX_NODES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DagJson", into = "DagJson")]
pub struct Dag {
    n: usize,
    adj: Vec<bool>,
    topo: Vec<usize>,
}

/// Wire form: `{"n": 3, "edges": [[0, 1], [1, 2]]}` with `[parent, child]`
/// pairs sorted lexicographically.
#[derive(Serialize, Deserialize)]
struct DagJson {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<DagJson> for Dag {
    type Error = Error;

    fn try_from(value: DagJson) -> Result<Self> {
        let edges: Vec<(usize, usize)> = value.edges.iter().map(|e| (e[0], e[1])).collect();
        Dag::from_edges(value.n, &edges)
    }
}

impl From<Dag> for DagJson {
    fn from(dag: Dag) -> Self {
        DagJson {
            n: dag.n,
            edges: dag.edges().into_iter().map(|(p, c)| [p, c]).collect(),
        }
    }
}

impl Dag {
    pub fn empty(n: usize) -> Result<Self> {
        Self::from_edges(n, &[])
    }

    /// Build from `(parent, child)` pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        check_size(n)?;
        let mut adj = vec![false; n * n];
        for &(parent, child) in edges {
            for node in [parent, child] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if parent == child {
                return Err(Error::SelfLoop(parent));
            }
            adj[child * n + parent] = true;
        }
        Self::from_flat(n, adj)
    }

    /// Build from a row-parent matrix (`rows[i][j]` = j is a parent of i).
    pub fn from_adj(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        check_size(n)?;
        let mut adj = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::Mismatch(format!(
                    "adjacency row of length {} in a {n}-node matrix",
                    row.len()
                )));
            }
            adj.extend_from_slice(row);
        }
        Self::from_flat(n, adj)
    }

    fn from_flat(n: usize, adj: Vec<bool>) -> Result<Self> {
        for i in 0..n {
            if adj[i * n + i] {
                return Err(Error::SelfLoop(i));
            }
        }
        let topo = topo_sort(n, &adj)?;
        Ok(Dag { n, adj, topo })
    }

    /// Build from per-node parent bitmasks.
    pub fn from_parent_masks(masks: &[u16]) -> Result<Self> {
        let n = masks.len();
        check_size(n)?;
        let mut adj = vec![false; n * n];
        for (i, &mask) in masks.iter().enumerate() {
            if mask >> n != 0 {
                return Err(Error::NodeOutOfRange { node: 15 - mask.leading_zeros() as usize, n });
            }
            for j in 0..n {
                adj[i * n + j] = mask & (1 << j) != 0;
            }
        }
        Self::from_flat(n, adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// True if `parent -> child` is an edge.
    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.adj[child * self.n + parent]
    }

    pub fn parents(&self, node: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(j, node)).collect()
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.has_edge(node, i)).collect()
    }

    pub fn parent_mask(&self, node: usize) -> u16 {
        (0..self.n)
            .filter(|&j| self.has_edge(j, node))
            .fold(0, |m, j| m | (1 << j))
    }

    /// `(parent, child)` pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for p in 0..self.n {
            for c in 0..self.n {
                if self.has_edge(p, c) {
                    out.push((p, c));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count()
    }

    /// Cached topological order.
    pub fn topo(&self) -> &[usize] {
        &self.topo
    }

    /// Row-parent matrix copy.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        self.adj.chunks(self.n.max(1)).take(self.n).map(|r| r.to_vec()).collect()
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::Size { got: n, max: MAX_NODES });
    }
    Ok(())
}

/// Kahn's algorithm, always releasing the smallest ready node first so the
/// output is canonical (the identity for an edgeless graph).
fn topo_sort(n: usize, adj: &[bool]) -> Result<Vec<usize>> {
    let mut indegree: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| adj[i * n + j]).count())
        .collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(j)) = ready.pop() {
        order.push(j);
        for i in 0..n {
            if adj[i * n + j] {
                indegree[i] -= 1;
                if indegree[i] == 0 {
                    ready.push(Reverse(i));
                }
            }
        }
    }
    if order.len() < n {
        let node = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(Error::Cycle { node });
    }
    Ok(order)
}

/// Topological order of a row-parent adjacency matrix.
pub fn topological_order(adj: &[Vec<bool>]) -> Result<Vec<usize>> {
    let n = adj.len();
    let flat: Vec<bool> = adj.iter().flatten().copied().collect();
    if flat.len() != n * n {
        return Err(Error::Mismatch("adjacency matrix is not square".into()));
    }
    if let Some(i) = (0..n).find(|&i| flat[i * n + i]) {
        return Err(Error::Cycle { node: i });
    }
    topo_sort(n, &flat)
}

/// Every node reachable from `node` along directed edges, excluding `node`.
pub fn descendants(dag: &Dag, node: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([node]);
    while let Some(u) = queue.pop_front() {
        for c in dag.children(u) {
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen
}

/// Intervention applied before sampling.
///
/// Only perfect single-node interventions are implemented. Imperfect
/// interventions, where the targeted mechanism is replaced by a different
/// conditional instead of a constant, are not supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InterventionKind {
    None,
    Perfect { node: usize, value: usize },
}

/// Per-node conditional mechanisms of an SCM.
pub trait Mechanisms {
    fn num_nodes(&self) -> usize;

    /// Number of categories each variable ranges over.
    fn categories(&self) -> usize;

    /// Draw `node`'s value from its parents' values (ascending parent id) and
    /// one uniform variate in [0, 1).
    fn sample(&self, node: usize, parent_values: &[usize], u: f64) -> usize;
}

impl<M: Mechanisms + ?Sized> Mechanisms for &M {
    fn num_nodes(&self) -> usize {
        (**self).num_nodes()
    }
    fn categories(&self) -> usize {
        (**self).categories()
    }
    fn sample(&self, node: usize, parent_values: &[usize], u: f64) -> usize {
        (**self).sample(node, parent_values, u)
    }
}

#[derive(Debug, Clone)]
pub struct Scm<M> {
    dag: Dag,
    mechanisms: M,
    noise_seed: u64,
}

impl<M: Mechanisms> Scm<M> {
    pub fn new(dag: Dag, mechanisms: M, noise_seed: u64) -> Result<Self> {
        if mechanisms.num_nodes() != dag.n() {
            return Err(Error::Mismatch(format!(
                "{} mechanisms for a {}-node graph",
                mechanisms.num_nodes(),
                dag.n()
            )));
        }
        Ok(Scm {
            dag,
            mechanisms,
            noise_seed,
        })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn mechanisms(&self) -> &M {
        &self.mechanisms
    }

    /// Cursor at the start of this model's noise stream.
    pub fn cursor(&self) -> NoiseCursor {
        NoiseCursor::new(self.noise_seed)
    }

    pub fn validate(&self, intervention: InterventionKind) -> Result<()> {
        if let InterventionKind::Perfect { node, value } = intervention {
            let n = self.dag.n();
            if node >= n {
                return Err(Error::NodeOutOfRange { node, n });
            }
            let k = self.mechanisms.categories();
            if value >= k {
                return Err(Error::Config(format!("value {value} outside 0..{k}")));
            }
        }
        Ok(())
    }

    /// Sample every variable in topological order. A perfect intervention
    /// pins its node and skips that node's mechanism.
    pub fn ancestral_sample(
        &self,
        intervention: InterventionKind,
        cursor: NoiseCursor,
    ) -> Result<(Vec<usize>, NoiseCursor)> {
        self.validate(intervention)?;
        let mut values = vec![0usize; self.dag.n()];
        for &node in self.dag.topo() {
            values[node] = match intervention {
                InterventionKind::Perfect { node: target, value } if target == node => value,
                _ => self.draw(node, &values, cursor),
            };
        }
        Ok((values, cursor.advance()))
    }

    /// Apply a perfect intervention to an existing assignment: the target is
    /// pinned and its descendants are redrawn in topological order from the
    /// updated parents. Everything else is copied.
    pub fn intervene(
        &self,
        current: &[usize],
        node: usize,
        value: usize,
        cursor: NoiseCursor,
    ) -> Result<(Vec<usize>, NoiseCursor)> {
        self.validate(InterventionKind::Perfect { node, value })?;
        if current.len() != self.dag.n() {
            return Err(Error::Mismatch(format!(
                "assignment of length {} for a {}-node graph",
                current.len(),
                self.dag.n()
            )));
        }
        let affected = descendants(&self.dag, node);
        let mut values = current.to_vec();
        values[node] = value;
        for &v in self.dag.topo() {
            if affected.contains(&v) {
                values[v] = self.draw(v, &values, cursor);
            }
        }
        Ok((values, cursor.advance()))
    }

    fn draw(&self, node: usize, values: &[usize], cursor: NoiseCursor) -> usize {
        let parents: Vec<usize> = self.dag.parents(node).iter().map(|&p| values[p]).collect();
        self.mechanisms.sample(node, &parents, cursor.draw(node))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Roots draw uniformly; non-roots copy their first parent.
    struct CopyParent {
        n: usize,
        k: usize,
    }

    impl Mechanisms for CopyParent {
        fn num_nodes(&self) -> usize {
            self.n
        }
        fn categories(&self) -> usize {
            self.k
        }
        fn sample(&self, _node: usize, parents: &[usize], u: f64) -> usize {
            parents.first().copied().unwrap_or((u * self.k as f64) as usize)
        }
    }

    fn chain3() -> Dag {
        Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn topo_order_of_chain_and_empty_graph() {
        assert_eq!(chain3().topo(), &[0, 1, 2]);
        assert_eq!(Dag::empty(3).unwrap().topo(), &[0, 1, 2]);
        let rev = Dag::from_edges(3, &[(2, 1), (1, 0)]).unwrap();
        assert_eq!(rev.topo(), &[2, 1, 0]);
    }

    #[test]
    fn two_cycle_is_rejected() {
        let adj = vec![vec![false, true], vec![true, false]];
        assert!(matches!(topological_order(&adj), Err(Error::Cycle { .. })));
        assert!(matches!(Dag::from_edges(2, &[(0, 1), (1, 0)]), Err(Error::Cycle { .. })));
    }

    #[test]
    fn self_loop_and_range_errors() {
        assert!(matches!(Dag::from_edges(2, &[(1, 1)]), Err(Error::SelfLoop(1))));
        assert!(matches!(
            Dag::from_edges(2, &[(0, 2)]),
            Err(Error::NodeOutOfRange { node: 2, n: 2 })
        ));
        assert!(matches!(Dag::empty(11), Err(Error::Size { .. })));
    }

    #[test]
    fn row_parent_convention() {
        let d = chain3();
        let adj = d.adjacency();
        assert!(adj[1][0], "row 1 lists parent 0");
        assert!(!adj[0][1]);
        assert_eq!(d.parents(2), vec![1]);
        assert_eq!(d.children(0), vec![1]);
        assert_eq!(d.parent_mask(1), 0b001);
        assert_eq!(Dag::from_adj(&adj).unwrap(), d);
    }

    #[test]
    fn descendants_examples() {
        let d = chain3();
        assert_eq!(descendants(&d, 0), BTreeSet::from([1, 2]));
        assert!(descendants(&d, 2).is_empty());
        let full: Vec<(usize, usize)> =
            (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
        let full = Dag::from_edges(4, &full).unwrap();
        assert_eq!(descendants(&full, 1), BTreeSet::from([2, 3]));
    }

    #[test]
    fn json_wire_form_sorts_edges() {
        let d = Dag::from_edges(3, &[(1, 2), (0, 2)]).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"n":3,"edges":[[0,2],[1,2]]}"#);
        let back: Dag = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<Dag>(r#"{"n":2,"edges":[[0,1],[1,0]]}"#).is_err());
    }

    #[test]
    fn perfect_intervention_pins_value() {
        let scm = Scm::new(chain3(), CopyParent { n: 3, k: 4 }, 5).unwrap();
        let (v, next) = scm
            .ancestral_sample(InterventionKind::Perfect { node: 0, value: 2 }, scm.cursor())
            .unwrap();
        assert_eq!(v[0], 2);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn copy_chain_propagates_forced_value() {
        let scm = Scm::new(chain3(), CopyParent { n: 3, k: 4 }, 5).unwrap();
        let (v, _) = scm
            .ancestral_sample(InterventionKind::Perfect { node: 0, value: 3 }, scm.cursor())
            .unwrap();
        assert_eq!(v, vec![3, 3, 3]);
    }

    #[test]
    fn collider_roots_ignore_forced_child() {
        let dag = Dag::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        let scm = Scm::new(dag, CopyParent { n: 3, k: 4 }, 11).unwrap();
        let c = scm.cursor();
        let (free, _) = scm.ancestral_sample(InterventionKind::None, c).unwrap();
        let (forced, _) = scm
            .ancestral_sample(InterventionKind::Perfect { node: 2, value: 1 }, c)
            .unwrap();
        assert_eq!(forced[2], 1);
        assert_eq!(free[..2], forced[..2]);
    }

    #[test]
    fn invalid_intervention_is_rejected() {
        let scm = Scm::new(chain3(), CopyParent { n: 3, k: 4 }, 0).unwrap();
        assert!(scm
            .ancestral_sample(InterventionKind::Perfect { node: 3, value: 0 }, scm.cursor())
            .is_err());
        assert!(scm
            .ancestral_sample(InterventionKind::Perfect { node: 0, value: 4 }, scm.cursor())
            .is_err());
        assert!(Scm::new(chain3(), CopyParent { n: 2, k: 4 }, 0).is_err());
    }
}
