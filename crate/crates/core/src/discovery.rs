//! Exact score-based structure search over all DAGs of up to five nodes,
//! plus weight-order recovery for the physics environment.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{EnvAction, EnvConfig, EnvState};
use crate::error::{Error, Result};
use crate::graph_gen::{enumerate_all_dags, MAX_ENUMERATION_NODES};
use crate::physics::{step_with_outcome, ObjColor, Outcome};
use crate::scm::Dag;
use crate::store::Episode;

/// One scored record: the colors of a state, and for states reached by a
/// transition, the intervened node and the mask of nodes whose color did not
/// change.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub colors: Vec<u8>,
    pub transition: Option<(usize, u16)>,
}

/// Chemistry observations flattened into records: every reset state and
/// every transition of every episode.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionData {
    pub num_nodes: usize,
    pub num_colors: usize,
    pub records: Vec<Record>,
}

impl InterventionData {
    pub fn new(num_nodes: usize, num_colors: usize) -> Self {
        InterventionData { num_nodes, num_colors, records: Vec::new() }
    }

    pub fn from_episodes(config: &EnvConfig, episodes: &[Episode]) -> Result<Self> {
        let EnvConfig::Chemistry(c) = config else {
            return Err(Error::Config("structure scoring needs a chemistry dataset".into()));
        };
        let mut data = InterventionData::new(c.num_objects, c.num_colors);
        for ep in episodes {
            if ep.config.num_objects() != c.num_objects {
                return Err(Error::Mismatch(format!(
                    "episode {} has {} objects, expected {}",
                    ep.seed,
                    ep.config.num_objects(),
                    c.num_objects
                )));
            }
            let colors: Vec<&[u8]> = ep
                .states
                .iter()
                .filter_map(|s| s.as_chem().map(|s| s.colors.as_slice()))
                .collect();
            if let Some(first) = colors.first() {
                data.records.push(Record { colors: first.to_vec(), transition: None });
            }
            for (t, a) in ep.actions.iter().enumerate() {
                if let (EnvAction::Chem(a), Some(prev), Some(next)) = (a, colors.get(t), colors.get(t + 1)) {
                    let same = (0..c.num_objects).filter(|&i| prev[i] == next[i]).fold(0u16, |m, i| m | 1 << i);
                    data.records.push(Record { colors: next.to_vec(), transition: Some((a.node, same)) });
                }
            }
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyScore {
    pub loglik: f64,
    pub penalty: f64,
}

impl FamilyScore {
    pub fn score(&self) -> f64 {
        self.loglik - self.penalty
    }
}

fn smoothed_loglik(row: &[u64], alpha: f64) -> f64 {
    let total: u64 = row.iter().sum();
    let denom = total as f64 + alpha * row.len() as f64;
    row.iter()
        .filter(|&&n| n > 0)
        .map(|&n| n as f64 * ((n as f64 + alpha) / denom).ln())
        .sum()
}

/// Score of `node` given its hypothesised parent and ancestor masks.
///
/// Reset states are draws from the node's conditional. A transition that
/// intervenes on the node is skipped. Otherwise the node is redrawn from its
/// conditional when the intervened node is a hypothesised ancestor, and is
/// expected to keep its color when it is not.
pub fn family_score(data: &InterventionData, node: usize, parents: u16, ancestors: u16, alpha: f64, lambda: f64) -> FamilyScore {
    let k = data.num_colors;
    let parent_list: Vec<usize> = (0..data.num_nodes).filter(|&p| parents & (1 << p) != 0).collect();
    let mut counts: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut persistence = [0u64; 2];
    let mut used = 0u64;
    for r in &data.records {
        match r.transition {
            Some((v, _)) if v == node => continue,
            Some((v, same)) if ancestors & (1 << v) == 0 => {
                persistence[usize::from(same & (1 << node) == 0)] += 1;
            }
            _ => {
                let cond = parent_list.iter().fold(0, |acc, &p| acc * k + r.colors[p] as usize);
                counts.entry(cond).or_insert_with(|| vec![0; k])[r.colors[node] as usize] += 1;
            }
        }
        used += 1;
    }
    let loglik = counts.values().map(|row| smoothed_loglik(row, alpha)).sum::<f64>()
        + smoothed_loglik(&persistence, alpha);
    let params = (k.pow(parent_list.len() as u32) * (k - 1)) as f64;
    let penalty = lambda * params * (used.max(1) as f64).ln() / 2.0;
    FamilyScore { loglik, penalty }
}

fn ancestor_masks(dag: &Dag) -> Vec<u16> {
    let mut anc = vec![0u16; dag.n()];
    for &i in dag.topo() {
        anc[i] = dag.parents(i).iter().fold(0, |m, &p| m | anc[p] | 1 << p);
    }
    anc
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredGraph {
    pub dag: Dag,
    pub loglik: f64,
    pub score: f64,
}

/// Penalised interventional log-likelihood; the sum of per-node scores.
pub fn score_graph(dag: &Dag, data: &InterventionData, alpha: f64, lambda: f64) -> Result<ScoredGraph> {
    if dag.n() != data.num_nodes {
        return Err(Error::Mismatch(format!("{}-node graph for {} nodes", dag.n(), data.num_nodes)));
    }
    let anc = ancestor_masks(dag);
    let (loglik, penalty) = (0..dag.n())
        .map(|i| family_score(data, i, dag.parent_mask(i), anc[i], alpha, lambda))
        .fold((0.0, 0.0), |(l, p), f| (l + f.loglik, p + f.penalty));
    Ok(ScoredGraph { dag: dag.clone(), loglik, score: loglik - penalty })
}

/// Highest-scoring DAG; the earliest in enumeration order wins ties.
pub fn discover(data: &InterventionData, alpha: f64, lambda: f64) -> Result<ScoredGraph> {
    let n = data.num_nodes;
    if n > MAX_ENUMERATION_NODES {
        return Err(Error::Size { got: n, max: MAX_ENUMERATION_NODES });
    }
    let dags: Vec<(Dag, Vec<u16>)> = enumerate_all_dags(n)?
        .map(|d| {
            let anc = ancestor_masks(&d);
            (d, anc)
        })
        .collect();
    // Node scores depend only on (node, parents, ancestors); score each once.
    let keys: BTreeSet<(usize, u16, u16)> = dags
        .iter()
        .flat_map(|(d, anc)| (0..n).map(move |i| (i, d.parent_mask(i), anc[i])))
        .collect();
    let table: BTreeMap<(usize, u16, u16), FamilyScore> = keys
        .into_par_iter()
        .map(|(i, p, a)| ((i, p, a), family_score(data, i, p, a, alpha, lambda)))
        .collect();
    let mut best: Option<ScoredGraph> = None;
    for (dag, anc) in dags {
        let (loglik, score) = (0..n).fold((0.0, 0.0), |(l, s), i| {
            let f = table[&(i, dag.parent_mask(i), anc[i])];
            (l + f.loglik, s + f.score())
        });
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(ScoredGraph { dag, loglik, score });
        }
    }
    best.ok_or_else(|| Error::Config("no graphs to score".into()))
}

/// Recover the weight order of the physics objects (heaviest first) from push
/// outcomes. A push of `b` by `a` shows `a` heavier; a move into `b` blocked
/// while the cell beyond is free shows `a` lighter. Colors identify objects.
pub fn discover_physics_order(episodes: &[Episode]) -> Result<Vec<ObjColor>> {
    let mut colors: BTreeSet<ObjColor> = BTreeSet::new();
    let mut heavier: BTreeSet<(ObjColor, ObjColor)> = BTreeSet::new();
    for ep in episodes {
        let EnvConfig::Physics(c) = &ep.config else {
            return Err(Error::Config("weight-order recovery needs a physics dataset".into()));
        };
        for (s, a) in ep.states.iter().zip(&ep.actions) {
            let (EnvState::Physics(s), EnvAction::Physics(a)) = (s, a) else { continue };
            colors.extend(s.colors.iter().copied());
            let Some(dest) = s.positions[a.rank].offset(a.direction, c.grid_size) else { continue };
            let Some(b) = s.occupant(dest) else { continue };
            let beyond_free = dest
                .offset(a.direction, c.grid_size)
                .is_some_and(|cell| s.occupant(cell).is_none());
            let (ca, cb) = (s.colors[a.rank], s.colors[b]);
            match step_with_outcome(s, *a, c.grid_size).1 {
                Outcome::Pushed => {
                    heavier.insert((ca, cb));
                }
                Outcome::Blocked if beyond_free => {
                    heavier.insert((cb, ca));
                }
                _ => {}
            }
        }
    }
    let colors: Vec<ObjColor> = colors.into_iter().collect();
    // Transitive closure over the observed comparisons.
    let idx = |c: &ObjColor| colors.iter().position(|x| x == c).unwrap_or(0);
    let n = colors.len();
    let mut reach = vec![vec![false; n]; n];
    for (a, b) in &heavier {
        reach[idx(a)][idx(b)] = true;
    }
    for m in 0..n {
        for i in 0..n {
            if reach[i][m] {
                for j in 0..n {
                    if reach[m][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let untested: Vec<(u16, u16)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !reach[i][j] && !reach[j][i])
        .map(|(i, j)| (colors[i].code() as u16, colors[j].code() as u16))
        .collect();
    if !untested.is_empty() {
        return Err(Error::InsufficientData(untested));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((0..n).filter(|&j| reach[i][j]).count()));
    Ok(order.into_iter().map(|i| colors[i]).collect())
}
