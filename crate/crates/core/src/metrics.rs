//! Ranking metrics, reconstruction error and structural Hamming distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Frame;
use crate::scalar::Real;
use crate::scm::Dag;

/// Predicted and true embeddings for `n` samples; the true embeddings double
/// as the reference buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingBatch<T> {
    dim: usize,
    predicted: Vec<T>,
    truth: Vec<T>,
}

impl<T: Real> RankingBatch<T> {
    pub fn new(predicted: Vec<Vec<T>>, truth: Vec<Vec<T>>) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Mismatch(format!(
                "{} predictions for {} references",
                predicted.len(),
                truth.len()
            )));
        }
        let dim = truth.first().map_or(0, Vec::len);
        if !truth.is_empty() && dim == 0 {
            return Err(Error::Mismatch("embedding dimension is zero".into()));
        }
        if predicted.iter().chain(&truth).any(|v| v.len() != dim) {
            return Err(Error::Mismatch("ragged embeddings".into()));
        }
        Ok(RankingBatch {
            dim,
            predicted: predicted.into_iter().flatten().collect(),
            truth: truth.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.truth.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pred(&self, i: usize) -> &[T] {
        &self.predicted[i * self.dim..(i + 1) * self.dim]
    }

    fn reference(&self, i: usize) -> &[T] {
        &self.truth[i * self.dim..(i + 1) * self.dim]
    }

    /// `1 + #{references strictly closer to prediction n than its own truth}`.
    /// Ties count in the sample's favour.
    pub fn ranks(&self) -> Vec<usize> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let p = self.pred(i);
                let own = sq_dist(p, self.reference(i));
                1 + (0..n).filter(|&j| sq_dist(p, self.reference(j)) < own).count()
            })
            .collect()
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Fraction of samples ranked first.
pub fn hits_at_1<T: Real>(batch: &RankingBatch<T>) -> T {
    hits_from_ranks(&batch.ranks())
}

/// Mean reciprocal rank.
pub fn mrr<T: Real>(batch: &RankingBatch<T>) -> T {
    mrr_from_ranks(&batch.ranks())
}

pub fn hits_from_ranks<T: Real>(ranks: &[usize]) -> T {
    if ranks.is_empty() {
        return T::zero();
    }
    T::of_usize(ranks.iter().filter(|&&r| r == 1).count()) / T::of_usize(ranks.len())
}

pub fn mrr_from_ranks<T: Real>(ranks: &[usize]) -> T {
    if ranks.is_empty() {
        return T::zero();
    }
    let total: T = ranks.iter().map(|&r| T::one() / T::of_usize(r)).sum();
    total / T::of_usize(ranks.len())
}

/// Mean per-pixel binary cross-entropy between two frame sequences with
/// pixels scaled to [0, 1]. Log terms are floored at -100.
pub fn reconstruction_error<T: Real>(predicted: &[Frame], truth: &[Frame]) -> Result<T> {
    if predicted.len() != truth.len() {
        return Err(Error::Mismatch(format!("{} predicted frames for {} targets", predicted.len(), truth.len())));
    }
    let scale = |f: &Frame| f.data.iter().map(|&b| T::of_usize(b as usize) / T::of(255.0)).collect::<Vec<T>>();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (p, t) in predicted.iter().zip(truth) {
        if p.data.len() != t.data.len() {
            return Err(Error::Mismatch("frame sizes differ".into()));
        }
        x.extend(scale(p));
        y.extend(scale(t));
    }
    bce(&x, &y)
}

/// Mean binary cross-entropy of values in [0, 1]. Log terms are floored at -100.
pub fn bce<T: Real>(predicted: &[T], truth: &[T]) -> Result<T> {
    if predicted.len() != truth.len() {
        return Err(Error::Mismatch("length mismatch".into()));
    }
    if predicted.is_empty() {
        return Ok(T::zero());
    }
    let floor = T::of(-100.0);
    let clamp_ln = |x: T| if x > T::zero() { x.ln().max(floor) } else { floor };
    let total: T = predicted
        .iter()
        .zip(truth)
        .map(|(&x, &y)| {
            let mut t = T::zero();
            if y > T::zero() {
                t = t - y * clamp_ln(x);
            }
            if y < T::one() {
                t = t - (T::one() - y) * clamp_ln(T::one() - x);
            }
            t
        })
        .sum();
    Ok(total / T::of_usize(predicted.len()))
}

/// Node pairs whose edge status differs; a reversed edge counts once.
pub fn shd(learned: &Dag, truth: &Dag) -> Result<usize> {
    if learned.n() != truth.n() {
        return Err(Error::Mismatch(format!("{}-node graph against {}-node truth", learned.n(), truth.n())));
    }
    let n = truth.n();
    let status = |d: &Dag, i: usize, j: usize| (d.has_edge(i, j), d.has_edge(j, i));
    Ok((0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| status(learned, i, j) != status(truth, i, j))
        .count())
}

/// Report keyed by prediction horizon (as a string, e.g. `"1"`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub h1: BTreeMap<String, f64>,
    pub mrr: BTreeMap<String, f64>,
    pub recon: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shd: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> RankingBatch<f64> {
        RankingBatch::new(pred.iter().map(|p| p.to_vec()).collect(), truth.iter().map(|p| p.to_vec()).collect())
            .unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let t = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let b = batch(&t, &t);
        assert_eq!(hits_at_1(&b), 1.0);
        assert_eq!(mrr(&b), 1.0);
    }

    #[test]
    fn every_prediction_closest_to_another_reference() {
        let t = [[0.0, 0.0], [10.0, 0.0]];
        let p = [[9.0, 0.0], [1.0, 0.0]];
        assert_eq!(hits_at_1(&batch(&p, &t)), 0.0);
    }

    #[test]
    fn two_samples_ranks_one_and_two() {
        let t = [[0.0, 0.0], [10.0, 0.0]];
        let p = [[0.0, 0.0], [1.0, 0.0]];
        let b = batch(&p, &t);
        assert_eq!(b.ranks(), vec![1, 2]);
        assert_eq!(hits_at_1(&b), 0.5);
    }

    #[test]
    fn mrr_formula() {
        let v: f64 = mrr_from_ranks(&[1, 2, 4]);
        assert!((v - 0.583_333_333_333_333_3).abs() < 1e-12);
        assert_eq!(mrr_from_ranks::<f64>(&[1, 1, 1]), 1.0);
        assert_eq!(mrr_from_ranks::<f64>(&[7]), 1.0 / 7.0);
    }

    #[test]
    fn ties_are_optimistic() {
        let t = [[1.0, 0.0], [1.0, 0.0]];
        let p = [[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(batch(&p, &t).ranks(), vec![1, 1]);
    }

    #[test]
    fn shape_errors() {
        assert!(RankingBatch::<f64>::new(vec![vec![0.0]], vec![]).is_err());
        assert!(RankingBatch::<f64>::new(vec![vec![]], vec![vec![]]).is_err());
        assert!(RankingBatch::<f64>::new(vec![vec![0.0, 1.0]], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let f = Frame { width: 2, height: 1, data: vec![0, 255, 255, 0, 0, 255] };
        assert_eq!(reconstruction_error::<f64>(std::slice::from_ref(&f), std::slice::from_ref(&f)).unwrap(), 0.0);
        let half = vec![0.5f64; 6];
        let truth: Vec<f64> = f.normalized().collect();
        assert!((bce(&half, &truth).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let wrong = Frame { width: 2, height: 1, data: vec![255, 0, 0, 255, 255, 0] };
        assert_eq!(reconstruction_error::<f64>(&[wrong], &[f]).unwrap(), 100.0);
    }

    #[test]
    fn shd_examples() {
        let chain = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let rev = Dag::from_edges(3, &[(1, 0), (1, 2)]).unwrap();
        let empty = Dag::empty(3).unwrap();
        assert_eq!(shd(&chain, &chain).unwrap(), 0);
        assert_eq!(shd(&rev, &chain).unwrap(), 1);
        assert_eq!(shd(&chain, &empty).unwrap(), 2);
        assert!(shd(&chain, &Dag::empty(2).unwrap()).is_err());
    }

    #[test]
    fn report_json_shape() {
        let mut r = MetricsReport::default();
        r.h1.insert("1".into(), 1.0);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"h1":{"1":1.0},"mrr":{},"recon":{}}"#);
    }
}
