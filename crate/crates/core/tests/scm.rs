use causim::graph_gen::{generate, GraphKind, GraphSpec};
use causim::noise::NoiseCursor;
use causim::scm::{descendants, InterventionKind, Mechanisms};
use causim::{Dag, Error, Scm};
use proptest::prelude::*;

/// Each node copies its lowest parent; roots take a noise-driven value.
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

#[test]
fn copy_chain_under_intervention() {
    let dag = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let scm = Scm::new(dag, CopyParent { n: 3, k: 5 }, 1).unwrap();
    let (values, next) = scm
        .ancestral_sample(InterventionKind::Perfect { node: 0, value: 3 }, scm.cursor())
        .unwrap();
    assert_eq!(values, vec![3, 3, 3]);
    assert_eq!(next.step, 1);
}

#[test]
fn intervening_on_a_leaf_leaves_the_rest() {
    let dag = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let scm = Scm::new(dag, CopyParent { n: 3, k: 5 }, 1).unwrap();
    let (values, _) = scm.intervene(&[1, 1, 1], 2, 4, scm.cursor()).unwrap();
    assert_eq!(values, vec![1, 1, 4]);
}

#[test]
fn invalid_interventions() {
    let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
    let scm = Scm::new(dag, CopyParent { n: 2, k: 3 }, 0).unwrap();
    assert!(matches!(scm.intervene(&[0, 0], 5, 0, scm.cursor()), Err(Error::NodeOutOfRange { node: 5, n: 2 })));
    assert!(scm.intervene(&[0, 0], 0, 3, scm.cursor()).is_err());
    assert!(scm.intervene(&[0], 0, 1, scm.cursor()).is_err());
    assert!(Scm::new(Dag::empty(3).unwrap(), CopyParent { n: 2, k: 3 }, 0).is_err());
}

#[test]
fn sampling_is_a_function_of_the_cursor() {
    let dag = generate(&GraphSpec::full(4)).unwrap();
    let scm = Scm::new(dag, CopyParent { n: 4, k: 6 }, 9).unwrap();
    let c = NoiseCursor::at(77, 12);
    assert_eq!(
        scm.ancestral_sample(InterventionKind::None, c).unwrap(),
        scm.ancestral_sample(InterventionKind::None, c).unwrap()
    );
}

proptest! {
    #[test]
    fn non_descendants_are_untouched(
        n in 1usize..=8,
        p in 0.0f64..=1.0,
        gseed in any::<u64>(),
        nseed in any::<u64>(),
        step in 0u64..1000,
        target in 0usize..8,
        value in 0usize..4,
        start in proptest::collection::vec(0usize..4, 8),
    ) {
        let dag = generate(&GraphSpec { kind: GraphKind::RandomDag { edge_prob: p }, n, seed: gseed }).unwrap();
        let scm = Scm::new(dag.clone(), CopyParent { n, k: 4 }, nseed).unwrap();
        let target = target % n;
        let start = &start[..n];
        let (after, _) = scm.intervene(start, target, value, NoiseCursor::at(nseed, step)).unwrap();
        let desc = descendants(&dag, target);
        prop_assert_eq!(after[target], value);
        for i in 0..n {
            if i != target && !desc.contains(&i) {
                prop_assert_eq!(after[i], start[i]);
            }
        }
    }
}
