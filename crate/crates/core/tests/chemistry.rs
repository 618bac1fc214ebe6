use causim::chemistry::{build_cpt, ChemAction, ChemConfig, ChemState, ChemWorld, CptTable};
use causim::graph_gen::GraphSpec;
use causim::noise::{hash_words, mix64, uniform, NoiseCursor};
use causim::physics::Cell;
use causim::{Dag, Error};
use proptest::prelude::*;

const GOLDEN: &str = include_str!("fixtures/golden_cpt_chain3.json");

fn golden_world() -> ChemWorld {
    ChemWorld::new(ChemConfig::new(GraphSpec::chain(3), 5, 10.0, 123)).unwrap()
}

/// Hashed uniform written out from the definition: SplitMix64 finalizer
/// folded over (seed, node, step), top 53 bits scaled to [0, 1).
fn reference_uniform(seed: u64, node: u64, step: u64) -> f64 {
    let fin = |mut z: u64| {
        z = z.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    };
    let h = [seed, node, step].iter().fold(0x6A09E667F3BCC908u64, |acc, &w| fin(acc ^ fin(w)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn reference_inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

#[test]
fn golden_table_is_stable() {
    let golden: CptTable = serde_json::from_str(GOLDEN).unwrap();
    let table = golden_world().cpt.to_table();
    assert_eq!(table.nodes.len(), golden.nodes.len());
    for (a, b) in table.nodes.iter().zip(&golden.nodes) {
        assert_eq!(a.parents, b.parents);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn noise_matches_reference_definition() {
    for (s, n, t) in [(0u64, 0u64, 0u64), (123, 2, 7), (u64::MAX, 9, 1 << 40)] {
        assert_eq!(uniform(s, n, t), reference_uniform(s, n, t));
    }
    assert_eq!(hash_words(&[]), 0x6A09E667F3BCC908);
    assert_ne!(mix64(1), mix64(2));
}

#[test]
fn golden_intervention_tuple() {
    // Expected tuple computed from the golden rows and the reference sampler.
    let golden: CptTable = serde_json::from_str(GOLDEN).unwrap();
    let cursor = NoiseCursor::at(2024, 5);
    let node1 = reference_inverse_cdf(&golden.nodes[1].rows[3], reference_uniform(2024, 1, 5));
    let node2 = reference_inverse_cdf(&golden.nodes[2].rows[node1], reference_uniform(2024, 2, 5));

    let world = golden_world();
    let state = ChemState { colors: vec![0, 0, 0], positions: world.static_positions().to_vec(), shapes: world.shapes() };
    let (next, c) = world.step(&state, ChemAction { node: 0, color: 3 }, cursor).unwrap();
    assert_eq!(next.colors, vec![3, node1 as u8, node2 as u8]);
    assert_eq!(c.step, 6);
}

#[test]
fn rows_are_distributions() {
    let dag = Dag::from_edges(4, &[(0, 2), (1, 2), (2, 3)]).unwrap();
    let cpt = build_cpt::<f64>(&dag, 4, 1.0, 5).unwrap();
    for node in 0..4 {
        for row in cpt.rows(node) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
    let single = build_cpt::<f32>(&dag, 4, 1.0, 5).unwrap();
    let a = cpt.conditional(2, &[1, 3]);
    let b = single.conditional(2, &[1, 3]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - *y as f64).abs() < 1e-5);
    }
}

#[test]
fn skewness_sharpens_rows() {
    let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
    let mean_max = |sigma: f64| {
        let mut total = 0.0;
        for seed in 0..20 {
            let cpt = build_cpt::<f64>(&dag, 5, sigma, seed).unwrap();
            for row in cpt.rows(1) {
                total += row.iter().cloned().fold(0.0, f64::max);
            }
        }
        total / 100.0
    };
    let (low, high) = (mean_max(0.01), mean_max(10.0));
    assert!(low < 0.25, "{low}");
    assert!(high > 0.9, "{high}");
}

#[test]
fn bad_configs() {
    let dag = Dag::empty(2).unwrap();
    assert!(matches!(build_cpt::<f64>(&dag, 5, 0.0, 1), Err(Error::Config(_))));
    assert!(matches!(build_cpt::<f64>(&dag, 1, 1.0, 1), Err(Error::Config(_))));
    let mut c = ChemConfig::new(GraphSpec::chain(3), 5, 1.0, 1);
    c.num_objects = 4;
    assert!(ChemWorld::new(c).is_err());
    assert!(ChemWorld::new(ChemConfig::new(GraphSpec::chain(3), 17, 1.0, 1)).is_err());
}

#[test]
fn mode_step_takes_modes() {
    let world = golden_world();
    let state = ChemState { colors: vec![0, 0, 0], positions: vec![Cell::new(0, 0); 3], shapes: vec![0; 3] };
    let next = world.mode_step(&state, ChemAction { node: 0, color: 3 });
    let c1 = world.cpt.mode(1, &[3]);
    assert_eq!(next.colors, vec![3, c1 as u8, world.cpt.mode(2, &[c1]) as u8]);
}

proptest! {
    #[test]
    fn steps_keep_layout_and_pin_target(seed in any::<u64>(), node in 0usize..3, color in 0usize..5, step in 0u64..100) {
        let world = golden_world();
        let state = ChemState { colors: vec![1, 2, 4], positions: world.static_positions().to_vec(), shapes: world.shapes() };
        let (next, _) = world.step(&state, ChemAction { node, color }, NoiseCursor::at(seed, step)).unwrap();
        prop_assert_eq!(next.colors[node] as usize, color);
        for i in 0..node {
            prop_assert_eq!(next.colors[i], state.colors[i]);
        }
        prop_assert_eq!(&next.positions, &state.positions);
        prop_assert_eq!(&next.shapes, &state.shapes);
    }

    #[test]
    fn action_index_round_trip(k in 2usize..=16, node in 0usize..10, color in 0usize..16) {
        let a = ChemAction { node, color: color % k };
        prop_assert_eq!(ChemAction::from_index(a.index(k), k), a);
    }
}
