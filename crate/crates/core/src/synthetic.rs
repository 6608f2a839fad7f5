//! Seeded two-class toy datasets for tests and smoke runs.
//!
//! Class 0 graphs are random trees whose nodes mostly carry label 0; class 1
//! graphs are cycles with random chords whose nodes mostly carry label 1.

use crate::graph::{DatasetBundle, LabeledGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `per_class` graphs of each class with `min_nodes..=max_nodes` nodes and
/// `node_labels ≥ 2` distinct node labels.
pub fn two_class_dataset(per_class: usize, min_nodes: usize, max_nodes: usize, node_labels: usize, seed: u64) -> DatasetBundle {
    assert!(min_nodes >= 3 && min_nodes <= max_nodes && node_labels >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let class = i % 2;
        let n = rng.gen_range(min_nodes..=max_nodes);
        let mut edges = Vec::new();
        if class == 0 {
            for v in 1..n {
                edges.push((rng.gen_range(0..v), v));
            }
        } else {
            for v in 0..n {
                edges.push((v, (v + 1) % n));
            }
            for _ in 0..n / 3 {
                edges.push((rng.gen_range(0..n), rng.gen_range(0..n)));
            }
        }
        let labels = (0..n)
            .map(|_| if rng.gen_bool(0.8) { class } else { rng.gen_range(0..node_labels) })
            .collect();
        graphs.push(LabeledGraph::from_edges(n, &edges, Some(labels), class).expect("valid toy graph"));
    }
    DatasetBundle { name: "TOY".into(), graphs, num_classes: 2, num_node_labels: node_labels }
}
