//! Small labelled corpora with a known answer.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{permute, Graph, SparseAdjacency};

/// Width of the one-hot degree features; degrees above `DEGREE_SLOTS - 1`
/// share the last slot.
pub const DEGREE_SLOTS: usize = 12;

/// Cycle on `n` nodes with one-hot degree features.
pub fn cycle(n: usize) -> Graph {
    with_degree_features(SparseAdjacency::from_edges(n, (0..n).map(|i| (i, (i + 1) % n, 1.0))).expect("valid cycle"))
}

/// Star with centre 0 and `n - 1` leaves, one-hot degree features.
pub fn star(n: usize) -> Graph {
    with_degree_features(SparseAdjacency::from_edges(n, (1..n).map(|i| (0, i, 1.0))).expect("valid star"))
}

fn with_degree_features(adj: SparseAdjacency) -> Graph {
    let mut x = Array2::zeros((adj.n(), DEGREE_SLOTS));
    for i in 0..adj.n() {
        x[[i, adj.row(i).count().min(DEGREE_SLOTS - 1)]] = 1.0;
    }
    Graph::new(adj, x, None).expect("one feature row per node")
}

/// `count` graphs alternating cycle (label 0) and star (label 1), sizes
/// uniform in `6..=12`, node order shuffled.
pub fn cycles_and_stars(count: usize, seed: u64) -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n = rng.gen_range(6..=12);
            let g = if i % 2 == 0 { cycle(n) } else { star(n) };
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            permute(&g, &p).expect("valid permutation").with_label(Some(i % 2))
        })
        .collect()
}
