#![allow(dead_code)]

use milpmt_core::graph::{BipartiteGraph, CON_FEATS, VAR_FEATS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random graph with features in [-1, 1]; the last variable is isolated
/// when `isolate` is set.
pub fn toy_graph(seed: u64, isolate: bool) -> BipartiteGraph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..8);
    let m = rng.gen_range(2..5);
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if isolate && j == n - 1 {
                continue;
            }
            if rng.gen_bool(0.5) || j == i % (n - 1) {
                edges.push((i, j, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    BipartiteGraph {
        n,
        m,
        var_feats: (0..n * VAR_FEATS).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        con_feats: (0..m * CON_FEATS).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        edges,
        binary_mask: vec![true; n],
    }
}

pub fn random_samples(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect())
        .collect()
}
