#![allow(dead_code)]

use milpmt_core::generate::{gen_mvc, Graph};
use milpmt_core::milp::{MilpInstance, ObjSense, RawInstance, RowSense};
use milpmt_core::Instance;

pub fn packing_pair() -> Instance {
    let mut raw = RawInstance::binary("pair", ObjSense::Minimize, 2);
    raw.obj = vec![-1.0, -1.0];
    raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 1.0);
    MilpInstance::canonicalize(&raw).unwrap()
}

/// Ten `y_k` bounded by one of two switches `x10`, `x11`.
pub fn crafted_backdoor() -> Instance {
    let mut raw = RawInstance::binary("backdoor", ObjSense::Minimize, 12);
    for k in 0..10 {
        raw.obj[k] = -1.0 - 0.01 * k as f64;
        let x = if k < 5 { 10 } else { 11 };
        raw.add_row(vec![(k, 1.0), (x, -1.0)], RowSense::Le, 0.0);
    }
    raw.obj[10] = 2.0;
    raw.obj[11] = 2.0;
    raw.add_row((0..10).map(|k| (k, 1.0)).collect(), RowSense::Le, 7.0);
    raw.add_row(vec![(10, 1.0), (11, 1.0)], RowSense::Le, 1.5);
    MilpInstance::canonicalize(&raw).unwrap()
}

/// Vertex cover of an odd cycle; the root LP sits at all-½.
pub fn odd_cycle_mvc(len: usize) -> Instance {
    let edges: Vec<(usize, usize)> = (0..len).map(|i| (i, (i + 1) % len)).collect();
    let g = Graph::from_edges(len, &edges).unwrap();
    gen_mvc(&g, &format!("cycle{len}")).unwrap()
}

/// `min −x0 − 2x1, x0 + x1 ≤ 1`: the root LP is already integral.
pub fn integral_root() -> Instance {
    let mut raw = RawInstance::binary("integral", ObjSense::Minimize, 2);
    raw.obj = vec![-1.0, -2.0];
    raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 1.0);
    MilpInstance::canonicalize(&raw).unwrap()
}

/// Hamming distance over the binaries.
pub fn hamming(inst: &Instance, a: &[f64], b: &[f64]) -> usize {
    inst.binary_indices()
        .into_iter()
        .filter(|&j| (a[j] > 0.5) != (b[j] > 0.5))
        .count()
}

/// Random small graphs where the positive sample marks variables whose first
/// feature is positive and the negative is its complement.
pub fn toy_records(count: usize, seed: u64) -> Vec<milpmt_pipeline::dataset::Record> {
    use milpmt_core::graph::{BipartiteGraph, CON_FEATS, VAR_FEATS};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|r| {
            let n = rng.gen_range(4..9);
            let m = rng.gen_range(2..5);
            let mut edges = Vec::new();
            for i in 0..m {
                for j in 0..n {
                    if rng.gen_bool(0.5) || j % m == i {
                        edges.push((i, j, rng.gen_range(-1.0f32..1.0)));
                    }
                }
            }
            let graph = BipartiteGraph {
                n,
                m,
                var_feats: (0..n * VAR_FEATS).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                con_feats: (0..m * CON_FEATS).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                edges,
                binary_mask: vec![true; n],
            };
            let pos: Vec<f32> = (0..n).map(|j| if graph.var_feats[j * VAR_FEATS] > 0.0 { 1.0 } else { 0.0 }).collect();
            let neg: Vec<f32> = pos.iter().map(|v| 1.0 - v).collect();
            milpmt_pipeline::dataset::Record {
                id: format!("toy-{r}"),
                graph,
                pos: vec![pos],
                neg: vec![neg],
            }
        })
        .collect()
}

/// Toy configuration records: the default configuration is positive.
pub fn toy_config_records(count: usize, seed: u64) -> Vec<milpmt_pipeline::dataset::Record> {
    use milpmt_core::solver::{default_config, SolverConfig};
    let good: Vec<f32> = default_config().encode().iter().map(|&v| v as f32).collect();
    let mut alt = default_config();
    alt.presolve = !alt.presolve;
    let bad: Vec<f32> = SolverConfig::encode(&alt).iter().map(|&v| v as f32).collect();
    toy_records(count, seed)
        .into_iter()
        .map(|mut r| {
            r.pos = vec![good.clone()];
            r.neg = vec![bad.clone()];
            r
        })
        .collect()
}
