//! Seeded benchmark generators: combinatorial auctions, maximum independent
//! set and minimum vertex cover on Barabási–Albert graphs.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::milp::{io, MilpError, MilpInstance, ObjSense, RawInstance, RowSense};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("bad generator parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Milp(#[from] MilpError),
}

/// Simple undirected graph with edges stored as sorted `(u, v)`, `u < v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Normalizes and deduplicates edges; rejects self-loops.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GenError> {
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(GenError::BadParams(format!("self-loop on {u}")));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(GenError::BadParams(format!("edge ({u},{v}) out of range")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Graph {
            num_nodes,
            edges: set.into_iter().collect(),
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.num_nodes as f64
    }
}

/// Barabási–Albert preferential attachment: a clique on `attach + 1` nodes,
/// then each new node links to `attach` distinct existing nodes drawn with
/// probability proportional to degree.
pub fn gen_ba_graph(nodes: usize, attach: usize, seed: u64) -> Result<Graph, GenError> {
    if attach < 1 || nodes <= attach {
        return Err(GenError::BadParams(format!(
            "need nodes > attach >= 1, got nodes={nodes} attach={attach}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let core = attach + 1;
    let mut edges = Vec::with_capacity(core * attach + (nodes - core) * attach);
    // Each node appears once per incident edge.
    let mut endpoints: Vec<usize> = Vec::new();
    for u in 0..core {
        for v in u + 1..core {
            edges.push((u, v));
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    for new in core..nodes {
        let mut targets: Vec<usize> = Vec::with_capacity(attach);
        while targets.len() < attach {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, new));
            endpoints.push(t);
            endpoints.push(new);
        }
    }
    Graph::from_edges(nodes, &edges)
}

fn redundant_row_if_empty<T: Scalar>(raw: &mut RawInstance<T>) {
    // Canonical instances need at least one row; an edgeless graph gets the
    // always-satisfied row Σ x ≤ n.
    if raw.rows.is_empty() {
        let n = raw.num_vars;
        raw.add_row(
            (0..n).map(|j| (j, T::one())).collect(),
            RowSense::Le,
            T::from_usize_lossy(n),
        );
    }
}

/// `min Σ x_v  s.t.  x_u + x_v ≥ 1` for every edge.
pub fn gen_mvc<T: Scalar>(g: &Graph, name: &str) -> Result<MilpInstance<T>, GenError> {
    if g.num_nodes == 0 {
        return Err(GenError::BadParams("empty graph".into()));
    }
    let mut raw = RawInstance::binary(name, ObjSense::Minimize, g.num_nodes);
    raw.obj = vec![T::one(); g.num_nodes];
    for &(u, v) in &g.edges {
        raw.add_row(vec![(u, T::one()), (v, T::one())], RowSense::Ge, T::one());
    }
    redundant_row_if_empty(&mut raw);
    Ok(MilpInstance::canonicalize(&raw)?)
}

/// `max Σ x_v  s.t.  x_u + x_v ≤ 1` for every edge.
pub fn gen_mis<T: Scalar>(g: &Graph, name: &str) -> Result<MilpInstance<T>, GenError> {
    if g.num_nodes == 0 {
        return Err(GenError::BadParams("empty graph".into()));
    }
    let mut raw = RawInstance::binary(name, ObjSense::Maximize, g.num_nodes);
    raw.obj = vec![T::one(); g.num_nodes];
    for &(u, v) in &g.edges {
        raw.add_row(vec![(u, T::one()), (v, T::one())], RowSense::Le, T::one());
    }
    redundant_row_if_empty(&mut raw);
    Ok(MilpInstance::canonicalize(&raw)?)
}

/// A combinatorial-auction bid: a bundle of item indices and a price.
#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub bundle: Vec<usize>,
    pub price: f64,
}

/// Winner determination: `max Σ price_b x_b  s.t.  Σ_{b ∋ i} x_b ≤ 1` per item.
/// Items that no bid mentions get no row.
pub fn ca_from_bids<T: Scalar>(
    items: usize,
    bids: &[Bid],
    name: &str,
) -> Result<MilpInstance<T>, GenError> {
    if bids.is_empty() {
        return Err(GenError::BadParams("no bids".into()));
    }
    let mut raw = RawInstance::binary(name, ObjSense::Maximize, bids.len());
    raw.obj = bids.iter().map(|b| T::lit(b.price)).collect();
    let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); items];
    for (b, bid) in bids.iter().enumerate() {
        for &i in &bid.bundle {
            if i >= items {
                return Err(GenError::BadParams(format!("item {i} out of range")));
            }
            by_item[i].push(b);
        }
    }
    for bidders in by_item.iter().filter(|b| !b.is_empty()) {
        raw.add_row(
            bidders.iter().map(|&b| (b, T::one())).collect(),
            RowSense::Le,
            T::one(),
        );
    }
    Ok(MilpInstance::canonicalize(&raw)?)
}

/// Probability of extending a bundle by one more item.
const CA_CONTINUE_PROB: f64 = 0.55;

/// Simplified "arbitrary relationships" auction.
///
/// Items get common values `~ U(1, 100)` and a random pairwise compatibility
/// matrix. Each bundle starts from a uniform item and grows by a weighted
/// random walk over compatibilities, stopping with probability
/// `1 − 0.55` after each addition. Prices are the bundle's total value times
/// `1 + U(−0.2, 0.2)`, rounded to cents.
pub fn gen_ca_bids(items: usize, bids: usize, seed: u64) -> Result<Vec<Bid>, GenError> {
    if items < 2 || bids < 1 {
        return Err(GenError::BadParams(format!(
            "need items >= 2 and bids >= 1, got items={items} bids={bids}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..items).map(|_| rng.gen_range(1.0..100.0)).collect();
    let mut compat = vec![0.0f64; items * items];
    for i in 0..items {
        for k in i + 1..items {
            let w: f64 = rng.gen_range(0.0..1.0);
            compat[i * items + k] = w;
            compat[k * items + i] = w;
        }
    }
    let mut out = Vec::with_capacity(bids);
    for _ in 0..bids {
        let mut bundle = vec![rng.gen_range(0..items)];
        while bundle.len() < items && rng.gen::<f64>() < CA_CONTINUE_PROB {
            let last = *bundle.last().unwrap();
            let weights: Vec<f64> = (0..items)
                .map(|k| {
                    if bundle.contains(&k) {
                        0.0
                    } else {
                        compat[last * items + k] + 1e-6
                    }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut r = rng.gen::<f64>() * total;
            let mut pick = items - 1;
            for (k, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                if r < *w {
                    pick = k;
                    break;
                }
                r -= w;
                pick = k;
            }
            bundle.push(pick);
        }
        bundle.sort_unstable();
        let base: f64 = bundle.iter().map(|&i| values[i]).sum();
        let deviation: f64 = rng.gen_range(-0.2..0.2);
        let price = ((base * (1.0 + deviation)) * 100.0).round() / 100.0;
        out.push(Bid {
            bundle,
            price: price.max(0.01),
        });
    }
    Ok(out)
}

pub fn gen_ca<T: Scalar>(
    items: usize,
    bids: usize,
    seed: u64,
    name: &str,
) -> Result<MilpInstance<T>, GenError> {
    ca_from_bids(items, &gen_ca_bids(items, bids, seed)?, name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Ca,
    Mis,
    Mvc,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Ca, Family::Mis, Family::Mvc];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Ca => "ca",
            Family::Mis => "mis",
            Family::Mvc => "mvc",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        match s.to_ascii_lowercase().as_str() {
            "ca" => Ok(Family::Ca),
            "mis" => Ok(Family::Mis),
            "mvc" => Ok(Family::Mvc),
            other => Err(GenError::BadParams(format!("unknown family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeParams {
    Auction { items: usize, bids: usize },
    Graph { avg_degree: usize, nodes: usize },
}

impl SizeParams {
    /// Preferential-attachment parameter for a target average degree.
    pub fn attach(avg_degree: usize) -> usize {
        ((avg_degree as f64) / 2.0).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenSpec {
    pub family: Family,
    pub size: SizeParams,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Small,
    Large,
    Desk,
}

impl FromStr for Preset {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        match s {
            "S" | "s" => Ok(Preset::Small),
            "L" | "l" => Ok(Preset::Large),
            "desk" => Ok(Preset::Desk),
            other => Err(GenError::BadParams(format!("unknown preset `{other}`"))),
        }
    }
}

/// Which learning task a full-scale preset is sized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetTask {
    Backdoor,
    Pas,
    Config,
}

/// Instance sizes per family and preset. `S`/`L` are the full-scale benchmark
/// sizes; `desk` is small enough for laptop-scale experiments.
pub fn preset_size(family: Family, preset: Preset, task: PresetTask) -> SizeParams {
    use PresetTask::*;
    use SizeParams::{Auction, Graph as G};
    match (family, preset) {
        (Family::Ca, Preset::Desk) => Auction {
            items: 40,
            bids: 200,
        },
        (Family::Mis | Family::Mvc, Preset::Desk) => G {
            avg_degree: 6,
            nodes: 150,
        },
        (Family::Ca, p) => {
            let (items, bids) = match (task, p) {
                (Backdoor, Preset::Small) => (175, 850),
                (Backdoor, _) => (200, 1000),
                (_, Preset::Small) => (2000, 4000),
                (_, _) => (3000, 6000),
            };
            Auction { items, bids }
        }
        (Family::Mis, p) => {
            let (avg_degree, nodes) = match (task, p) {
                (Backdoor, Preset::Small) => (4, 1250),
                (Backdoor, _) => (4, 1500),
                (Pas, Preset::Small) => (5, 6000),
                (Pas, _) => (5, 9000),
                (Config, Preset::Small) => (4, 3000),
                (Config, _) => (5, 6000),
            };
            G { avg_degree, nodes }
        }
        (Family::Mvc, p) => {
            let (avg_degree, nodes) = match (task, p) {
                (Backdoor, Preset::Small) => (5, 1500),
                (Backdoor, _) => (5, 2000),
                (Pas, Preset::Small) => (5, 6000),
                (Pas, _) => (5, 9000),
                (Config, Preset::Small) => (4, 3000),
                (Config, _) => (5, 6000),
            };
            G { avg_degree, nodes }
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        match (self.family, self.size) {
            (Family::Ca, SizeParams::Auction { items, bids }) => {
                if items < 2 || bids < items {
                    return Err(GenError::BadParams(format!(
                        "auction sizes need items >= 2 and bids >= items, got ({items}, {bids})"
                    )));
                }
            }
            (Family::Mis | Family::Mvc, SizeParams::Graph { avg_degree, nodes }) => {
                if avg_degree == 0 || nodes <= SizeParams::attach(avg_degree) {
                    return Err(GenError::BadParams(format!(
                        "graph sizes need degree >= 1 and nodes > attach, got ({avg_degree}, {nodes})"
                    )));
                }
            }
            _ => {
                return Err(GenError::BadParams(
                    "size parameters do not match the family".into(),
                ))
            }
        }
        Ok(())
    }

    /// Identifier of the `index`-th instance of a suite.
    pub fn instance_id(&self, index: usize) -> String {
        format!("{}-{}-{}", self.family, self.seed, index)
    }

    /// The `index`-th instance, seeded with `seed + index`.
    pub fn generate<T: Scalar>(&self, index: usize) -> Result<MilpInstance<T>, GenError> {
        self.validate()?;
        let seed = self.seed.wrapping_add(index as u64);
        let name = self.instance_id(index);
        match (self.family, self.size) {
            (Family::Ca, SizeParams::Auction { items, bids }) => gen_ca(items, bids, seed, &name),
            (family, SizeParams::Graph { avg_degree, nodes }) => {
                let g = gen_ba_graph(nodes, SizeParams::attach(avg_degree), seed)?;
                if family == Family::Mis {
                    gen_mis(&g, &name)
                } else {
                    gen_mvc(&g, &name)
                }
            }
            _ => unreachable!("validated"),
        }
    }
}

/// Generates `count` instances.
pub fn gen_suite<T: Scalar>(spec: &GenSpec, count: usize) -> Result<Vec<MilpInstance<T>>, GenError> {
    (0..count).map(|k| spec.generate(k)).collect()
}

/// Generates `count` instances and writes `<id>.milp` files into `dir`.
pub fn write_suite(spec: &GenSpec, count: usize, dir: &Path) -> Result<Vec<PathBuf>, GenError> {
    std::fs::create_dir_all(dir).map_err(MilpError::from)?;
    let mut paths = Vec::with_capacity(count);
    for k in 0..count {
        let inst: MilpInstance<f64> = spec.generate(k)?;
        let path = dir.join(format!("{}.milp", inst.name()));
        io::write_instance(&inst, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Random permutation helper shared by tests and the permutation checks.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}
