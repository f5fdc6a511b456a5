use std::fmt;
use std::str::FromStr;

use milpmt_core::graph::{BipartiteGraph, CON_FEATS, VAR_FEATS};
use milpmt_core::solver::config::CATEGORICAL_GROUPS;
use milpmt_core::solver::CONFIG_DIM;
use milpmt_core::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::NnError;

pub const EMBED_DIM: usize = 64;
pub const NUM_HEADS: usize = 8;
/// Negative slope inside attention scoring.
pub const ATTN_SLOPE: f64 = 0.2;
/// Negative slope of hidden activations elsewhere.
pub const HIDDEN_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Backdoor,
    Pas,
    Config,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Backdoor, Task::Pas, Task::Config];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Backdoor => "backdoor",
            Task::Pas => "pas",
            Task::Config => "config",
        }
    }

    /// Whether the task scores variables (as opposed to instances).
    pub fn per_variable(self) -> bool {
        !matches!(self, Task::Config)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, NnError> {
        match s {
            "backdoor" => Ok(Task::Backdoor),
            "pas" => Ok(Task::Pas),
            "config" => Ok(Task::Config),
            _ => Err(NnError::UnknownTask(s.to_string())),
        }
    }
}

/// Task scores in `[0, 1]`: one per variable, or a config vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector<T> {
    pub task: Task,
    pub values: Vec<T>,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl<T: Scalar> Linear<T> {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: Tensor::uniform(fan_in, fan_out, bound, rng),
            b: Tensor::uniform(1, fan_out, bound, rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::zeros(fan_in, fan_out),
            b: Tensor::zeros(1, fan_out),
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }

    fn bind(&self, binder: &mut Binder<'_, T>) -> LinearVars {
        LinearVars {
            w: binder.bind(&self.w),
            b: binder.bind(&self.b),
        }
    }
}

fn affine<T: Scalar>(tape: &mut Tape<T>, x: Var, l: LinearVars) -> Var {
    let y = tape.matmul(x, l.w);
    tape.add_bias(y, l.b)
}

/// Records parameters on a tape in declaration order.
struct Binder<'t, T> {
    tape: &'t mut Tape<T>,
    trainable: bool,
    vars: Vec<Var>,
}

impl<T: Scalar> Binder<'_, T> {
    fn bind(&mut self, t: &Tensor<T>) -> Var {
        let v = if self.trainable {
            self.tape.param(t)
        } else {
            self.tape.constant(t.clone())
        };
        self.vars.push(v);
        v
    }
}

/// One attention round: destination nodes attend over their neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct GatRound<T> {
    pub w_dst: Linear<T>,
    pub w_src: Linear<T>,
    pub w_val: Linear<T>,
    /// Edge-coefficient projection added to the attention input.
    pub w_edge: Tensor<T>,
    /// Per-head attention vectors, concatenated.
    pub att: Tensor<T>,
    pub merge: Linear<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct GatRoundVars {
    w_dst: LinearVars,
    w_src: LinearVars,
    w_val: LinearVars,
    w_edge: Var,
    att: Var,
    merge: LinearVars,
    ln_gamma: Var,
    ln_beta: Var,
}

impl<T: Scalar> GatRound<T> {
    fn init(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        GatRound {
            w_dst: Linear::init(dim, dim, rng),
            w_src: Linear::init(dim, dim, rng),
            w_val: Linear::init(dim, dim, rng),
            w_edge: Tensor::uniform(1, dim, 1.0, rng),
            att: Tensor::uniform(1, dim, 1.0 / ((dim / heads) as f64).sqrt(), rng),
            merge: Linear::init(dim, dim, rng),
            ln_gamma: Tensor::filled(1, dim, T::one()),
            ln_beta: Tensor::zeros(1, dim),
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.w_dst.tensors(&format!("{prefix}.w_dst"), out);
        self.w_src.tensors(&format!("{prefix}.w_src"), out);
        self.w_val.tensors(&format!("{prefix}.w_val"), out);
        out.push((format!("{prefix}.w_edge"), &self.w_edge));
        out.push((format!("{prefix}.att"), &self.att));
        self.merge.tensors(&format!("{prefix}.merge"), out);
        out.push((format!("{prefix}.ln_gamma"), &self.ln_gamma));
        out.push((format!("{prefix}.ln_beta"), &self.ln_beta));
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        self.w_dst.tensors_mut(out);
        self.w_src.tensors_mut(out);
        self.w_val.tensors_mut(out);
        out.push(&mut self.w_edge);
        out.push(&mut self.att);
        self.merge.tensors_mut(out);
        out.push(&mut self.ln_gamma);
        out.push(&mut self.ln_beta);
    }

    fn bind(&self, b: &mut Binder<'_, T>) -> GatRoundVars {
        GatRoundVars {
            w_dst: self.w_dst.bind(b),
            w_src: self.w_src.bind(b),
            w_val: self.w_val.bind(b),
            w_edge: b.bind(&self.w_edge),
            att: b.bind(&self.att),
            merge: self.merge.bind(b),
            ln_gamma: b.bind(&self.ln_gamma),
            ln_beta: b.bind(&self.ln_beta),
        }
    }
}

/// Edge list of one round, grouped by destination.
struct Adjacency {
    dst: Vec<usize>,
    src: Vec<usize>,
    order: Vec<usize>,
    has_neighbor: Vec<bool>,
}

impl Adjacency {
    fn build(pairs: impl Iterator<Item = (usize, usize)>, num_dst: usize) -> Self {
        let mut items: Vec<(usize, usize, usize)> = pairs.enumerate().map(|(k, (d, s))| (d, s, k)).collect();
        items.sort_unstable();
        let mut has_neighbor = vec![false; num_dst];
        for &(d, _, _) in &items {
            has_neighbor[d] = true;
        }
        Adjacency {
            dst: items.iter().map(|t| t.0).collect(),
            src: items.iter().map(|t| t.1).collect(),
            order: items.iter().map(|t| t.2).collect(),
            has_neighbor,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gat_round<T: Scalar>(
    tape: &mut Tape<T>,
    p: GatRoundVars,
    h_dst: Var,
    h_src: Var,
    edge_feat: Var,
    adj: &Adjacency,
    heads: usize,
) -> Var {
    let num_dst = tape.value(h_dst).rows();
    let q = affine(tape, h_dst, p.w_dst);
    let k = affine(tape, h_src, p.w_src);
    let v = affine(tape, h_src, p.w_val);
    let qe = tape.gather_rows(q, &adj.dst);
    let ke = tape.gather_rows(k, &adj.src);
    let ef = tape.gather_rows(edge_feat, &adj.order);
    let ee = tape.matmul(ef, p.w_edge);
    let s = tape.add(qe, ke);
    let s = tape.add(s, ee);
    let s = tape.leaky_relu(s, ATTN_SLOPE);
    let scores = tape.head_dot(s, p.att, heads);
    let alpha = tape.segment_softmax(scores, &adj.dst, num_dst);
    let ve = tape.gather_rows(v, &adj.src);
    let msg = tape.scatter_heads(alpha, ve, &adj.dst, num_dst, heads);
    let out = affine(tape, msg, p.merge);
    let res = tape.add(h_dst, out);
    let normed = tape.layer_norm(res, p.ln_gamma, p.ln_beta);
    // isolated nodes keep their input embedding
    tape.mask_select_rows(normed, h_dst, &adj.has_neighbor)
}

/// Shared encoder: feature embeddings followed by a constraint-side and a
/// variable-side attention round.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkParams<T> {
    pub dim: usize,
    pub heads: usize,
    pub var_embed: Linear<T>,
    pub con_embed: Linear<T>,
    pub round1: GatRound<T>,
    pub round2: GatRound<T>,
}

#[derive(Debug, Clone)]
pub struct TrunkVars {
    var_embed: LinearVars,
    con_embed: LinearVars,
    round1: GatRoundVars,
    round2: GatRoundVars,
    /// All parameter handles in [`TrunkParams::tensors`] order.
    pub all: Vec<Var>,
}

impl<T: Scalar> TrunkParams<T> {
    pub fn init(seed: u64) -> Self {
        Self::init_with(EMBED_DIM, NUM_HEADS, seed)
    }

    pub fn init_with(dim: usize, heads: usize, seed: u64) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim must be divisible by heads");
        let mut rng = seeded(seed, 0);
        TrunkParams {
            dim,
            heads,
            var_embed: Linear::init(VAR_FEATS, dim, &mut rng),
            con_embed: Linear::init(CON_FEATS, dim, &mut rng),
            round1: GatRound::init(dim, heads, &mut rng),
            round2: GatRound::init(dim, heads, &mut rng),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.var_embed.tensors("trunk.var_embed", &mut out);
        self.con_embed.tensors("trunk.con_embed", &mut out);
        self.round1.tensors("trunk.round1", &mut out);
        self.round2.tensors("trunk.round2", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.var_embed.tensors_mut(&mut out);
        self.con_embed.tensors_mut(&mut out);
        self.round1.tensors_mut(&mut out);
        self.round2.tensors_mut(&mut out);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> TrunkVars {
        let mut b = Binder {
            tape,
            trainable,
            vars: Vec::new(),
        };
        let var_embed = self.var_embed.bind(&mut b);
        let con_embed = self.con_embed.bind(&mut b);
        let round1 = self.round1.bind(&mut b);
        let round2 = self.round2.bind(&mut b);
        TrunkVars {
            var_embed,
            con_embed,
            round1,
            round2,
            all: b.vars,
        }
    }

    fn check_graph(&self, g: &BipartiteGraph<T>) -> Result<(), NnError> {
        if self.var_embed.w.rows() != VAR_FEATS || self.con_embed.w.rows() != CON_FEATS {
            return Err(NnError::SchemaMismatch(format!(
                "trunk expects {}/{} features",
                self.var_embed.w.rows(),
                self.con_embed.w.rows()
            )));
        }
        if g.var_feats.len() != g.n * VAR_FEATS || g.con_feats.len() != g.m * CON_FEATS {
            return Err(NnError::SchemaMismatch("graph feature blocks have the wrong size".into()));
        }
        if g.edges.iter().any(|&(i, j, _)| i >= g.m || j >= g.n) {
            return Err(NnError::SchemaMismatch("edge endpoint out of range".into()));
        }
        Ok(())
    }

    /// Records the trunk on `tape`, returning `(V², C²)`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &TrunkVars, g: &BipartiteGraph<T>) -> Result<(Var, Var), NnError> {
        self.check_graph(g)?;
        let v0 = tape.constant(Tensor::matrix(g.n, VAR_FEATS, g.var_feats.clone()));
        let c0 = tape.constant(Tensor::matrix(g.m, CON_FEATS, g.con_feats.clone()));
        let ef = tape.constant(Tensor::matrix(
            g.edges.len(),
            1,
            g.edges.iter().map(|e| e.2).collect(),
        ));
        let v1 = affine(tape, v0, p.var_embed);
        let v1 = tape.leaky_relu(v1, HIDDEN_SLOPE);
        let c1 = affine(tape, c0, p.con_embed);
        let c1 = tape.leaky_relu(c1, HIDDEN_SLOPE);

        let to_cons = Adjacency::build(g.edges.iter().map(|&(i, j, _)| (i, j)), g.m);
        let c2 = gat_round(tape, p.round1, c1, v1, ef, &to_cons, self.heads);
        let to_vars = Adjacency::build(g.edges.iter().map(|&(i, j, _)| (j, i)), g.n);
        let v2 = gat_round(tape, p.round2, v1, c2, ef, &to_vars, self.heads);
        Ok((v2, c2))
    }

    /// Inference-only forward pass: `(V², C²)` as tensors.
    pub fn embed(&self, g: &BipartiteGraph<T>) -> Result<(Tensor<T>, Tensor<T>), NnError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let (v2, c2) = self.forward(&mut tape, &vars, g)?;
        Ok((tape.value(v2).clone(), tape.value(c2).clone()))
    }
}

/// Task-specific output network on top of the trunk embeddings.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskHead<T> {
    /// Per-variable MLP `L → L → 1` with sigmoid output.
    VarScorer { hidden: Linear<T>, out: Linear<T> },
    /// Pooled `[mean V² ‖ mean C²]` through `2L → L → 19`, sigmoid on
    /// numeric slots and softmax per categorical group.
    ConfigScorer { hidden: Linear<T>, out: Linear<T> },
}

#[derive(Debug, Clone)]
pub struct HeadVars {
    hidden: LinearVars,
    out: LinearVars,
    pub all: Vec<Var>,
}

impl<T: Scalar> TaskHead<T> {
    pub fn init(task: Task, dim: usize, seed: u64) -> Self {
        let mut rng = seeded(seed, 1);
        if task.per_variable() {
            TaskHead::VarScorer {
                hidden: Linear::init(dim, dim, &mut rng),
                out: Linear::init(dim, 1, &mut rng),
            }
        } else {
            TaskHead::ConfigScorer {
                hidden: Linear::init(2 * dim, dim, &mut rng),
                out: Linear::init(dim, CONFIG_DIM, &mut rng),
            }
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, TaskHead::ConfigScorer { .. })
    }

    fn layers(&self) -> (&Linear<T>, &Linear<T>) {
        match self {
            TaskHead::VarScorer { hidden, out } | TaskHead::ConfigScorer { hidden, out } => (hidden, out),
        }
    }

    pub fn tensors(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let (h, o) = self.layers();
        let mut out = Vec::new();
        h.tensors(&format!("{prefix}.hidden"), &mut out);
        o.tensors(&format!("{prefix}.out"), &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        match self {
            TaskHead::VarScorer { hidden, out: o } | TaskHead::ConfigScorer { hidden, out: o } => {
                hidden.tensors_mut(&mut out);
                o.tensors_mut(&mut out);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors("h").iter().map(|(_, t)| t.len()).sum()
    }

    /// Embedding width the head expects.
    pub fn dim(&self) -> usize {
        self.layers().1.w.rows()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> HeadVars {
        let (h, o) = self.layers();
        let mut b = Binder {
            tape,
            trainable,
            vars: Vec::new(),
        };
        let hidden = h.bind(&mut b);
        let out = o.bind(&mut b);
        HeadVars {
            hidden,
            out,
            all: b.vars,
        }
    }

    /// Records the head; the result is `n × 1` or `1 × 19`.
    pub fn forward(&self, tape: &mut Tape<T>, p: &HeadVars, v2: Var, c2: Var) -> Result<Var, NnError> {
        let d = self.dim();
        if tape.value(v2).cols() != d || tape.value(c2).cols() != d {
            return Err(NnError::DimMismatch(format!("head expects {d}-wide embeddings")));
        }
        Ok(match self {
            TaskHead::VarScorer { .. } => {
                let h = affine(tape, v2, p.hidden);
                let h = tape.leaky_relu(h, HIDDEN_SLOPE);
                let z = affine(tape, h, p.out);
                tape.sigmoid(z)
            }
            TaskHead::ConfigScorer { .. } => {
                let mv = tape.mean_rows(v2);
                let mc = tape.mean_rows(c2);
                let pooled = tape.concat_cols(mv, mc);
                let h = affine(tape, pooled, p.hidden);
                let h = tape.leaky_relu(h, HIDDEN_SLOPE);
                let z = affine(tape, h, p.out);
                tape.group_activation(z, &CATEGORICAL_GROUPS)
            }
        })
    }

    /// Inference on precomputed embeddings.
    pub fn predict(&self, task: Task, v2: &Tensor<T>, c2: &Tensor<T>) -> Result<PredictionVector<T>, NnError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let v = tape.constant(v2.clone());
        let c = tape.constant(c2.clone());
        let out = self.forward(&mut tape, &vars, v, c)?;
        Ok(PredictionVector {
            task,
            values: tape.value(out).data.clone(),
        })
    }
}

/// Gradients of `vars` after a backward pass, zero where none reached.
pub fn collect_grads<T: Scalar>(tape: &Tape<T>, vars: &[Var]) -> Vec<Vec<T>> {
    vars.iter()
        .map(|&v| {
            tape.grad(v)
                .map(<[T]>::to_vec)
                .unwrap_or_else(|| vec![T::zero(); tape.value(v).len()])
        })
        .collect()
}
