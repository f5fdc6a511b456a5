//! Bipartite variable/constraint graph with fixed per-node feature schemas.

use std::io::{Read, Write};

use thiserror::Error;

use crate::lp::{LpSolution, LpStatus};
use crate::milp::MilpInstance;
use crate::scalar::Scalar;

pub const VAR_FEATS: usize = 15;
pub const CON_FEATS: usize = 4;
pub const EDGE_FEATS: usize = 1;
pub const SCHEMA_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"MBG1";

const VAR_SCHEMA: [&str; VAR_FEATS] = [
    "obj_coef_scaled",
    "is_binary",
    "is_continuous",
    "has_lower_bound",
    "lower_bound_clipped",
    "has_upper_bound",
    "upper_bound_clipped",
    "column_degree_ratio",
    "root_lp_value",
    "root_lp_fractionality",
    "root_at_lower",
    "root_at_upper",
    "root_reduced_cost_scaled",
    "obj_coef_sign",
    "obj_coef_nonzero",
];

const CON_SCHEMA: [&str; CON_FEATS] = [
    "rhs_scaled",
    "row_degree_ratio",
    "root_dual_scaled",
    "root_tight",
];

const EDGE_SCHEMA: [&str; EDGE_FEATS] = ["coef_row_scaled"];

/// Frozen, versioned feature layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSchema {
    pub version: u32,
    pub var: &'static [&'static str],
    pub con: &'static [&'static str],
    pub edge: &'static [&'static str],
}

pub fn schema() -> FeatureSchema {
    FeatureSchema {
        version: SCHEMA_VERSION,
        var: &VAR_SCHEMA,
        con: &CON_SCHEMA,
        edge: &EDGE_SCHEMA,
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("root LP is not optimal ({0:?})")]
    LpNotOptimal(LpStatus),
    #[error("root LP has {got} entries, instance has {expected} variables")]
    LpShape { expected: usize, got: usize },
    #[error("malformed graph file: {0}")]
    Format(String),
    #[error("graph file uses schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense feature blocks (row-major) plus `(constraint, variable, feature)`
/// edges in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph<T> {
    pub n: usize,
    pub m: usize,
    pub var_feats: Vec<T>,
    pub con_feats: Vec<T>,
    pub edges: Vec<(usize, usize, T)>,
    pub binary_mask: Vec<bool>,
}

fn clip<T: Scalar>(v: T) -> T {
    v.max(-T::one()).min(T::one())
}

fn flag<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Builds the bipartite graph of `inst` with root-LP features taken from
/// `root_lp`, normalizing per instance.
pub fn encode<T: Scalar>(
    inst: &MilpInstance<T>,
    root_lp: &LpSolution<T>,
) -> Result<BipartiteGraph<T>, GraphError> {
    if root_lp.status != LpStatus::Optimal {
        return Err(GraphError::LpNotOptimal(root_lp.status));
    }
    let n = inst.num_vars();
    let m = inst.num_cons();
    if root_lp.x.len() != n || root_lp.reduced_costs.len() != n || root_lp.duals.len() != m {
        return Err(GraphError::LpShape {
            expected: n,
            got: root_lp.x.len(),
        });
    }
    let tol = T::lit(1e-6);
    let c = inst.obj();
    let c_inf = c.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let mut col_deg = vec![0usize; n];
    for row in inst.rows() {
        for &j in &row.idx {
            col_deg[j] += 1;
        }
    }

    let mut var_feats = Vec::with_capacity(n * VAR_FEATS);
    for j in 0..n {
        let (lb, ub, x) = (inst.var_lb()[j], inst.var_ub()[j], root_lp.x[j]);
        let frac = (x - x.floor()).min(x.ceil() - x);
        let bin = inst.is_binary(j);
        var_feats.extend_from_slice(&[
            if c_inf > T::zero() { c[j] / c_inf } else { T::zero() },
            flag(bin),
            flag(!bin),
            flag(lb.is_finite()),
            if lb.is_finite() { clip(lb) } else { T::zero() },
            flag(ub.is_finite()),
            if ub.is_finite() { clip(ub) } else { T::zero() },
            if m > 0 { T::from_usize_lossy(col_deg[j]) / T::from_usize_lossy(m) } else { T::zero() },
            clip(x),
            clip(frac * T::lit(2.0)),
            flag(lb.is_finite() && (x - lb).abs() <= tol),
            flag(ub.is_finite() && (ub - x).abs() <= tol),
            clip(root_lp.reduced_costs[j] / (T::one() + c_inf)),
            sign(c[j]),
            flag(c[j] != T::zero()),
        ]);
    }

    let b_max = inst.rhs().iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let y_max = root_lp.duals.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
    let act = inst.row_activities(&root_lp.x);
    let mut con_feats = Vec::with_capacity(m * CON_FEATS);
    let mut edges = Vec::with_capacity(inst.nnz());
    for (i, row) in inst.rows().iter().enumerate() {
        let b = inst.rhs()[i];
        con_feats.extend_from_slice(&[
            b / (T::one() + b_max),
            if n > 0 { T::from_usize_lossy(row.nnz()) / T::from_usize_lossy(n) } else { T::zero() },
            root_lp.duals[i] / (T::one() + y_max),
            flag(b - act[i] <= tol),
        ]);
        let a_max = row.val.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
        for (j, a) in row.iter() {
            edges.push((i, j, a / (T::one() + a_max)));
        }
    }

    Ok(BipartiteGraph {
        n,
        m,
        var_feats,
        con_feats,
        edges,
        binary_mask: inst.binary_mask().to_vec(),
    })
}

impl<T: Scalar> BipartiteGraph<T> {
    pub fn var_row(&self, j: usize) -> &[T] {
        &self.var_feats[j * VAR_FEATS..(j + 1) * VAR_FEATS]
    }

    pub fn con_row(&self, i: usize) -> &[T] {
        &self.con_feats[i * CON_FEATS..(i + 1) * CON_FEATS]
    }

    pub fn nnz(&self) -> usize {
        self.edges.len()
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| self.binary_mask[j]).collect()
    }

    /// Relabels nodes: variable `j` becomes `var_perm[j]`, constraint `i`
    /// becomes `con_perm[i]`. Edges are re-sorted by (constraint, variable).
    pub fn permuted(&self, var_perm: &[usize], con_perm: &[usize]) -> Self {
        let mut var_feats = vec![T::zero(); self.var_feats.len()];
        let mut binary_mask = vec![false; self.n];
        for j in 0..self.n {
            let k = var_perm[j];
            var_feats[k * VAR_FEATS..(k + 1) * VAR_FEATS].copy_from_slice(self.var_row(j));
            binary_mask[k] = self.binary_mask[j];
        }
        let mut con_feats = vec![T::zero(); self.con_feats.len()];
        for i in 0..self.m {
            let k = con_perm[i];
            con_feats[k * CON_FEATS..(k + 1) * CON_FEATS].copy_from_slice(self.con_row(i));
        }
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j, e)| (con_perm[i], var_perm[j], e))
            .collect();
        edges.sort_by_key(|&(i, j, _)| (i, j));
        BipartiteGraph {
            n: self.n,
            m: self.m,
            var_feats,
            con_feats,
            edges,
            binary_mask,
        }
    }

    pub fn cast<U: Scalar>(&self) -> BipartiteGraph<U> {
        let conv = |v: &T| U::lit(v.as_f64());
        BipartiteGraph {
            n: self.n,
            m: self.m,
            var_feats: self.var_feats.iter().map(conv).collect(),
            con_feats: self.con_feats.iter().map(conv).collect(),
            edges: self.edges.iter().map(|(i, j, e)| (*i, *j, conv(e))).collect(),
            binary_mask: self.binary_mask.clone(),
        }
    }

    /// Little-endian layout: magic, schema version, `n`, `m`, `nnz` (u32),
    /// then `V`, `C` as f32 and `(u32 con, u32 var, f32 coef)` per edge.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GraphError> {
        w.write_all(MAGIC)?;
        for v in [SCHEMA_VERSION, self.n as u32, self.m as u32, self.edges.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.var_feats.iter().chain(&self.con_feats) {
            w.write_all(&v.to_f32_bits())?;
        }
        for &(i, j, e) in &self.edges {
            w.write_all(&(i as u32).to_le_bytes())?;
            w.write_all(&(j as u32).to_le_bytes())?;
            w.write_all(&e.to_f32_bits())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Inverse of [`write_to`](Self::write_to). The binary mask is recovered
    /// from the `is_binary` feature.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, GraphError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(GraphError::Format("bad magic".into()));
        }
        let mut word = || -> Result<u32, GraphError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = word()?;
        if version != SCHEMA_VERSION {
            return Err(GraphError::SchemaVersion(version));
        }
        let (n, m, nnz) = (word()? as usize, word()? as usize, word()? as usize);
        let mut f = |count: usize| -> Result<Vec<T>, GraphError> {
            (0..count)
                .map(|_| word().map(|b| <T as Scalar>::from_f32(f32::from_bits(b))))
                .collect()
        };
        let var_feats = f(n * VAR_FEATS)?;
        let con_feats = f(m * CON_FEATS)?;
        let mut edges = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let i = word()? as usize;
            let j = word()? as usize;
            let e = <T as Scalar>::from_f32(f32::from_bits(word()?));
            if i >= m || j >= n {
                return Err(GraphError::Format(format!("edge ({i},{j}) out of range")));
            }
            edges.push((i, j, e));
        }
        let binary_mask = (0..n)
            .map(|j| var_feats[j * VAR_FEATS + 1] > T::lit(0.5))
            .collect();
        Ok(BipartiteGraph {
            n,
            m,
            var_feats,
            con_feats,
            edges,
            binary_mask,
        })
    }
}
