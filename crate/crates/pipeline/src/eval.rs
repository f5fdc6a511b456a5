//! Applies trained heads inside the solver and scores runs with primal gap,
//! primal integral and solve effort.

use milpmt_core::metrics::{gap_series, primal_gap, primal_integral};
use milpmt_core::milp::MilpError;
use milpmt_core::solver::{default_config, solve, BranchPriorities, SolveBudget, SolveError, SolverConfig};
use milpmt_core::{Instance, Solution};
use milpmt_nn::{Checkpoint, NnError, Task};
use thiserror::Error;

use crate::collect::{search_configs, CollectError};
use crate::dataset::instance_graph;
use crate::train::{task_head, TrainError};
use crate::{derive_seed, par_map};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("bad evaluation parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("instance {id}: {source}")]
    Instance { id: String, source: Box<EvalError> },
}

pub const BASELINE: &str = "baseline";

/// One approach's run on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub instance: String,
    pub approach: String,
    pub status: String,
    pub nodes: u64,
    pub pivots: u64,
    pub wall_seconds: f64,
    /// Original sense.
    pub best_obj: Option<f64>,
    pub pg: f64,
    pub pi: f64,
    /// Gap-versus-work steps up to the horizon.
    pub series: Vec<(u64, f64)>,
}

/// Records of one task on one benchmark suite.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub benchmark: String,
    pub task: Task,
    pub records: Vec<EvalRecord>,
}

/// The `k` highest scores among `candidates`, ties to the lower index.
pub fn select_top_k(scores: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    c.truncate(k);
    c
}

/// The `k` lowest scores among `candidates`, ties to the lower index.
pub fn select_bottom_k(scores: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    c.truncate(k);
    c
}

/// Head output on the instance's root-LP graph.
pub fn predict(ckpt: &Checkpoint<f32>, task: Task, inst: &Instance) -> Result<Vec<f64>, EvalError> {
    let head = task_head(ckpt, task)?;
    let g = instance_graph(inst)?;
    let (v2, c2) = ckpt.trunk.embed(&g)?;
    let p = head.predict(task, &v2, &c2)?;
    Ok(p.values.iter().map(|&v| v as f64).collect())
}

/// A finished run before scoring; `None` stands for "no usable trace"
/// (scored with gap 1 throughout).
struct Run {
    approach: String,
    result: Option<Solution>,
}

fn horizon(budget: &SolveBudget, runs: &[Run]) -> u64 {
    budget.work_limit.unwrap_or_else(|| {
        runs.iter()
            .filter_map(|r| r.result.as_ref().map(|s| s.trace.total_work))
            .max()
            .unwrap_or(1)
            .max(1)
    })
}

/// Scores runs of one instance against the best objective any of them found.
fn score(id: &str, inst: &Instance, runs: Vec<Run>, budget: &SolveBudget) -> Vec<EvalRecord> {
    let cutoff = horizon(budget, &runs);
    let v_star = runs
        .iter()
        .filter_map(|r| r.result.as_ref())
        .map(|s| s.best_internal(inst))
        .fold(f64::INFINITY, f64::min);
    runs.into_iter()
        .map(|r| match r.result {
            Some(s) if s.best_assignment.is_some() => {
                let best = s.best_internal(inst);
                EvalRecord {
                    instance: id.to_string(),
                    approach: r.approach,
                    status: s.status.as_str().to_string(),
                    nodes: s.trace.nodes_processed,
                    pivots: s.trace.total_work,
                    wall_seconds: s.wall_seconds,
                    best_obj: s.best_obj,
                    pg: primal_gap(Some(best), v_star),
                    pi: primal_integral(&s.trace, v_star, cutoff).unwrap_or(cutoff as f64),
                    series: gap_series(&s.trace, v_star, cutoff),
                }
            }
            other => {
                let (status, nodes, pivots, wall) = other.as_ref().map_or(("infeasible".to_string(), 0, 0, 0.0), |s| {
                    (
                        s.status.as_str().to_string(),
                        s.trace.nodes_processed,
                        s.trace.total_work,
                        s.wall_seconds,
                    )
                });
                EvalRecord {
                    instance: id.to_string(),
                    approach: r.approach,
                    status,
                    nodes,
                    pivots,
                    wall_seconds: wall,
                    best_obj: None,
                    pg: 1.0,
                    pi: cutoff as f64,
                    series: vec![(0, 1.0), (cutoff, 1.0)],
                }
            }
        })
        .collect()
}

fn per_instance<F>(instances: &[(String, Instance)], f: F) -> Result<Vec<EvalRecord>, EvalError>
where
    F: Fn(usize, &str, &Instance) -> Result<Vec<EvalRecord>, EvalError> + Sync,
{
    let out = par_map(instances, |idx, (id, inst)| {
        f(idx, id, inst).map_err(|e| EvalError::Instance {
            id: id.clone(),
            source: Box::new(e),
        })
    });
    let mut records = Vec::new();
    for r in out {
        records.extend(r?);
    }
    Ok(records)
}

/// Baseline run versus the same configuration with the `k` top-scored
/// binaries prioritized.
pub fn compare_backdoor(
    id: &str,
    inst: &Instance,
    scores: &[f64],
    approach: &str,
    k: usize,
    budget: &SolveBudget,
    baseline_cfg: &SolverConfig,
    seed: u64,
) -> Result<Vec<EvalRecord>, EvalError> {
    let chosen = select_top_k(scores, &inst.binary_indices(), k);
    let pr = BranchPriorities::from_selected(inst.num_vars(), &chosen);
    let base = solve(inst, baseline_cfg, None, budget, seed)?;
    let model = solve(inst, baseline_cfg, Some(&pr), budget, seed)?;
    Ok(score(
        id,
        inst,
        vec![
            Run {
                approach: BASELINE.into(),
                result: Some(base),
            },
            Run {
                approach: approach.into(),
                result: Some(model),
            },
        ],
        budget,
    ))
}

pub fn eval_backdoor(
    ckpt: &Checkpoint<f32>,
    approach: &str,
    instances: &[(String, Instance)],
    k: usize,
    budget: &SolveBudget,
    baseline_cfg: &SolverConfig,
    seed: u64,
) -> Result<Vec<EvalRecord>, EvalError> {
    per_instance(instances, |idx, id, inst| {
        let scores = predict(ckpt, Task::Backdoor, inst)?;
        compare_backdoor(id, inst, &scores, approach, k, budget, baseline_cfg, derive_seed(seed, idx as u64))
    })
}

/// A set size given directly or as a fraction of the binary count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amount {
    Count(usize),
    Fraction(f64),
}

impl Amount {
    pub fn resolve(self, num_binaries: usize) -> usize {
        match self {
            Amount::Count(c) => c,
            Amount::Fraction(f) => (f * num_binaries as f64).round() as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PasSizes {
    pub k0: Amount,
    pub k1: Amount,
    pub delta: Amount,
}

/// Fixes the `k0` lowest-scored binaries towards 0 and the `k1` highest
/// towards 1 inside a `Δ`-flip neighborhood; compares the restricted solve
/// with the unrestricted baseline at the same budget.
pub fn compare_pas(
    id: &str,
    inst: &Instance,
    scores: &[f64],
    approach: &str,
    sizes: PasSizes,
    budget: &SolveBudget,
    seed: u64,
) -> Result<Vec<EvalRecord>, EvalError> {
    let bins = inst.binary_indices();
    let (k0, k1, delta) = (
        sizes.k0.resolve(bins.len()),
        sizes.k1.resolve(bins.len()),
        sizes.delta.resolve(bins.len()),
    );
    if k0 + k1 > bins.len() {
        return Err(EvalError::BadParams(format!(
            "k0 + k1 = {} exceeds {} binaries",
            k0 + k1,
            bins.len()
        )));
    }
    let x1 = select_top_k(scores, &bins, k1);
    let rest: Vec<usize> = bins.iter().copied().filter(|j| !x1.contains(j)).collect();
    let x0 = select_bottom_k(scores, &rest, k0);
    let base = solve(inst, &default_config(), None, budget, seed)?;
    // nothing to fix: the restricted problem is the original one
    let model = if x0.is_empty() && x1.is_empty() {
        solve(inst, &default_config(), None, budget, seed)?
    } else {
        let restricted = inst.add_neighborhood_constraint(&x0, &x1, delta)?;
        solve(&restricted, &default_config(), None, budget, seed)?
    };
    Ok(score(
        id,
        inst,
        vec![
            Run {
                approach: BASELINE.into(),
                result: Some(base),
            },
            Run {
                approach: approach.into(),
                result: Some(model),
            },
        ],
        budget,
    ))
}

pub fn eval_pas(
    ckpt: &Checkpoint<f32>,
    approach: &str,
    instances: &[(String, Instance)],
    sizes: PasSizes,
    budget: &SolveBudget,
    seed: u64,
) -> Result<Vec<EvalRecord>, EvalError> {
    per_instance(instances, |idx, id, inst| {
        let scores = predict(ckpt, Task::Pas, inst)?;
        compare_pas(id, inst, &scores, approach, sizes, budget, derive_seed(seed, idx as u64))
    })
}

/// Predicted configuration for an instance.
pub fn predict_config(ckpt: &Checkpoint<f32>, inst: &Instance) -> Result<SolverConfig, EvalError> {
    let v = predict(ckpt, Task::Config, inst)?;
    SolverConfig::decode(&v).map_err(|e| EvalError::Solve(e.into()))
}

pub const DEFAULT_APPROACH: &str = "default";
pub const SEARCH_APPROACH: &str = "random_search";

/// Decoded model configuration versus the default configuration and a
/// `search_rounds`-evaluation random search.
pub fn eval_config(
    ckpt: &Checkpoint<f32>,
    approach: &str,
    instances: &[(String, Instance)],
    budget: &SolveBudget,
    search_rounds: usize,
    seed: u64,
) -> Result<Vec<EvalRecord>, EvalError> {
    if budget.work_limit.is_none() {
        return Err(EvalError::BadParams("configuration evaluation needs a work limit".into()));
    }
    per_instance(instances, |idx, id, inst| {
        let s = derive_seed(seed, idx as u64);
        let cfg = predict_config(ckpt, inst)?;
        let model = solve(inst, &cfg, None, budget, s)?;
        let default = solve(inst, &default_config(), None, budget, s)?;
        let mut runs = vec![
            Run {
                approach: approach.into(),
                result: Some(model),
            },
            Run {
                approach: DEFAULT_APPROACH.into(),
                result: Some(default),
            },
        ];
        if search_rounds > 0 {
            let searched = match search_configs(inst, search_rounds, budget, derive_seed(s, 1)) {
                Ok(ranked) => Some(solve(inst, &ranked[0].config, None, budget, s)?),
                Err(CollectError::AllRunsInfeasible) => None,
                Err(e) => return Err(e.into()),
            };
            runs.push(Run {
                approach: SEARCH_APPROACH.into(),
                result: searched,
            });
        }
        Ok(score(id, inst, runs, budget))
    })
}
