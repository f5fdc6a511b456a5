//! Per-instance sample collectors for the three tasks.

use std::collections::HashMap;

use milpmt_core::lp::{solve_lp_relaxation, LpError, Pricing};
use milpmt_core::metrics::{primal_integral, GAP_EPS};
use milpmt_core::milp::{MilpError, SparseRow, TOL_INT};
use milpmt_core::solver::{default_config, solve, SolveBudget, SolveError, SolverConfig};
use milpmt_core::{graph::GraphError, Instance, Solution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectError {
    #[error("root LP has no fractional binary variable")]
    NoFractionalVars,
    #[error("no feasible solution found within the budget")]
    NoFeasibleFound,
    #[error("every sampled configuration failed to find a feasible solution")]
    AllRunsInfeasible,
    #[error("root LP is not optimal")]
    RootLp,
    #[error("bad collector parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("graph: {0}")]
    Graph(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<GraphError> for CollectError {
    fn from(e: GraphError) -> Self {
        CollectError::Graph(e.to_string())
    }
}

impl From<std::io::Error> for CollectError {
    fn from(e: std::io::Error) -> Self {
        CollectError::Io(e.to_string())
    }
}

impl CollectError {
    /// Errors that mean "leave this instance out" rather than "abort".
    pub fn is_skip(&self) -> bool {
        matches!(
            self,
            CollectError::NoFractionalVars
                | CollectError::NoFeasibleFound
                | CollectError::AllRunsInfeasible
                | CollectError::RootLp
        )
    }
}

fn frac(x: f64) -> f64 {
    (x - x.floor()).min(x.ceil() - x)
}

/// UCB1 score; unvisited children score `+∞`.
pub fn ucb_score(mean: f64, n_parent: u64, n_child: u64, c: f64) -> f64 {
    if n_child == 0 {
        return f64::INFINITY;
    }
    mean + c * ((n_parent as f64).ln() / n_child as f64).sqrt()
}

pub const UCB_C: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct BackdoorParams {
    pub k: usize,
    pub sim_budget: usize,
    pub solve_budget: SolveBudget,
    /// Positives and negatives kept per instance.
    pub keep: usize,
}

impl Default for BackdoorParams {
    fn default() -> Self {
        BackdoorParams {
            k: 5,
            sim_budget: 30,
            solve_budget: SolveBudget::nodes(1_000),
            keep: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackdoorSample {
    /// Variable indices, ascending.
    pub subset: Vec<usize>,
    pub reward: f64,
    pub pivots: u64,
}

impl BackdoorSample {
    pub fn indicator(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for &j in &self.subset {
            v[j] = 1.0;
        }
        v
    }
}

/// Binaries ranked by root-LP fractionality (most fractional first, ties by
/// index). Fails when none is fractional.
pub fn fractional_ranking(inst: &Instance) -> Result<Vec<(usize, f64)>, CollectError> {
    let lp = solve_lp_relaxation(inst, Pricing::Dantzig, None)?;
    if !lp.is_optimal() {
        return Err(CollectError::RootLp);
    }
    let mut ranked: Vec<(usize, f64)> = inst
        .binary_indices()
        .into_iter()
        .map(|j| (j, frac(lp.x[j])))
        .collect();
    if ranked.iter().all(|&(_, f)| f <= TOL_INT) {
        return Err(CollectError::NoFractionalVars);
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

struct TreeNode {
    /// Positions into the candidate list, ascending.
    subset: Vec<usize>,
    next: usize,
    children: Vec<usize>,
    visits: u64,
    total: f64,
}

/// Runs UCB1 tree search over candidate subsets of size `k` and returns
/// `(positives, negatives)`: best and worst evaluated subsets.
pub fn collect_backdoors_mcts(
    inst: &Instance,
    params: &BackdoorParams,
    seed: u64,
) -> Result<(Vec<BackdoorSample>, Vec<BackdoorSample>), CollectError> {
    let k = params.k;
    if params.sim_budget < 10 {
        return Err(CollectError::BadParams("sim_budget must be at least 10".into()));
    }
    if k == 0 || k > inst.num_binaries() {
        return Err(CollectError::BadParams(format!(
            "K = {k} with {} binaries",
            inst.num_binaries()
        )));
    }
    let ranked = fractional_ranking(inst)?;
    let cands: Vec<usize> = ranked.iter().take(3 * k).map(|&(j, _)| j).collect();
    let nc = cands.len();
    let cfg = default_config();
    let base = solve(inst, &cfg, None, &params.solve_budget, seed)?;
    let nodes_default = base.trace.nodes_processed.max(1) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut evaluated: Vec<BackdoorSample> = Vec::new();
    let mut tree = vec![TreeNode {
        subset: Vec::new(),
        next: 0,
        children: Vec::new(),
        visits: 0,
        total: 0.0,
    }];

    for _ in 0..params.sim_budget {
        let mut path = vec![0usize];
        let mut cur = 0usize;
        loop {
            let size = tree[cur].subset.len();
            if size == k {
                break;
            }
            // positions past `last_allowed` leave too few candidates to fill the subset
            let last_allowed = nc - (k - size);
            if tree[cur].next <= last_allowed {
                let p = tree[cur].next;
                tree[cur].next += 1;
                let mut subset = tree[cur].subset.clone();
                subset.push(p);
                tree.push(TreeNode {
                    subset,
                    next: p + 1,
                    children: Vec::new(),
                    visits: 0,
                    total: 0.0,
                });
                let id = tree.len() - 1;
                tree[cur].children.push(id);
                path.push(id);
                cur = id;
                break;
            }
            let parent_visits = tree[cur].visits.max(1);
            let best = tree[cur]
                .children
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    let sa = ucb_score(tree[a].total / tree[a].visits.max(1) as f64, parent_visits, tree[a].visits, UCB_C);
                    let sb = ucb_score(tree[b].total / tree[b].visits.max(1) as f64, parent_visits, tree[b].visits, UCB_C);
                    // earlier child wins ties
                    sa.total_cmp(&sb).then(b.cmp(&a))
                });
            match best {
                Some(b) => {
                    path.push(b);
                    cur = b;
                }
                None => break,
            }
        }

        let mut chosen = tree[cur].subset.clone();
        let mut rest: Vec<usize> = (0..nc).filter(|p| !chosen.contains(p)).collect();
        rest.shuffle(&mut rng);
        chosen.extend(rest.into_iter().take(k - chosen.len()));
        let mut subset: Vec<usize> = chosen.iter().map(|&p| cands[p]).collect();
        subset.sort_unstable();

        let reward = match cache.get(&subset) {
            Some(&idx) => evaluated[idx].reward,
            None => {
                let pr = milpmt_core::solver::BranchPriorities::from_selected(inst.num_vars(), &subset);
                let res = solve(inst, &cfg, Some(&pr), &params.solve_budget, seed)?;
                let nodes = res.trace.nodes_processed as f64;
                let reward = ((nodes_default - nodes) / nodes_default).clamp(-1.0, 1.0);
                cache.insert(subset.clone(), evaluated.len());
                evaluated.push(BackdoorSample {
                    subset,
                    reward,
                    pivots: res.trace.total_work,
                });
                reward
            }
        };
        for &id in &path {
            tree[id].visits += 1;
            tree[id].total += reward;
        }
    }

    // rank by reward, then fewer pivots, then discovery order
    let mut order: Vec<usize> = (0..evaluated.len()).collect();
    order.sort_by(|&a, &b| {
        evaluated[b]
            .reward
            .total_cmp(&evaluated[a].reward)
            .then(evaluated[a].pivots.cmp(&evaluated[b].pivots))
            .then(a.cmp(&b))
    });
    let n_pos = params.keep.min(order.len().div_ceil(2));
    let n_neg = params.keep.min(order.len() - n_pos);
    let pos = order[..n_pos].iter().map(|&i| evaluated[i].clone()).collect();
    let neg = order[order.len() - n_neg..]
        .iter()
        .rev()
        .map(|&i| evaluated[i].clone())
        .collect();
    Ok((pos, neg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSample {
    /// Full assignment (continuous entries included).
    pub assignment: Vec<f64>,
    /// Objective in the instance's original sense.
    pub objective: f64,
}

impl SolutionSample {
    /// Binary part as a 0/1 vector of length `n`; continuous entries are 0.
    pub fn indicator(&self, inst: &Instance) -> Vec<f64> {
        binary_pattern(inst, &self.assignment)
    }
}

fn binary_pattern(inst: &Instance, x: &[f64]) -> Vec<f64> {
    (0..inst.num_vars())
        .map(|j| if inst.is_binary(j) && x[j] > 0.5 { 1.0 } else { 0.0 })
        .collect()
}

/// `Σ_{a=1} x_j − Σ_{a=0} x_j ≤ |ones| − 1` over the binaries.
fn no_good(inst: &Instance, pattern: &[f64]) -> (SparseRow<f64>, f64) {
    let mut pairs = Vec::new();
    let mut ones = 0usize;
    for j in inst.binary_indices() {
        if pattern[j] > 0.5 {
            pairs.push((j, 1.0));
            ones += 1;
        } else {
            pairs.push((j, -1.0));
        }
    }
    (SparseRow::from_pairs(pairs), ones as f64 - 1.0)
}

fn near_optimal_threshold(best: f64, delta: f64) -> f64 {
    best + delta * best.abs().max(GAP_EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionParams {
    pub pool_cap: usize,
    pub delta: f64,
    pub solve_budget: SolveBudget,
}

impl Default for SolutionParams {
    fn default() -> Self {
        SolutionParams {
            pool_cap: 10,
            delta: 0.01,
            solve_budget: SolveBudget::nodes(2_000),
        }
    }
}

/// Harvests distinct near-optimal incumbents, re-solving with no-good cuts on
/// the binaries and an objective cutoff. Sorted best first; at most
/// `pool_cap` are returned.
pub fn collect_solutions(
    inst: &Instance,
    params: &SolutionParams,
    seed: u64,
) -> Result<Vec<SolutionSample>, CollectError> {
    let cfg = default_config();
    let first = solve(inst, &cfg, None, &params.solve_budget, seed)?;
    if first.best_assignment.is_none() {
        return Err(CollectError::NoFeasibleFound);
    }
    let mut pool: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut patterns: Vec<Vec<f64>> = Vec::new();
    let harvest = |res: &Solution, pool: &mut Vec<(f64, Vec<f64>)>, patterns: &mut Vec<Vec<f64>>| {
        for (_, x) in &res.incumbents {
            let pat = binary_pattern(inst, x);
            if !patterns.contains(&pat) && inst.check_feasible(x, 1e-6) {
                patterns.push(pat);
                pool.push((inst.internal_objective(x), x.clone()));
            }
        }
    };
    harvest(&first, &mut pool, &mut patterns);
    let best = first.best_internal(inst);
    let cutoff = near_optimal_threshold(best, params.delta);
    let obj_row: Vec<(usize, f64)> = inst
        .obj()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    for r in 0..params.pool_cap {
        if pool.iter().filter(|(v, _)| *v <= cutoff + 1e-9).count() >= params.pool_cap {
            break;
        }
        let mut extra: Vec<(SparseRow<f64>, f64)> = patterns.iter().map(|p| no_good(inst, p)).collect();
        extra.push((SparseRow::from_pairs(obj_row.clone()), cutoff + 1e-9));
        let restricted = inst.with_rows(extra);
        let res = solve(&restricted, &cfg, None, &params.solve_budget, seed.wrapping_add(r as u64 + 1))?;
        if res.best_assignment.is_none() {
            break;
        }
        harvest(&res, &mut pool, &mut patterns);
    }
    let mut kept: Vec<(f64, Vec<f64>)> = pool.into_iter().filter(|(v, _)| *v <= cutoff + 1e-9).collect();
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    kept.truncate(params.pool_cap.max(1));
    Ok(kept
        .into_iter()
        .map(|(v, x)| SolutionSample {
            objective: inst.to_original(v),
            assignment: x,
        })
        .collect())
}

/// Worst feasible solutions within Hamming distance `⌈ρ·|I|⌉` of each
/// positive, kept when strictly worse than every positive.
pub fn derive_negative_solutions(
    inst: &Instance,
    positives: &[SolutionSample],
    rho: f64,
    budget: &SolveBudget,
    seed: u64,
) -> Result<Vec<SolutionSample>, CollectError> {
    if positives.is_empty() {
        return Err(CollectError::BadParams("need at least one positive".into()));
    }
    let delta = (rho * inst.num_binaries() as f64).ceil() as usize;
    let worst_pos = positives
        .iter()
        .map(|p| inst.to_internal(p.objective))
        .fold(f64::NEG_INFINITY, f64::max);
    let pos_patterns: Vec<Vec<f64>> = positives.iter().map(|p| p.indicator(inst)).collect();
    let flipped = inst.with_flipped_objective();
    let mut out: Vec<SolutionSample> = Vec::new();
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for (k, p) in pos_patterns.iter().enumerate() {
        let (x0, x1): (Vec<usize>, Vec<usize>) = inst.binary_indices().into_iter().partition(|&j| p[j] < 0.5);
        let nb = flipped.add_neighborhood_constraint(&x0, &x1, delta)?;
        let res = solve(&nb, &default_config(), None, budget, seed.wrapping_add(k as u64))?;
        let Some(x) = res.best_assignment else { continue };
        let v = inst.internal_objective(&x);
        let pat = binary_pattern(inst, &x);
        if v > worst_pos + 1e-9 && !seen.contains(&pat) && !pos_patterns.contains(&pat) && inst.check_feasible(&x, 1e-6) {
            seen.push(pat);
            out.push(SolutionSample {
                objective: inst.to_original(v),
                assignment: x,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigParams {
    pub n_samples: usize,
    pub k_keep: usize,
    /// Must carry a work limit; it doubles as the primal-integral horizon.
    pub eval_budget: SolveBudget,
}

impl Default for ConfigParams {
    fn default() -> Self {
        ConfigParams {
            n_samples: 30,
            k_keep: 5,
            eval_budget: SolveBudget::work(5_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSample {
    pub config: SolverConfig,
    pub vector: Vec<f64>,
    /// Original-sense objective.
    pub best_obj: Option<f64>,
    pub pi: f64,
}

struct ConfigRun {
    config: SolverConfig,
    best_internal: f64,
    result: Solution,
}

fn rank_key(run: &ConfigRun, v_star: f64, cutoff: u64) -> (f64, f64) {
    let pi = if run.result.best_assignment.is_some() {
        primal_integral(&run.result.trace, v_star, cutoff).unwrap_or(cutoff as f64)
    } else {
        cutoff as f64
    };
    (run.best_internal, pi)
}

/// Random search over configurations: the first half sampled uniformly, the
/// rest by resampling one field of the current best. Returns ranked runs,
/// best first, with duplicates removed.
pub fn search_configs(
    inst: &Instance,
    n_samples: usize,
    budget: &SolveBudget,
    seed: u64,
) -> Result<Vec<ConfigSample>, CollectError> {
    let cutoff = budget
        .work_limit
        .ok_or_else(|| CollectError::BadParams("config evaluation needs a work limit".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs: Vec<ConfigRun> = Vec::new();
    let n_uniform = n_samples.div_ceil(2);
    for s in 0..n_samples {
        let config = if s < n_uniform || runs.is_empty() {
            SolverConfig::sample(&mut rng)
        } else {
            let v_star = runs.iter().map(|r| r.best_internal).fold(f64::INFINITY, f64::min);
            let best = runs
                .iter()
                .min_by(|a, b| {
                    let (ka, kb) = (rank_key(a, v_star, cutoff), rank_key(b, v_star, cutoff));
                    ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
                })
                .expect("nonempty");
            let mut c = best.config;
            let field = rng.gen_range(0..milpmt_core::solver::config::FIELD_NAMES.len());
            c.resample_field(field, &mut rng);
            c
        };
        if runs.iter().any(|r| r.config.encode() == config.encode()) {
            continue;
        }
        let result = solve(inst, &config, None, budget, seed)?;
        runs.push(ConfigRun {
            config,
            best_internal: result.best_internal(inst),
            result,
        });
    }
    if runs.iter().all(|r| r.result.best_assignment.is_none()) {
        return Err(CollectError::AllRunsInfeasible);
    }
    let v_star = runs.iter().map(|r| r.best_internal).fold(f64::INFINITY, f64::min);
    let mut keyed: Vec<((f64, f64), usize)> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| (rank_key(r, v_star, cutoff), i))
        .collect();
    keyed.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)).then(a.1.cmp(&b.1)));
    Ok(keyed
        .into_iter()
        .map(|((_, pi), i)| ConfigSample {
            config: runs[i].config,
            vector: runs[i].config.encode().to_vec(),
            best_obj: runs[i].result.best_obj,
            pi,
        })
        .collect())
}

/// Best and worst `k_keep` configurations of a random search.
pub fn collect_configs(
    inst: &Instance,
    params: &ConfigParams,
    seed: u64,
) -> Result<(Vec<ConfigSample>, Vec<ConfigSample>), CollectError> {
    if params.k_keep == 0 || params.n_samples < 2 * params.k_keep {
        return Err(CollectError::BadParams(format!(
            "need n_samples >= 2 k_keep, got {} and {}",
            params.n_samples, params.k_keep
        )));
    }
    let ranked = search_configs(inst, params.n_samples, &params.eval_budget, seed)?;
    let n_pos = params.k_keep.min((ranked.len() / 2).max(1));
    let n_neg = params.k_keep.min(ranked.len() - n_pos);
    let pos = ranked[..n_pos].to_vec();
    let neg = ranked[ranked.len() - n_neg..].iter().rev().cloned().collect();
    Ok((pos, neg))
}
