use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lp::{LpEngine, LpError, LpStatus};
use crate::milp::{MilpInstance, TOL_FEAS, TOL_INT};
use crate::scalar::Scalar;

use super::config::{heuristic_period, BranchingRule, ConfigError, DivingMode, NodeSelection, SolverConfig};
use super::presolve::{presolve_pass, propagate_bounds};

/// Rounds of bound propagation applied by the root presolve.
pub const PRESOLVE_ROUNDS: usize = 5;
/// Maximum number of fixings in one dive.
pub const MAX_DIVE_DEPTH: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("every budget limit is zero or missing")]
    BudgetZero,
    #[error("priorities: {0}")]
    BadPriorities(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("LP relaxation is unbounded")]
    Unbounded,
}

/// Per-variable branching priority; higher is branched first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BranchPriorities {
    pub priority: Vec<u32>,
}

impl BranchPriorities {
    pub fn zeros(n: usize) -> Self {
        BranchPriorities {
            priority: vec![0; n],
        }
    }

    /// Priority 1 on `selected`, 0 elsewhere.
    pub fn from_selected(n: usize, selected: &[usize]) -> Self {
        let mut p = Self::zeros(n);
        for &j in selected {
            p.priority[j] = 1;
        }
        p
    }

    pub fn validate<T: Scalar>(&self, inst: &MilpInstance<T>) -> Result<(), SolveError> {
        if self.priority.len() != inst.num_vars() {
            return Err(SolveError::BadPriorities(format!(
                "expected {} entries, got {}",
                inst.num_vars(),
                self.priority.len()
            )));
        }
        if let Some(j) = (0..inst.num_vars()).find(|&j| self.priority[j] > 0 && !inst.is_binary(j)) {
            return Err(SolveError::BadPriorities(format!(
                "variable {j} is not binary but has nonzero priority"
            )));
        }
        Ok(())
    }

    /// One integer per line.
    pub fn from_text(text: &str) -> Result<Self, SolveError> {
        let priority = text
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|e| SolveError::BadPriorities(format!("`{t}`: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(BranchPriorities { priority })
    }
}

/// Stopping rules. `work_limit` counts simplex pivots.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveBudget {
    pub node_limit: Option<u64>,
    pub work_limit: Option<u64>,
    pub wall_limit: Option<f64>,
}

impl SolveBudget {
    pub fn nodes(n: u64) -> Self {
        SolveBudget {
            node_limit: Some(n),
            ..Default::default()
        }
    }

    pub fn work(w: u64) -> Self {
        SolveBudget {
            work_limit: Some(w),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), SolveError> {
        let any_finite = self.node_limit.is_some() || self.work_limit.is_some() || self.wall_limit.is_some();
        let any_zero = self.node_limit == Some(0)
            || self.work_limit == Some(0)
            || self.wall_limit.is_some_and(|w| w <= 0.0);
        if !any_finite || any_zero {
            return Err(SolveError::BudgetZero);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    /// Budget hit with an incumbent.
    Feasible,
    Infeasible,
    /// Budget hit without an incumbent.
    BudgetExhausted,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent<T> {
    /// Cumulative pivots when the incumbent was found.
    pub work: u64,
    pub node: u64,
    /// Minimization-sense objective of the new incumbent.
    pub incumbent: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace<T> {
    pub events: Vec<TraceEvent<T>>,
    pub final_status: SolveStatus,
    pub nodes_processed: u64,
    pub total_work: u64,
}

impl<T: Scalar> SolveTrace<T> {
    /// `work,node,incumbent` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("work,node,incumbent\n");
        for e in &self.events {
            s.push_str(&format!("{},{},{}\n", e.work, e.node, e.incumbent));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T> {
    pub status: SolveStatus,
    pub best_assignment: Option<Vec<T>>,
    /// Best objective in the instance's original sense.
    pub best_obj: Option<T>,
    /// Dual bound in the original sense.
    pub dual_bound: T,
    pub trace: SolveTrace<T>,
    /// Every incumbent found, in discovery order (minimization-sense objective).
    pub incumbents: Vec<(T, Vec<T>)>,
    pub wall_seconds: f64,
}

impl<T: Scalar> SolveResult<T> {
    /// Best objective in minimization sense, `+∞` if none.
    pub fn best_internal(&self, inst: &MilpInstance<T>) -> T {
        self.best_obj
            .map(|v| inst.to_internal(v))
            .unwrap_or_else(T::infinity)
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    id: u64,
    lb: Vec<T>,
    ub: Vec<T>,
    bound: T,
    branch: Option<BranchInfo<T>>,
}

#[derive(Debug, Clone, Copy)]
struct BranchInfo<T> {
    var: usize,
    up: bool,
    distance: T,
    parent_obj: T,
}

struct HeapEntry<T> {
    bound: T,
    node: Node<T>,
}

impl<T: Scalar> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for HeapEntry<T> {}
impl<T: Scalar> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for HeapEntry<T> {
    // Max-heap on the reversed key: smallest bound, then smallest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .partial_cmp(&self.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.id.cmp(&self.node.id))
    }
}

enum OpenSet<T> {
    Heap(BinaryHeap<HeapEntry<T>>),
    Stack(Vec<Node<T>>),
}

impl<T: Scalar> OpenSet<T> {
    fn push(&mut self, node: Node<T>) {
        match self {
            OpenSet::Heap(h) => h.push(HeapEntry {
                bound: node.bound,
                node,
            }),
            OpenSet::Stack(s) => s.push(node),
        }
    }

    fn pop(&mut self) -> Option<Node<T>> {
        match self {
            OpenSet::Heap(h) => h.pop().map(|e| e.node),
            OpenSet::Stack(s) => s.pop(),
        }
    }

    fn min_bound(&self) -> Option<T> {
        match self {
            OpenSet::Heap(h) => h.peek().map(|e| e.bound),
            OpenSet::Stack(s) => s.iter().map(|n| n.bound).reduce(T::min),
        }
    }
}

#[derive(Clone)]
struct Pseudocosts<T> {
    init: T,
    sum: [Vec<T>; 2],
    count: [Vec<u32>; 2],
}

impl<T: Scalar> Pseudocosts<T> {
    fn new(n: usize, init: T) -> Self {
        Pseudocosts {
            init,
            sum: [vec![T::zero(); n], vec![T::zero(); n]],
            count: [vec![0; n], vec![0; n]],
        }
    }

    fn value(&self, j: usize, up: bool) -> T {
        let d = up as usize;
        if self.count[d][j] == 0 {
            self.init
        } else {
            self.sum[d][j] / T::lit(self.count[d][j] as f64)
        }
    }

    fn record(&mut self, info: &BranchInfo<T>, child_obj: T) {
        if info.distance <= T::zero() {
            return;
        }
        let gain = ((child_obj - info.parent_obj) / info.distance).max(T::zero());
        let d = info.up as usize;
        self.sum[d][info.var] += gain;
        self.count[d][info.var] += 1;
    }
}

struct Search<'a, T: Scalar> {
    original: &'a MilpInstance<T>,
    model: MilpInstance<T>,
    cfg: SolverConfig,
    priorities: Vec<u32>,
    budget: SolveBudget,
    engine: LpEngine<T>,
    rng: ChaCha8Rng,
    start: Instant,
    integral_objective: bool,
    propagation_rounds: usize,

    incumbent: Option<(T, Vec<T>)>,
    incumbents: Vec<(T, Vec<T>)>,
    events: Vec<TraceEvent<T>>,
    pseudo: Pseudocosts<T>,
    nodes_processed: u64,
    next_id: u64,
}

impl<'a, T: Scalar> Search<'a, T> {
    fn work(&self) -> u64 {
        self.engine.total_pivots()
    }

    fn out_of_budget(&self) -> bool {
        self.budget
            .node_limit
            .is_some_and(|n| self.nodes_processed >= n)
            || self.budget.work_limit.is_some_and(|w| self.work() >= w)
            || self
                .budget
                .wall_limit
                .is_some_and(|s| self.start.elapsed().as_secs_f64() >= s)
    }

    /// Whether a relaxation bound can no longer beat the incumbent.
    fn prunable(&self, bound: T) -> bool {
        let Some((v, _)) = &self.incumbent else {
            return false;
        };
        let v = *v;
        if self.integral_objective {
            bound > v - T::one() + T::lit(1e-6)
        } else {
            bound >= v - T::lit(1e-9) * T::one().max(v.abs())
        }
    }

    fn try_incumbent(&mut self, x: Vec<T>) -> bool {
        if !self.original.check_feasible(&x, T::lit(TOL_FEAS)) {
            return false;
        }
        let obj = self.original.internal_objective(&x);
        let improves = match &self.incumbent {
            None => true,
            Some((v, _)) => obj < *v - T::lit(1e-9) * T::one().max(v.abs()),
        };
        if improves {
            self.events.push(TraceEvent {
                work: self.work(),
                node: self.nodes_processed,
                incumbent: obj,
            });
            self.incumbents.push((obj, x.clone()));
            self.incumbent = Some((obj, x));
        }
        improves
    }

    fn fractional_binaries(&self, x: &[T]) -> Vec<usize> {
        let tol = T::lit(TOL_INT);
        (0..x.len())
            .filter(|&j| self.model.is_binary(j) && (x[j] - x[j].round()).abs() > tol)
            .collect()
    }

    fn rounded(&self, x: &[T], mode: impl Fn(T) -> T) -> Vec<T> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| if self.model.is_binary(j) { mode(v) } else { v })
            .collect()
    }

    fn has_continuous(&self) -> bool {
        !self.model.all_binary()
    }

    /// Completes a binary rounding by re-solving the LP over the continuous
    /// variables when there are any.
    fn complete_rounding(&mut self, node_lb: &[T], node_ub: &[T], cand: Vec<T>) -> Result<Option<Vec<T>>, SolveError> {
        if !self.has_continuous() {
            return Ok(Some(cand));
        }
        let mut lb = node_lb.to_vec();
        let mut ub = node_ub.to_vec();
        for j in 0..cand.len() {
            if self.model.is_binary(j) {
                lb[j] = cand[j];
                ub[j] = cand[j];
            }
        }
        if lb.iter().zip(&ub).any(|(l, u)| l > u) {
            return Ok(None);
        }
        let sol = self.engine.solve(&lb, &ub)?;
        Ok((sol.status == LpStatus::Optimal).then_some(sol.x))
    }

    fn rounding_heuristic(&mut self, node_lb: &[T], node_ub: &[T], x: &[T]) -> Result<(), SolveError> {
        let half = T::lit(0.5);
        let candidates = [
            self.rounded(x, |v| if v >= half { T::one() } else { T::zero() }),
            self.rounded(x, |v| if v > T::lit(TOL_INT) { T::one() } else { T::zero() }),
            self.rounded(x, |v| if v >= T::one() - T::lit(TOL_INT) { T::one() } else { T::zero() }),
        ];
        for cand in candidates {
            if let Some(full) = self.complete_rounding(node_lb, node_ub, cand)? {
                self.try_incumbent(full);
            }
        }
        Ok(())
    }

    fn dive(&mut self, node_lb: &[T], node_ub: &[T], x: &[T]) -> Result<(), SolveError> {
        let mut lb = node_lb.to_vec();
        let mut ub = node_ub.to_vec();
        let mut x = x.to_vec();
        let half = T::lit(0.5);
        for _ in 0..MAX_DIVE_DEPTH {
            let frac = self.fractional_binaries(&x);
            if frac.is_empty() {
                break;
            }
            let pick = match self.cfg.diving_mode {
                DivingMode::Off => return Ok(()),
                DivingMode::Fractional => argmax_first(&frac, |j| {
                    let f = x[j] - x[j].floor();
                    f.min(T::one() - f)
                }),
                DivingMode::Coefficient => argmax_first(&frac, |j| self.model.obj()[j].abs()),
            };
            if x[pick] >= half {
                lb[pick] = T::one();
            } else {
                ub[pick] = T::zero();
            }
            if propagate_bounds(&self.model, &mut lb, &mut ub, self.propagation_rounds).is_err() {
                return Ok(());
            }
            let sol = self.engine.solve(&lb, &ub)?;
            if sol.status != LpStatus::Optimal || self.prunable(sol.obj) {
                return Ok(());
            }
            x = sol.x;
        }
        if self.fractional_binaries(&x).is_empty() {
            let cand = self.rounded(&x, |v| v.round());
            self.try_incumbent(cand);
        }
        Ok(())
    }

    fn choose_branch_var(&mut self, frac: &[usize], x: &[T]) -> usize {
        let top = frac.iter().map(|&j| self.priorities[j]).max().unwrap_or(0);
        let pool: Vec<usize> = frac
            .iter()
            .copied()
            .filter(|&j| self.priorities[j] == top)
            .collect();
        match self.cfg.branching_rule {
            BranchingRule::MostInfeasible => argmax_first(&pool, |j| {
                let f = x[j] - x[j].floor();
                f.min(T::one() - f)
            }),
            BranchingRule::Pseudocost => {
                let eps = T::lit(1e-6);
                argmax_first(&pool, |j| {
                    let down = x[j] - x[j].floor();
                    let up = T::one() - down;
                    (self.pseudo.value(j, false) * down).max(eps)
                        * (self.pseudo.value(j, true) * up).max(eps)
                })
            }
            BranchingRule::Random => pool[self.rng.gen_range(0..pool.len())],
        }
    }

    fn new_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }
}

fn argmax_first<T: Scalar>(items: &[usize], score: impl Fn(usize) -> T) -> usize {
    let mut best = items[0];
    let mut best_score = score(best);
    for &j in &items[1..] {
        let s = score(j);
        if s > best_score {
            best = j;
            best_score = s;
        }
    }
    best
}

fn objective_is_integral<T: Scalar>(inst: &MilpInstance<T>) -> bool {
    (0..inst.num_vars()).all(|j| {
        let c = inst.obj()[j];
        if inst.is_binary(j) {
            c == c.round()
        } else {
            c == T::zero()
        }
    })
}

/// Branch-and-bound with LP relaxations, configurable node selection,
/// branching, primal heuristics and branching priorities.
///
/// The branching variable is the highest-priority fractional binary; ties go
/// to the configured rule, then to the lowest index. Deterministic for fixed
/// inputs unless a wall-clock limit interrupts the search.
pub fn solve<T: Scalar>(
    inst: &MilpInstance<T>,
    cfg: &SolverConfig,
    priorities: Option<&BranchPriorities>,
    budget: &SolveBudget,
    seed: u64,
) -> Result<SolveResult<T>, SolveError> {
    let start = Instant::now();
    budget.validate()?;
    cfg.validate()?;
    let n = inst.num_vars();
    let priorities = match priorities {
        Some(p) => {
            p.validate(inst)?;
            p.priority.clone()
        }
        None => vec![0; n],
    };

    let infeasible_result = |start: Instant| SolveResult {
        status: SolveStatus::Infeasible,
        best_assignment: None,
        best_obj: None,
        dual_bound: inst.to_original(T::infinity()),
        trace: SolveTrace {
            events: Vec::new(),
            final_status: SolveStatus::Infeasible,
            nodes_processed: 0,
            total_work: 0,
        },
        incumbents: Vec::new(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };

    let model = if cfg.presolve {
        match presolve_pass(inst, PRESOLVE_ROUNDS) {
            Ok(m) => m,
            Err(_) => return Ok(infeasible_result(start)),
        }
    } else {
        inst.clone()
    };

    let mut search = Search {
        original: inst,
        engine: LpEngine::new(&model, cfg.lp_pricing),
        integral_objective: cfg.cutoff_tightening && objective_is_integral(&model),
        propagation_rounds: cfg.propagation_round_count(),
        model,
        cfg: *cfg,
        priorities,
        budget: *budget,
        rng: ChaCha8Rng::seed_from_u64(seed),
        start,
        incumbent: None,
        incumbents: Vec::new(),
        events: Vec::new(),
        pseudo: Pseudocosts::new(n, T::lit(cfg.pseudocost_init)),
        nodes_processed: 0,
        next_id: 0,
    };

    let mut open = match cfg.node_selection {
        NodeSelection::Dfs => OpenSet::Stack(Vec::new()),
        _ => OpenSet::Heap(BinaryHeap::new()),
    };
    let root_id = search.new_id();
    open.push(Node {
        id: root_id,
        lb: search.model.var_lb().to_vec(),
        ub: search.model.var_ub().to_vec(),
        bound: T::neg_infinity(),
        branch: None,
    });

    let rounding_period = heuristic_period(cfg.rounding_freq);
    let diving_period = match cfg.diving_mode {
        DivingMode::Off => None,
        _ => heuristic_period(cfg.diving_freq),
    };
    let plunge_limit = cfg.plunge_depth_count();
    let mut plunge_run = 0usize;
    let mut direct: Option<Node<T>> = None;
    let mut interrupted = false;

    loop {
        let next = match direct.take() {
            Some(node) => Some(node),
            None => open.pop(),
        };
        let Some(mut node) = next else { break };
        if search.prunable(node.bound) {
            continue;
        }
        if search.out_of_budget() {
            // put it back so the dual bound accounts for it
            open.push(node);
            interrupted = true;
            break;
        }
        search.nodes_processed += 1;

        if search.propagation_rounds > 0
            && propagate_bounds(&search.model, &mut node.lb, &mut node.ub, search.propagation_rounds).is_err()
        {
            continue;
        }
        let sol = search.engine.solve(&node.lb, &node.ub)?;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => return Err(SolveError::Unbounded),
            LpStatus::Optimal => {}
        }
        if let Some(info) = &node.branch {
            search.pseudo.record(info, sol.obj);
        }
        if search.prunable(sol.obj) {
            continue;
        }
        let frac = search.fractional_binaries(&sol.x);
        if frac.is_empty() {
            let cand = search.rounded(&sol.x, |v| v.round());
            search.try_incumbent(cand);
            continue;
        }
        let k = search.nodes_processed - 1;
        if rounding_period.is_some_and(|p| k % p == 0) {
            search.rounding_heuristic(&node.lb, &node.ub, &sol.x)?;
        }
        if diving_period.is_some_and(|p| k % p == 0) {
            search.dive(&node.lb, &node.ub, &sol.x)?;
        }
        if search.prunable(sol.obj) {
            continue;
        }

        let j = search.choose_branch_var(&frac, &sol.x);
        let xj = sol.x[j];
        let up_first = search.rng.gen::<f64>() < cfg.branch_direction_bias;
        let mut down = Node {
            id: 0,
            lb: node.lb.clone(),
            ub: node.ub.clone(),
            bound: sol.obj,
            branch: Some(BranchInfo {
                var: j,
                up: false,
                distance: xj - xj.floor(),
                parent_obj: sol.obj,
            }),
        };
        down.ub[j] = T::zero();
        let mut up = Node {
            id: 0,
            lb: node.lb,
            ub: node.ub,
            bound: sol.obj,
            branch: Some(BranchInfo {
                var: j,
                up: true,
                distance: xj.ceil() - xj,
                parent_obj: sol.obj,
            }),
        };
        up.lb[j] = T::one();
        let (mut first, mut second) = if up_first { (up, down) } else { (down, up) };
        first.id = search.new_id();
        second.id = search.new_id();

        match cfg.node_selection {
            NodeSelection::Dfs => {
                open.push(second);
                open.push(first);
            }
            NodeSelection::BestBound => {
                open.push(first);
                open.push(second);
            }
            NodeSelection::Hybrid => {
                if plunge_run < plunge_limit {
                    plunge_run += 1;
                    open.push(second);
                    direct = Some(first);
                } else {
                    plunge_run = 0;
                    open.push(first);
                    open.push(second);
                }
            }
        }
    }
    if let Some(node) = direct.take() {
        open.push(node);
    }

    let wall_seconds = search.start.elapsed().as_secs_f64();
    let incumbent_obj = search.incumbent.as_ref().map(|(v, _)| *v);
    let status = match (interrupted, incumbent_obj.is_some()) {
        (false, true) => SolveStatus::Optimal,
        (false, false) => SolveStatus::Infeasible,
        (true, true) => SolveStatus::Feasible,
        (true, false) => SolveStatus::BudgetExhausted,
    };
    let inc = incumbent_obj.unwrap_or_else(T::infinity);
    let dual_internal = if interrupted {
        open.min_bound().map_or(inc, |b| b.min(inc))
    } else {
        inc
    };
    let total_work = search.work();
    Ok(SolveResult {
        status,
        best_obj: incumbent_obj.map(|v| inst.to_original(v)),
        best_assignment: search.incumbent.map(|(_, x)| x),
        dual_bound: inst.to_original(dual_internal),
        trace: SolveTrace {
            events: search.events,
            final_status: status,
            nodes_processed: search.nodes_processed,
            total_work,
        },
        incumbents: search.incumbents,
        wall_seconds,
    })
}
