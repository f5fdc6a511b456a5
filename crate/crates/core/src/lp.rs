//! Revised primal simplex for bounded variables.
//!
//! Rows `A x ≤ b` get a slack `s ≥ 0` each, so the working problem is
//! `min cᵀx  s.t.  A x + s = b,  lb ≤ x ≤ ub,  s ≥ 0`. The basis inverse is
//! kept dense and updated in product form, with periodic refactorization.
//! Infeasible starting bases are repaired by a composite phase 1 that
//! minimizes the sum of bound violations of basic variables.
//!
//! An [`LpEngine`] keeps its basis between calls, so re-solving after bound
//! changes (branch-and-bound children, dives) starts from the last basis.

use thiserror::Error;

use crate::milp::MilpInstance;
use crate::scalar::Scalar;

/// Default cap on simplex iterations for a single solve.
pub const DEFAULT_PIVOT_LIMIT: u64 = 50_000;
/// Consecutive degenerate pivots tolerated under Dantzig pricing before
/// switching to Bland's rule.
pub const DEGENERATE_SWITCH: u32 = 1_000;
const REFACTOR_EVERY: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pricing {
    Bland,
    Dantzig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisFlag {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex iteration limit exceeded after {pivots} pivots")]
    IterationLimit { pivots: u64 },
    #[error("bound vectors must have length {expected}")]
    DimMismatch { expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    /// Structural variable values (meaningful when optimal).
    pub x: Vec<T>,
    /// Minimization-sense objective `cᵀx`.
    pub obj: T,
    pub reduced_costs: Vec<T>,
    /// Row duals `y` with `c − Aᵀy` the reduced costs; nonpositive at optimum.
    pub duals: Vec<T>,
    pub basis_flags: Vec<BasisFlag>,
    /// Simplex iterations spent in this solve.
    pub pivots: u64,
}

impl<T: Scalar> LpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Relabels the solution to match `MilpInstance::permute(var_perm, con_perm)`.
    pub fn permuted(&self, var_perm: &[usize], con_perm: &[usize]) -> Self {
        fn scatter<V: Clone>(src: &[V], perm: &[usize]) -> Vec<V> {
            let mut out = src.to_vec();
            for (old, &new) in perm.iter().enumerate() {
                out[new] = src[old].clone();
            }
            out
        }
        LpSolution {
            status: self.status,
            x: scatter(&self.x, var_perm),
            obj: self.obj,
            reduced_costs: scatter(&self.reduced_costs, var_perm),
            duals: scatter(&self.duals, con_perm),
            basis_flags: scatter(&self.basis_flags, var_perm),
            pivots: self.pivots,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NonBasic {
    Lower,
    Upper,
    /// Free variable held at zero.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    NonBasic(NonBasic),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

#[derive(Clone)]
struct Tolerances<T> {
    primal: T,
    dual: T,
    pivot: T,
}

impl<T: Scalar> Tolerances<T> {
    fn new() -> Self {
        let base = T::epsilon().sqrt() * T::lit(0.1);
        Tolerances {
            primal: base,
            dual: base,
            pivot: base,
        }
    }
}

/// Reusable simplex state for one constraint matrix.
#[derive(Clone)]
pub struct LpEngine<T> {
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, T)>>,
    rhs: Vec<T>,
    cost: Vec<T>,
    lb: Vec<T>,
    ub: Vec<T>,
    pricing: Pricing,
    pivot_limit: u64,

    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Vec<T>,
    x: Vec<T>,
    updates_since_refactor: u32,
    total_pivots: u64,
    tol: Tolerances<T>,
}

impl<T: Scalar> LpEngine<T> {
    pub fn new(inst: &MilpInstance<T>, pricing: Pricing) -> Self {
        let n = inst.num_vars();
        let m = inst.num_cons();
        let mut cost = inst.obj().to_vec();
        cost.extend(std::iter::repeat(T::zero()).take(m));
        let mut lb = inst.var_lb().to_vec();
        let mut ub = inst.var_ub().to_vec();
        lb.extend(std::iter::repeat(T::zero()).take(m));
        ub.extend(std::iter::repeat(T::infinity()).take(m));
        let mut engine = LpEngine {
            n,
            m,
            cols: inst.columns(),
            rhs: inst.rhs().to_vec(),
            cost,
            lb,
            ub,
            pricing,
            pivot_limit: DEFAULT_PIVOT_LIMIT,
            state: Vec::new(),
            basis: Vec::new(),
            binv: Vec::new(),
            x: vec![T::zero(); n + m],
            updates_since_refactor: 0,
            total_pivots: 0,
            tol: Tolerances::new(),
        };
        engine.reset_to_slack_basis();
        engine
    }

    pub fn with_pivot_limit(mut self, limit: u64) -> Self {
        self.pivot_limit = limit;
        self
    }

    pub fn set_pricing(&mut self, pricing: Pricing) {
        self.pricing = pricing;
    }

    /// Simplex iterations performed over the engine's lifetime.
    pub fn total_pivots(&self) -> u64 {
        self.total_pivots
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    fn reset_to_slack_basis(&mut self) {
        let (n, m) = (self.n, self.m);
        self.state = (0..n + m)
            .map(|k| {
                if k >= n {
                    VarState::Basic(k - n)
                } else {
                    VarState::NonBasic(NonBasic::Lower)
                }
            })
            .collect();
        self.basis = (n..n + m).collect();
        self.binv = vec![T::zero(); m * m];
        for i in 0..m {
            self.binv[i * m + i] = T::one();
        }
        self.updates_since_refactor = 0;
    }

    /// Solves with the instance's own bounds.
    pub fn solve_default(&mut self, inst: &MilpInstance<T>) -> Result<LpSolution<T>, LpError> {
        self.solve(inst.var_lb(), inst.var_ub())
    }

    /// Solves the LP with the given structural bounds, starting from the
    /// current basis.
    pub fn solve(&mut self, lb: &[T], ub: &[T]) -> Result<LpSolution<T>, LpError> {
        let n = self.n;
        if lb.len() != n || ub.len() != n {
            return Err(LpError::DimMismatch { expected: n });
        }
        self.lb[..n].copy_from_slice(lb);
        self.ub[..n].copy_from_slice(ub);
        let start = self.total_pivots;
        if (0..n).any(|j| lb[j] > ub[j]) {
            return Ok(self.finish(LpStatus::Infeasible, start));
        }
        for k in 0..n + self.m {
            if let VarState::NonBasic(s) = self.state[k] {
                let s = self.place_nonbasic(k, s);
                self.state[k] = VarState::NonBasic(s);
            }
        }
        self.recompute_basic_values();

        let mut phase = Phase::One;
        let mut degenerate_run = 0u32;
        loop {
            if self.total_pivots - start >= self.pivot_limit {
                return Err(LpError::IterationLimit {
                    pivots: self.total_pivots - start,
                });
            }
            if self.updates_since_refactor >= REFACTOR_EVERY {
                self.refactor();
            }
            if phase == Phase::One && !self.has_infeasible_basic() {
                phase = Phase::Two;
            }
            let bland = self.pricing == Pricing::Bland || degenerate_run >= DEGENERATE_SWITCH;
            let y = self.duals_for(phase);
            let Some((q, d_q)) = self.choose_entering(&y, phase, bland) else {
                let status = match phase {
                    Phase::One => LpStatus::Infeasible,
                    Phase::Two => LpStatus::Optimal,
                };
                return Ok(self.finish(status, start));
            };
            // Direction of change of the entering variable.
            let dir = if d_q < T::zero() { T::one() } else { -T::one() };
            let alpha = self.ftran(q);
            match self.ratio_test(q, dir, &alpha, phase, bland) {
                Step::Unbounded => {
                    // Phase 1 is bounded below by zero, so a ray there is a
                    // numerical artefact: rebuild the inverse and carry on.
                    if phase == Phase::One {
                        self.refactor();
                        self.total_pivots += 1;
                        continue;
                    }
                    return Ok(self.finish(LpStatus::Unbounded, start));
                }
                Step::BoundFlip(theta) => {
                    self.apply_step(q, dir, theta, &alpha);
                    let s = match self.state[q] {
                        VarState::NonBasic(NonBasic::Lower) => NonBasic::Upper,
                        _ => NonBasic::Lower,
                    };
                    self.state[q] = VarState::NonBasic(s);
                    self.x[q] = if s == NonBasic::Lower {
                        self.lb[q]
                    } else {
                        self.ub[q]
                    };
                    degenerate_run = 0;
                }
                Step::Pivot { row, theta, leave_to } => {
                    self.apply_step(q, dir, theta, &alpha);
                    let leaving = self.basis[row];
                    self.x[leaving] = match leave_to {
                        NonBasic::Lower => self.lb[leaving],
                        NonBasic::Upper => self.ub[leaving],
                        NonBasic::Free => T::zero(),
                    };
                    self.state[leaving] = VarState::NonBasic(leave_to);
                    self.state[q] = VarState::Basic(row);
                    self.basis[row] = q;
                    self.update_binv(row, &alpha);
                    if theta <= self.tol.primal {
                        degenerate_run += 1;
                    } else {
                        degenerate_run = 0;
                    }
                }
            }
            self.total_pivots += 1;
        }
    }

    fn place_nonbasic(&mut self, k: usize, prefer: NonBasic) -> NonBasic {
        let (l, u) = (self.lb[k], self.ub[k]);
        let s = match prefer {
            _ if l == u => NonBasic::Lower,
            NonBasic::Lower if l.is_finite() => NonBasic::Lower,
            NonBasic::Upper if u.is_finite() => NonBasic::Upper,
            _ if l.is_finite() => NonBasic::Lower,
            _ if u.is_finite() => NonBasic::Upper,
            _ => NonBasic::Free,
        };
        self.x[k] = match s {
            NonBasic::Lower => l,
            NonBasic::Upper => u,
            NonBasic::Free => T::zero(),
        };
        s
    }

    fn column(&self, k: usize) -> ColumnIter<'_, T> {
        if k < self.n {
            ColumnIter::Structural(self.cols[k].iter())
        } else {
            ColumnIter::Slack(Some(k - self.n))
        }
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut r = self.rhs.clone();
        for k in 0..self.n + m {
            if let VarState::NonBasic(_) = self.state[k] {
                let v = self.x[k];
                if v != T::zero() {
                    for (i, a) in self.column(k) {
                        r[i] -= a * v;
                    }
                }
            }
        }
        for row in 0..m {
            let b = &self.binv[row * m..(row + 1) * m];
            let v: T = b.iter().zip(&r).map(|(&p, &q)| p * q).sum();
            self.x[self.basis[row]] = v;
        }
    }

    fn has_infeasible_basic(&self) -> bool {
        let t = self.tol.primal;
        self.basis
            .iter()
            .any(|&k| self.x[k] < self.lb[k] - t || self.x[k] > self.ub[k] + t)
    }

    fn phase_cost(&self, k: usize, phase: Phase) -> T {
        match phase {
            Phase::Two => self.cost[k],
            Phase::One => {
                let t = self.tol.primal;
                if self.x[k] < self.lb[k] - t {
                    -T::one()
                } else if self.x[k] > self.ub[k] + t {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `yᵀ = c_Bᵀ B⁻¹` for the phase's cost vector.
    fn duals_for(&self, phase: Phase) -> Vec<T> {
        let m = self.m;
        let mut y = vec![T::zero(); m];
        for row in 0..m {
            let cb = self.phase_cost(self.basis[row], phase);
            if cb != T::zero() {
                let b = &self.binv[row * m..(row + 1) * m];
                for (yi, &bi) in y.iter_mut().zip(b) {
                    *yi += cb * bi;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, k: usize, y: &[T], phase: Phase) -> T {
        let c = match phase {
            Phase::Two => self.cost[k],
            Phase::One => T::zero(),
        };
        c - self.column(k).map(|(i, a)| y[i] * a).sum::<T>()
    }

    fn choose_entering(&self, y: &[T], phase: Phase, bland: bool) -> Option<(usize, T)> {
        let tol = self.tol.dual;
        let mut best: Option<(usize, T)> = None;
        for k in 0..self.n + self.m {
            let VarState::NonBasic(s) = self.state[k] else {
                continue;
            };
            if self.lb[k] == self.ub[k] {
                continue;
            }
            let d = self.reduced_cost(k, y, phase);
            let eligible = match s {
                NonBasic::Lower => d < -tol,
                NonBasic::Upper => d > tol,
                NonBasic::Free => d.abs() > tol,
            };
            if !eligible {
                continue;
            }
            if bland {
                return Some((k, d));
            }
            match best {
                Some((_, bd)) if bd.abs() >= d.abs() => {}
                _ => best = Some((k, d)),
            }
        }
        best
    }

    /// `B⁻¹ a_q`.
    fn ftran(&self, q: usize) -> Vec<T> {
        let m = self.m;
        let mut alpha = vec![T::zero(); m];
        for (i, a) in self.column(q) {
            for row in 0..m {
                alpha[row] += self.binv[row * m + i] * a;
            }
        }
        alpha
    }

    fn ratio_test(&self, q: usize, dir: T, alpha: &[T], phase: Phase, bland: bool) -> Step<T> {
        let tol = self.tol.primal;
        let mut best: Option<(usize, T, NonBasic, T)> = None;
        for row in 0..self.m {
            let a = alpha[row];
            if a.abs() <= self.tol.pivot {
                continue;
            }
            let k = self.basis[row];
            let rate = -dir * a;
            let (l, u) = (self.lb[k], self.ub[k]);
            let v = self.x[k];
            // Working bounds: an infeasible basic variable may only move up to
            // the bound it violates.
            let (wl, wu) = if phase == Phase::One && v < l - tol {
                (T::neg_infinity(), l)
            } else if phase == Phase::One && v > u + tol {
                (u, T::infinity())
            } else {
                (l, u)
            };
            let (limit, leave_to) = if rate > T::zero() {
                (wu, if wu == l { NonBasic::Lower } else { NonBasic::Upper })
            } else {
                (wl, if wl == u { NonBasic::Upper } else { NonBasic::Lower })
            };
            if !limit.is_finite() {
                continue;
            }
            let theta = ((limit - v) / rate).max(T::zero());
            let better = match best {
                None => true,
                Some((brow, bt, _, ba)) => {
                    if theta < bt - T::lit(1e-12) {
                        true
                    } else if theta <= bt + T::lit(1e-12) {
                        if bland {
                            k < self.basis[brow]
                        } else {
                            a.abs() > ba
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                best = Some((row, theta, leave_to, a.abs()));
            }
        }
        let span = self.ub[q] - self.lb[q];
        match best {
            Some((_, theta, _, _)) if span.is_finite() && span <= theta => Step::BoundFlip(span),
            Some((row, theta, leave_to, _)) => Step::Pivot {
                row,
                theta,
                leave_to,
            },
            None if span.is_finite() => Step::BoundFlip(span),
            None => Step::Unbounded,
        }
    }

    fn apply_step(&mut self, q: usize, dir: T, theta: T, alpha: &[T]) {
        if theta == T::zero() {
            return;
        }
        self.x[q] += dir * theta;
        for row in 0..self.m {
            let k = self.basis[row];
            self.x[k] -= dir * theta * alpha[row];
        }
    }

    fn update_binv(&mut self, r: usize, alpha: &[T]) {
        let m = self.m;
        let piv = alpha[r];
        let (head, rest) = self.binv.split_at_mut(r * m);
        let (prow, tail) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= piv;
        }
        for (row, chunk) in head.chunks_mut(m).enumerate() {
            let f = alpha[row];
            if f != T::zero() {
                for (c, &p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
            }
        }
        for (off, chunk) in tail.chunks_mut(m).enumerate() {
            let f = alpha[r + 1 + off];
            if f != T::zero() {
                for (c, &p) in chunk.iter_mut().zip(prow.iter()) {
                    *c -= f * p;
                }
            }
        }
        self.updates_since_refactor += 1;
    }

    /// Rebuilds `B⁻¹` by inverting only the block of basic structurals
    /// against the rows whose slack is nonbasic; basic slacks are unit
    /// columns and are eliminated directly.
    fn block_inverse(&self) -> Option<Vec<T>> {
        let (n, m) = (self.n, self.m);
        let structs: Vec<(usize, usize)> = self
            .basis
            .iter()
            .enumerate()
            .filter(|&(_, &k)| k < n)
            .map(|(pos, &k)| (pos, k))
            .collect();
        let p = structs.len();
        let mut tight_idx = vec![usize::MAX; m];
        let mut tight = Vec::with_capacity(p);
        for i in 0..m {
            if !matches!(self.state[n + i], VarState::Basic(_)) {
                tight_idx[i] = tight.len();
                tight.push(i);
            }
        }
        if tight.len() != p {
            return None;
        }
        let mut block = vec![T::zero(); p * p];
        for (c, &(_, j)) in structs.iter().enumerate() {
            for &(i, a) in &self.cols[j] {
                if tight_idx[i] != usize::MAX {
                    block[tight_idx[i] * p + c] = a;
                }
            }
        }
        let inv = invert(block, p, self.tol.pivot)?;
        let mut binv = vec![T::zero(); m * m];
        for (c, &(pos, _)) in structs.iter().enumerate() {
            let row = &mut binv[pos * m..(pos + 1) * m];
            for (r, &i) in tight.iter().enumerate() {
                row[i] = inv[c * p + r];
            }
        }
        for i in 0..m {
            if let VarState::Basic(pos) = self.state[n + i] {
                binv[pos * m + i] = T::one();
            }
        }
        for (c, &(_, j)) in structs.iter().enumerate() {
            for &(i, a) in &self.cols[j] {
                let VarState::Basic(pos) = self.state[n + i] else {
                    continue;
                };
                for (r, &t) in tight.iter().enumerate() {
                    let v = inv[c * p + r];
                    if v != T::zero() {
                        binv[pos * m + t] -= a * v;
                    }
                }
            }
        }
        Some(binv)
    }

    fn refactor(&mut self) {
        match self.block_inverse() {
            Some(inv) => self.binv = inv,
            None => {
                let states = self.state.clone();
                self.reset_to_slack_basis();
                for k in 0..self.n {
                    if let VarState::NonBasic(s) = states[k] {
                        self.state[k] = VarState::NonBasic(s);
                    } else {
                        let s = self.place_nonbasic(k, NonBasic::Lower);
                        self.state[k] = VarState::NonBasic(s);
                    }
                }
            }
        }
        self.updates_since_refactor = 0;
        self.recompute_basic_values();
    }

    fn finish(&mut self, status: LpStatus, start: u64) -> LpSolution<T> {
        let n = self.n;
        let m = self.m;
        let pivots = self.total_pivots - start;
        if status != LpStatus::Optimal {
            return LpSolution {
                status,
                x: vec![T::zero(); n],
                obj: match status {
                    LpStatus::Unbounded => T::neg_infinity(),
                    _ => T::infinity(),
                },
                reduced_costs: vec![T::zero(); n],
                duals: vec![T::zero(); m],
                basis_flags: vec![BasisFlag::AtLower; n],
                pivots,
            };
        }
        if self.updates_since_refactor > 0 {
            self.recompute_basic_values();
        }
        let y = self.duals_for(Phase::Two);
        let mut x = self.x[..n].to_vec();
        // Snap values within tolerance of a bound onto it.
        for j in 0..n {
            let t = self.tol.primal;
            if (x[j] - self.lb[j]).abs() <= t {
                x[j] = self.lb[j];
            } else if (x[j] - self.ub[j]).abs() <= t {
                x[j] = self.ub[j];
            }
        }
        let reduced_costs = (0..n)
            .map(|j| match self.state[j] {
                VarState::Basic(_) => T::zero(),
                VarState::NonBasic(_) => self.reduced_cost(j, &y, Phase::Two),
            })
            .collect();
        let basis_flags = (0..n)
            .map(|j| match self.state[j] {
                VarState::Basic(_) => BasisFlag::Basic,
                VarState::NonBasic(NonBasic::Upper) => BasisFlag::AtUpper,
                VarState::NonBasic(_) => BasisFlag::AtLower,
            })
            .collect();
        let obj = self.cost[..n].iter().zip(&x).map(|(&c, &v)| c * v).sum();
        LpSolution {
            status,
            x,
            obj,
            reduced_costs,
            duals: y,
            basis_flags,
            pivots,
        }
    }
}

enum Step<T> {
    Unbounded,
    BoundFlip(T),
    Pivot {
        row: usize,
        theta: T,
        leave_to: NonBasic,
    },
}

enum ColumnIter<'a, T> {
    Structural(std::slice::Iter<'a, (usize, T)>),
    Slack(Option<usize>),
}

impl<T: Scalar> Iterator for ColumnIter<'_, T> {
    type Item = (usize, T);

    fn next(&mut self) -> Option<(usize, T)> {
        match self {
            ColumnIter::Structural(it) => it.next().copied(),
            ColumnIter::Slack(i) => i.take().map(|i| (i, T::one())),
        }
    }
}

/// Gauss-Jordan inversion with partial pivoting; `None` if singular.
fn invert<T: Scalar>(mut a: Vec<T>, m: usize, tol: T) -> Option<Vec<T>> {
    let mut inv = vec![T::zero(); m * m];
    for i in 0..m {
        inv[i * m + i] = T::one();
    }
    for col in 0..m {
        let (piv_row, piv_val) = (col..m)
            .map(|r| (r, a[r * m + col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal))?;
        if piv_val <= tol {
            return None;
        }
        if piv_row != col {
            for c in 0..m {
                a.swap(piv_row * m + c, col * m + c);
                inv.swap(piv_row * m + c, col * m + c);
            }
        }
        let p = a[col * m + col];
        for c in 0..m {
            a[col * m + c] /= p;
            inv[col * m + c] /= p;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[r * m + col];
            if f == T::zero() {
                continue;
            }
            for c in 0..m {
                let ac = a[col * m + c];
                if ac != T::zero() {
                    a[r * m + c] -= f * ac;
                }
                let ic = inv[col * m + c];
                if ic != T::zero() {
                    inv[r * m + c] -= f * ic;
                }
            }
        }
    }
    Some(inv)
}

/// Solves the LP relaxation from a fresh slack basis, optionally with
/// per-variable bound overrides `(lb, ub)`.
pub fn solve_lp_relaxation<T: Scalar>(
    inst: &MilpInstance<T>,
    pricing: Pricing,
    extra_bounds: Option<(&[T], &[T])>,
) -> Result<LpSolution<T>, LpError> {
    let mut engine = LpEngine::new(inst, pricing);
    match extra_bounds {
        Some((lb, ub)) => engine.solve(lb, ub),
        None => engine.solve_default(inst),
    }
}
