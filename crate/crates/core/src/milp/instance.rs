use crate::scalar::Scalar;

use super::error::MilpError;

/// Feasibility tolerance on row activities.
pub const TOL_FEAS: f64 = 1e-6;
/// Integrality tolerance for binary variables.
pub const TOL_INT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

impl RowSense {
    pub fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Ge => ">=",
            RowSense::Eq => "=",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "<=" | "L" | "le" => Some(RowSense::Le),
            ">=" | "G" | "ge" => Some(RowSense::Ge),
            "=" | "==" | "E" | "eq" => Some(RowSense::Eq),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

/// A constraint as written by a modeller, before canonicalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow<T> {
    pub coeffs: Vec<(usize, T)>,
    pub sense: RowSense,
    pub rhs: T,
}

/// An uncanonicalized model: arbitrary row senses and objective direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInstance<T> {
    pub name: String,
    pub sense: ObjSense,
    pub num_vars: usize,
    pub obj: Vec<T>,
    pub var_lb: Vec<T>,
    pub var_ub: Vec<T>,
    pub binaries: Vec<usize>,
    pub rows: Vec<RawRow<T>>,
}

impl<T: Scalar> RawInstance<T> {
    /// All-binary model with zero objective and no rows.
    pub fn binary(name: impl Into<String>, sense: ObjSense, num_vars: usize) -> Self {
        RawInstance {
            name: name.into(),
            sense,
            num_vars,
            obj: vec![T::zero(); num_vars],
            var_lb: vec![T::zero(); num_vars],
            var_ub: vec![T::one(); num_vars],
            binaries: (0..num_vars).collect(),
            rows: Vec::new(),
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, T)>, sense: RowSense, rhs: T) {
        self.rows.push(RawRow { coeffs, sense, rhs });
    }
}

/// One row of the constraint matrix, column indices strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow<T> {
    pub idx: Vec<usize>,
    pub val: Vec<T>,
}

impl<T: Scalar> SparseRow<T> {
    pub fn empty() -> Self {
        SparseRow {
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    /// Sorts by column, merges duplicates and drops zero coefficients.
    pub fn from_pairs(mut pairs: Vec<(usize, T)>) -> Self {
        pairs.sort_by_key(|&(j, _)| j);
        let mut idx: Vec<usize> = Vec::with_capacity(pairs.len());
        let mut val: Vec<T> = Vec::with_capacity(pairs.len());
        for (j, a) in pairs {
            if idx.last() == Some(&j) {
                *val.last_mut().unwrap() += a;
            } else {
                idx.push(j);
                val.push(a);
            }
        }
        let (idx, val) = idx
            .into_iter()
            .zip(val)
            .filter(|(_, a)| *a != T::zero())
            .unzip();
        SparseRow { idx, val }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn dot(&self, x: &[T]) -> T {
        self.iter().map(|(j, a)| a * x[j]).sum()
    }
}

/// Canonical minimization MILP: `min cᵀx  s.t.  A x ≤ b,  lb ≤ x ≤ ub`,
/// with a designated set of binary variables.
///
/// Maximization inputs are stored with a negated objective; `maximize`
/// records that so reported objective values can be flipped back.
#[derive(Debug, Clone, PartialEq)]
pub struct MilpInstance<T> {
    name: String,
    obj: Vec<T>,
    rows: Vec<SparseRow<T>>,
    rhs: Vec<T>,
    var_lb: Vec<T>,
    var_ub: Vec<T>,
    is_binary: Vec<bool>,
    maximize: bool,
}

/// Assignment of values to every variable of an instance.
pub type Assignment<T> = Vec<T>;

impl<T: Scalar> MilpInstance<T> {
    /// Brings a raw model into canonical all-`≤` minimization form.
    ///
    /// `≥` rows are negated and `=` rows are split into two `≤` rows.
    pub fn canonicalize(raw: &RawInstance<T>) -> Result<Self, MilpError> {
        let n = raw.num_vars;
        if n == 0 || raw.rows.is_empty() {
            return Err(MilpError::EmptyInstance);
        }
        for (len, _what) in [
            (raw.obj.len(), "obj"),
            (raw.var_lb.len(), "lb"),
            (raw.var_ub.len(), "ub"),
        ] {
            if len != n {
                return Err(MilpError::LengthMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if raw.obj.iter().any(|c| !c.is_finite()) {
            return Err(MilpError::NonFinite { what: "objective" });
        }
        let mut is_binary = vec![false; n];
        for &j in &raw.binaries {
            if j >= n {
                return Err(MilpError::IndexOutOfRange { index: j, limit: n });
            }
            is_binary[j] = true;
        }
        let mut var_lb = raw.var_lb.clone();
        let mut var_ub = raw.var_ub.clone();
        for j in 0..n {
            if var_lb[j].is_nan() || var_ub[j].is_nan() {
                return Err(MilpError::NonFinite { what: "bounds" });
            }
            if var_lb[j] > var_ub[j] {
                return Err(MilpError::BadBounds { var: j });
            }
            if is_binary[j] {
                var_lb[j] = T::zero();
                var_ub[j] = T::one();
            }
        }
        let maximize = raw.sense == ObjSense::Maximize;
        let obj: Vec<T> = if maximize {
            raw.obj.iter().map(|&c| -c).collect()
        } else {
            raw.obj.clone()
        };
        let mut rows = Vec::with_capacity(raw.rows.len());
        let mut rhs = Vec::with_capacity(raw.rows.len());
        for row in &raw.rows {
            if !row.rhs.is_finite() || row.coeffs.iter().any(|(_, a)| !a.is_finite()) {
                return Err(MilpError::NonFinite { what: "constraint" });
            }
            if let Some(&(j, _)) = row.coeffs.iter().find(|(j, _)| *j >= n) {
                return Err(MilpError::IndexOutOfRange { index: j, limit: n });
            }
            let le = SparseRow::from_pairs(row.coeffs.clone());
            let negated = || SparseRow::from_pairs(row.coeffs.iter().map(|&(j, a)| (j, -a)).collect());
            match row.sense {
                RowSense::Le => {
                    rows.push(le);
                    rhs.push(row.rhs);
                }
                RowSense::Ge => {
                    rows.push(negated());
                    rhs.push(-row.rhs);
                }
                RowSense::Eq => {
                    rows.push(le);
                    rhs.push(row.rhs);
                    rows.push(negated());
                    rhs.push(-row.rhs);
                }
            }
        }
        Ok(MilpInstance {
            name: raw.name.clone(),
            obj,
            rows,
            rhs,
            var_lb,
            var_ub,
            is_binary,
            maximize,
        })
    }

    /// Inverse view of [`canonicalize`](Self::canonicalize): all-`≤` rows with
    /// the original objective direction restored.
    pub fn to_raw(&self) -> RawInstance<T> {
        RawInstance {
            name: self.name.clone(),
            sense: if self.maximize {
                ObjSense::Maximize
            } else {
                ObjSense::Minimize
            },
            num_vars: self.num_vars(),
            obj: self.original_obj(),
            var_lb: self.var_lb.clone(),
            var_ub: self.var_ub.clone(),
            binaries: self.binary_indices(),
            rows: self
                .rows
                .iter()
                .zip(&self.rhs)
                .map(|(r, &b)| RawRow {
                    coeffs: r.iter().collect(),
                    sense: RowSense::Le,
                    rhs: b,
                })
                .collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn num_vars(&self) -> usize {
        self.obj.len()
    }

    pub fn num_cons(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(SparseRow::nnz).sum()
    }

    /// Minimization-sense objective vector.
    pub fn obj(&self) -> &[T] {
        &self.obj
    }

    /// Objective vector in the direction the model was written in.
    pub fn original_obj(&self) -> Vec<T> {
        if self.maximize {
            self.obj.iter().map(|&c| -c).collect()
        } else {
            self.obj.clone()
        }
    }

    pub fn rows(&self) -> &[SparseRow<T>] {
        &self.rows
    }

    pub fn rhs(&self) -> &[T] {
        &self.rhs
    }

    pub fn var_lb(&self) -> &[T] {
        &self.var_lb
    }

    pub fn var_ub(&self) -> &[T] {
        &self.var_ub
    }

    pub fn is_binary(&self, j: usize) -> bool {
        self.is_binary[j]
    }

    pub fn binary_mask(&self) -> &[bool] {
        &self.is_binary
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        (0..self.num_vars()).filter(|&j| self.is_binary[j]).collect()
    }

    pub fn num_binaries(&self) -> usize {
        self.is_binary.iter().filter(|&&b| b).count()
    }

    pub fn all_binary(&self) -> bool {
        self.is_binary.iter().all(|&b| b)
    }

    pub fn is_maximize(&self) -> bool {
        self.maximize
    }

    /// Column-major copy of the constraint matrix: `(row, coeff)` per variable.
    pub fn columns(&self) -> Vec<Vec<(usize, T)>> {
        let mut cols = vec![Vec::new(); self.num_vars()];
        for (i, row) in self.rows.iter().enumerate() {
            for (j, a) in row.iter() {
                cols[j].push((i, a));
            }
        }
        cols
    }

    /// `cᵀx` in minimization sense.
    pub fn internal_objective(&self, x: &[T]) -> T {
        self.obj.iter().zip(x).map(|(&c, &v)| c * v).sum()
    }

    /// `cᵀx` in the original sense (un-negated for maximization inputs).
    pub fn objective_value(&self, x: &[T]) -> T {
        self.to_original(self.internal_objective(x))
    }

    /// Converts a minimization-sense objective to the original sense.
    pub fn to_original(&self, v: T) -> T {
        if self.maximize {
            -v
        } else {
            v
        }
    }

    /// Converts an original-sense objective to minimization sense.
    pub fn to_internal(&self, v: T) -> T {
        self.to_original(v)
    }

    pub fn row_activities(&self, x: &[T]) -> Vec<T> {
        self.rows.iter().map(|r| r.dot(x)).collect()
    }

    /// Feasibility of `x`: rows within `tol_feas`, bounds, and integrality of
    /// binaries within [`TOL_INT`].
    pub fn check_feasible(&self, x: &[T], tol_feas: T) -> bool {
        if x.len() != self.num_vars() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let tol_int = T::lit(TOL_INT);
        for j in 0..self.num_vars() {
            if x[j] < self.var_lb[j] - tol_feas || x[j] > self.var_ub[j] + tol_feas {
                return false;
            }
            if self.is_binary[j] && (x[j] - x[j].round()).abs() > tol_int {
                return false;
            }
        }
        self.rows
            .iter()
            .zip(&self.rhs)
            .all(|(r, &b)| r.dot(x) <= b + tol_feas)
    }

    /// Copy with extra `≤` rows appended.
    pub fn with_rows(&self, extra: Vec<(SparseRow<T>, T)>) -> Self {
        let mut out = self.clone();
        for (row, b) in extra {
            out.rows.push(row);
            out.rhs.push(b);
        }
        out
    }

    /// Copy with the objective direction flipped (minimizes the original
    /// objective's negation).
    pub fn with_flipped_objective(&self) -> Self {
        let mut out = self.clone();
        out.obj.iter_mut().for_each(|c| *c = -*c);
        out.maximize = !out.maximize;
        out
    }

    /// Copy with replaced bounds. Binary bounds must stay within `{0,1}`.
    pub fn with_bounds(&self, lb: Vec<T>, ub: Vec<T>) -> Result<Self, MilpError> {
        let n = self.num_vars();
        if lb.len() != n || ub.len() != n {
            return Err(MilpError::LengthMismatch {
                expected: n,
                got: lb.len().min(ub.len()),
            });
        }
        for j in 0..n {
            if lb[j] > ub[j] {
                return Err(MilpError::BadBounds { var: j });
            }
        }
        let mut out = self.clone();
        out.var_lb = lb;
        out.var_ub = ub;
        Ok(out)
    }

    /// Copy keeping only the rows whose mask entry is true.
    pub fn retain_rows(&self, keep: &[bool]) -> Self {
        let mut out = self.clone();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (i, (r, &b)) in self.rows.iter().zip(&self.rhs).enumerate() {
            if keep[i] {
                rows.push(r.clone());
                rhs.push(b);
            }
        }
        out.rows = rows;
        out.rhs = rhs;
        out
    }

    /// Appends the local-branching row
    /// `Σ_{X0} x_i + Σ_{X1} (1 − x_i) ≤ Δ`, stored as
    /// `Σ_{X0} x_i − Σ_{X1} x_i ≤ Δ − |X1|`.
    pub fn add_neighborhood_constraint(
        &self,
        x0: &[usize],
        x1: &[usize],
        delta: usize,
    ) -> Result<Self, MilpError> {
        let n = self.num_vars();
        let mut role = vec![0i8; n];
        for (set, tag) in [(x0, 1i8), (x1, 2i8)] {
            for &j in set {
                if j >= n {
                    return Err(MilpError::IndexOutOfRange { index: j, limit: n });
                }
                if !self.is_binary[j] {
                    return Err(MilpError::NotBinary { var: j });
                }
                if role[j] != 0 && role[j] != tag {
                    return Err(MilpError::Overlap { var: j });
                }
                role[j] = tag;
            }
        }
        let mut pairs: Vec<(usize, T)> = x0.iter().map(|&j| (j, T::one())).collect();
        pairs.extend(x1.iter().map(|&j| (j, -T::one())));
        let x1_count = role.iter().filter(|&&r| r == 2).count();
        let rhs = T::from_usize_lossy(delta) - T::from_usize_lossy(x1_count);
        Ok(self.with_rows(vec![(SparseRow::from_pairs(pairs), rhs)]))
    }

    /// Relabels variables and constraints: old variable `j` becomes
    /// `var_perm[j]`, old row `i` becomes `con_perm[i]`.
    pub fn permute(&self, var_perm: &[usize], con_perm: &[usize]) -> Result<Self, MilpError> {
        let n = self.num_vars();
        let m = self.num_cons();
        if !is_permutation(var_perm, n) || !is_permutation(con_perm, m) {
            return Err(MilpError::BadPermutation);
        }
        let mut obj = vec![T::zero(); n];
        let mut var_lb = vec![T::zero(); n];
        let mut var_ub = vec![T::zero(); n];
        let mut is_binary = vec![false; n];
        for j in 0..n {
            let p = var_perm[j];
            obj[p] = self.obj[j];
            var_lb[p] = self.var_lb[j];
            var_ub[p] = self.var_ub[j];
            is_binary[p] = self.is_binary[j];
        }
        let mut rows = vec![SparseRow::empty(); m];
        let mut rhs = vec![T::zero(); m];
        for i in 0..m {
            let pairs = self.rows[i].iter().map(|(j, a)| (var_perm[j], a)).collect();
            rows[con_perm[i]] = SparseRow::from_pairs(pairs);
            rhs[con_perm[i]] = self.rhs[i];
        }
        Ok(MilpInstance {
            name: self.name.clone(),
            obj,
            rows,
            rhs,
            var_lb,
            var_ub,
            is_binary,
            maximize: self.maximize,
        })
    }
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &k in p {
        if k >= n || seen[k] {
            return false;
        }
        seen[k] = true;
    }
    true
}
