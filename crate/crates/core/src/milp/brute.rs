use crate::scalar::Scalar;

use super::error::MilpError;
use super::instance::{MilpInstance, TOL_FEAS};

/// Largest instance the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_VARS: usize = 22;

/// Exhaustive optimum of an all-binary instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceOptimum<T> {
    /// Optimal objective in the instance's original sense.
    pub best_obj: T,
    /// Every assignment attaining `best_obj`, in increasing bitmask order.
    pub optima: Vec<Vec<T>>,
}

/// Enumerates all `2ⁿ` assignments in Gray-code order, keeping row
/// activities incrementally, and returns the optimum with all its attainers.
pub fn brute_force_optimum<T: Scalar>(
    inst: &MilpInstance<T>,
) -> Result<BruteForceOptimum<T>, MilpError> {
    let n = inst.num_vars();
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(MilpError::TooLarge { n });
    }
    if let Some(j) = (0..n).find(|&j| !inst.is_binary(j)) {
        return Err(MilpError::NotBinary { var: j });
    }
    let tol = T::lit(TOL_FEAS);
    let cols = inst.columns();
    let rhs = inst.rhs();
    let c = inst.obj();
    let lb = inst.var_lb();
    let ub = inst.var_ub();

    let mut x = vec![T::zero(); n];
    let mut act = vec![T::zero(); inst.num_cons()];
    let mut violated = rhs.iter().filter(|&&b| T::zero() > b + tol).count();
    let mut obj = T::zero();
    let mut mask: u64 = 0;

    // Incremental sums drift slightly; screen with a loose margin and
    // re-evaluate survivors exactly.
    let screen = T::lit(1e-7);
    let mut best = T::infinity();
    let mut candidates: Vec<u64> = Vec::new();

    let within_bounds = |mask: u64| {
        (0..n).all(|j| {
            let v = if mask >> j & 1 == 1 { T::one() } else { T::zero() };
            v >= lb[j] && v <= ub[j]
        })
    };

    let total: u64 = 1u64 << n;
    for step in 0..total {
        if step > 0 {
            let j = step.trailing_zeros() as usize;
            let delta = if x[j] == T::zero() { T::one() } else { -T::one() };
            x[j] += delta;
            mask ^= 1 << j;
            obj += c[j] * delta;
            for &(i, a) in &cols[j] {
                let before = act[i] > rhs[i] + tol;
                act[i] += a * delta;
                let after = act[i] > rhs[i] + tol;
                match (before, after) {
                    (false, true) => violated += 1,
                    (true, false) => violated -= 1,
                    _ => {}
                }
            }
        }
        if violated == 0 && obj <= best + screen {
            if obj < best - screen {
                candidates.clear();
            }
            if obj < best {
                best = obj;
            }
            candidates.push(mask);
        }
    }

    let mut exact: Vec<(u64, T, Vec<T>)> = candidates
        .into_iter()
        .filter(|&m| within_bounds(m))
        .map(|m| {
            let xv: Vec<T> = (0..n)
                .map(|j| if m >> j & 1 == 1 { T::one() } else { T::zero() })
                .collect();
            (m, inst.internal_objective(&xv), xv)
        })
        .filter(|(_, _, xv)| inst.check_feasible(xv, tol))
        .collect();
    let Some(best_exact) = exact.iter().map(|e| e.1).reduce(T::min) else {
        return Err(MilpError::Infeasible);
    };
    let tie = T::lit(1e-9) * T::one().max(best_exact.abs());
    exact.retain(|e| e.1 <= best_exact + tie);
    exact.sort_by_key(|e| e.0);
    Ok(BruteForceOptimum {
        best_obj: inst.to_original(best_exact),
        optima: exact.into_iter().map(|e| e.2).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{ObjSense, RawInstance, RowSense};

    #[test]
    fn packing_pair_has_two_optima() {
        let mut raw = RawInstance::binary("p", ObjSense::Minimize, 2);
        raw.obj = vec![-1.0, -1.0];
        raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 1.0);
        let inst = MilpInstance::canonicalize(&raw).unwrap();
        let bf = brute_force_optimum(&inst).unwrap();
        assert_eq!(bf.best_obj, -1.0);
        assert_eq!(bf.optima, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn mis_triangle() {
        let mut raw = RawInstance::binary("mis", ObjSense::Maximize, 3);
        raw.obj = vec![1.0; 3];
        for (u, v) in [(0, 1), (1, 2), (0, 2)] {
            raw.add_row(vec![(u, 1.0), (v, 1.0)], RowSense::Le, 1.0);
        }
        let inst = MilpInstance::canonicalize(&raw).unwrap();
        let bf = brute_force_optimum(&inst).unwrap();
        assert_eq!(bf.best_obj, 1.0);
        assert_eq!(bf.optima.len(), 3);
    }

    #[test]
    fn infeasible_and_too_large() {
        let mut raw = RawInstance::binary("inf", ObjSense::Minimize, 1);
        raw.add_row(vec![(0, 1.0)], RowSense::Le, -1.0);
        let inst = MilpInstance::canonicalize(&raw).unwrap();
        assert_eq!(brute_force_optimum(&inst), Err(MilpError::Infeasible));

        let mut big = RawInstance::<f64>::binary("big", ObjSense::Minimize, 23);
        big.add_row(vec![(0, 1.0)], RowSense::Le, 1.0);
        let inst = MilpInstance::canonicalize(&big).unwrap();
        assert_eq!(brute_force_optimum(&inst), Err(MilpError::TooLarge { n: 23 }));
    }

    #[test]
    fn neighborhood_enumeration() {
        // X0={0}, X1={1}, Δ=1: (1,0) is the only excluded assignment.
        let mut raw = RawInstance::binary("nb", ObjSense::Minimize, 2);
        raw.add_row(vec![(0, 1.0), (1, 1.0)], RowSense::Le, 2.0);
        let inst = MilpInstance::canonicalize(&raw).unwrap();
        let r = inst.add_neighborhood_constraint(&[0], &[1], 1).unwrap();
        let bf = brute_force_optimum(&r).unwrap();
        assert_eq!(
            bf.optima,
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]
        );
        // Δ=0 on X0={2}, X1={1} pins both.
        let mut raw3 = RawInstance::binary("nb3", ObjSense::Minimize, 3);
        raw3.add_row(vec![(0, 1.0)], RowSense::Le, 1.0);
        let inst3 = MilpInstance::canonicalize(&raw3).unwrap();
        let pinned = inst3.add_neighborhood_constraint(&[2], &[1], 0).unwrap();
        let all = brute_force_optimum(&pinned).unwrap();
        assert!(all.optima.iter().all(|x| x[2] == 0.0 && x[1] == 1.0));
        assert_eq!(all.optima.len(), 2);
    }
}
