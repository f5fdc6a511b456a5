use thiserror::Error;

use crate::milp::{MilpInstance, TOL_FEAS};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PresolveError {
    #[error("bound propagation proved the instance infeasible")]
    DetectedInfeasible,
}

/// Activity-based bound propagation over the `≤` rows, tightening `lb`/`ub`
/// in place. Binary bounds are rounded to integers. Returns whether any
/// bound moved.
pub fn propagate_bounds<T: Scalar>(
    inst: &MilpInstance<T>,
    lb: &mut [T],
    ub: &mut [T],
    rounds: usize,
) -> Result<bool, PresolveError> {
    let tol = T::lit(TOL_FEAS);
    let eps = T::lit(1e-9);
    let mut any = false;
    for _ in 0..rounds {
        let mut changed = false;
        for (row, &b) in inst.rows().iter().zip(inst.rhs()) {
            let mut finite_min = T::zero();
            let mut inf_count = 0usize;
            let mut inf_var = usize::MAX;
            for (j, a) in row.iter() {
                let contrib = if a > T::zero() { a * lb[j] } else { a * ub[j] };
                if contrib.is_finite() {
                    finite_min += contrib;
                } else {
                    inf_count += 1;
                    inf_var = j;
                }
            }
            if inf_count == 0 && finite_min > b + tol {
                return Err(PresolveError::DetectedInfeasible);
            }
            if inf_count > 1 {
                continue;
            }
            for (j, a) in row.iter() {
                let residual = if inf_count == 1 {
                    if j != inf_var {
                        continue;
                    }
                    finite_min
                } else {
                    let contrib = if a > T::zero() { a * lb[j] } else { a * ub[j] };
                    finite_min - contrib
                };
                let bound = (b - residual) / a;
                if a > T::zero() {
                    let mut nb = bound;
                    if inst.is_binary(j) {
                        nb = (nb + eps).floor();
                    }
                    if nb < ub[j] - eps {
                        ub[j] = nb;
                        changed = true;
                    }
                } else {
                    let mut nb = bound;
                    if inst.is_binary(j) {
                        nb = (nb - eps).ceil();
                    }
                    if nb > lb[j] + eps {
                        lb[j] = nb;
                        changed = true;
                    }
                }
                if lb[j] > ub[j] + tol {
                    return Err(PresolveError::DetectedInfeasible);
                }
                if lb[j] > ub[j] {
                    // within tolerance: collapse onto one value
                    ub[j] = lb[j];
                }
            }
        }
        any |= changed;
        if !changed {
            break;
        }
    }
    Ok(any)
}

/// Bound propagation followed by removal of rows that the bounds make
/// redundant (maximum activity within the right-hand side). Variables are
/// never removed, so assignments stay index-compatible with the input.
pub fn presolve_pass<T: Scalar>(
    inst: &MilpInstance<T>,
    rounds: usize,
) -> Result<MilpInstance<T>, PresolveError> {
    let mut lb = inst.var_lb().to_vec();
    let mut ub = inst.var_ub().to_vec();
    propagate_bounds(inst, &mut lb, &mut ub, rounds)?;
    let keep: Vec<bool> = inst
        .rows()
        .iter()
        .zip(inst.rhs())
        .map(|(row, &b)| {
            let max_act: T = row
                .iter()
                .map(|(j, a)| if a > T::zero() { a * ub[j] } else { a * lb[j] })
                .sum();
            !(max_act.is_finite() && max_act <= b)
        })
        .collect();
    let tightened = inst
        .with_bounds(lb, ub)
        .expect("propagation keeps lb <= ub");
    Ok(tightened.retain_rows(&keep))
}
