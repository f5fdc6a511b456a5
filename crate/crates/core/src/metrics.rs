//! Primal gap and primal integral over the work-unit clock.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::solver::SolveTrace;

/// Denominator floor for the primal gap.
pub const GAP_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("primal integral needs a positive cutoff")]
    EmptyCutoff,
}

/// `|v − v*| / max(|v*|, ε)` capped at 1. A missing incumbent or opposite
/// signs score the cap.
pub fn primal_gap<T: Scalar>(v: Option<T>, v_star: T) -> T {
    let Some(v) = v else { return T::one() };
    if v * v_star < T::zero() || !v.is_finite() {
        return T::one();
    }
    ((v - v_star).abs() / v_star.abs().max(T::lit(GAP_EPS))).min(T::one())
}

/// Integral of the step function `PG(work)` over `[0, cutoff]`; the gap is 1
/// until the first incumbent and each event applies from its work stamp on.
/// `v_star` and the trace incumbents must share a sense (minimization for
/// traces). Events past the cutoff are ignored.
pub fn primal_integral<T: Scalar>(
    trace: &SolveTrace<T>,
    v_star: T,
    cutoff: u64,
) -> Result<T, MetricError> {
    primal_integral_steps(
        trace.events.iter().map(|e| (e.work, e.incumbent)),
        v_star,
        cutoff,
    )
}

/// Same as [`primal_integral`] over raw `(work, incumbent)` steps.
pub fn primal_integral_steps<T: Scalar>(
    steps: impl IntoIterator<Item = (u64, T)>,
    v_star: T,
    cutoff: u64,
) -> Result<T, MetricError> {
    if cutoff == 0 {
        return Err(MetricError::EmptyCutoff);
    }
    let mut total = T::zero();
    let mut last_work = 0u64;
    let mut gap = T::one();
    for (work, inc) in steps {
        if work >= cutoff {
            break;
        }
        let w = work.max(last_work);
        total += gap * T::lit((w - last_work) as f64);
        last_work = w;
        gap = primal_gap(Some(inc), v_star);
    }
    total += gap * T::lit((cutoff - last_work) as f64);
    Ok(total)
}

/// Gap-versus-work step series truncated at `cutoff`, starting at `(0, 1)`
/// and ending at `cutoff`. Work stamps are strictly increasing; simultaneous
/// events keep the last gap.
pub fn gap_series<T: Scalar>(trace: &SolveTrace<T>, v_star: T, cutoff: u64) -> Vec<(u64, T)> {
    let mut out: Vec<(u64, T)> = vec![(0, T::one())];
    for e in &trace.events {
        if e.work >= cutoff {
            break;
        }
        let g = primal_gap(Some(e.incumbent), v_star);
        match out.last_mut() {
            Some(last) if last.0 == e.work => last.1 = g,
            _ => out.push((e.work, g)),
        }
    }
    let tail = out.last().map(|p| p.1).unwrap_or_else(T::one);
    if out.last().map(|p| p.0) != Some(cutoff) {
        out.push((cutoff, tail));
    }
    out
}
