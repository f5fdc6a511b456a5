//! Core numerics for multi-task MILP representation learning: the canonical
//! MILP model, a bounded-variable simplex, a branch-and-bound solver with
//! branching priorities, benchmark instance generators, bipartite graph
//! encoding, and primal gap / primal integral metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the element type the pipeline uses.

pub mod generate;
pub mod graph;
pub mod lp;
pub mod metrics;
pub mod milp;
pub mod scalar;
pub mod solver;

pub use scalar::Scalar;

pub type Instance = milp::MilpInstance<f64>;
pub type Graph32 = graph::BipartiteGraph<f32>;
pub type Graph64 = graph::BipartiteGraph<f64>;
pub type Solution = solver::SolveResult<f64>;
pub type Trace = solver::SolveTrace<f64>;
