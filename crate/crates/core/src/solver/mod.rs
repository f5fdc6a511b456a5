//! Branch-and-bound MILP solver with a tunable configuration space.

mod bnb;
pub mod config;
pub mod presolve;

pub use bnb::{
    solve, BranchPriorities, SolveBudget, SolveError, SolveResult, SolveStatus, SolveTrace,
    TraceEvent, MAX_DIVE_DEPTH, PRESOLVE_ROUNDS,
};
pub use config::{
    default_config, heuristic_period, BranchingRule, ConfigError, DivingMode, NodeSelection,
    SolverConfig, CONFIG_DIM,
};
pub use presolve::{presolve_pass, propagate_bounds, PresolveError};
