//! Canonical MILP data model, file format and exhaustive oracle.

mod brute;
mod error;
mod instance;
pub mod io;

pub use brute::{brute_force_optimum, BruteForceOptimum, BRUTE_FORCE_MAX_VARS};
pub use error::MilpError;
pub use instance::{
    Assignment, MilpInstance, ObjSense, RawInstance, RawRow, RowSense, SparseRow, TOL_FEAS,
    TOL_INT,
};
