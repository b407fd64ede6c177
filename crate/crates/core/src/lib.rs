//! Steiner forest approximation on finite doubling metrics.
//!
//! The pipeline snaps and rescales the input, builds nested nets and a
//! randomized hierarchical decomposition with portals, and solves a sparse
//! portal dynamic program over it. Exact and 2-approximate reference solvers
//! are included for comparison.

pub mod baseline;
pub mod cells;
pub mod decomposition;
pub mod dp;
pub mod driver;
pub mod error;
pub mod forest;
pub mod gen;
pub mod instance;
pub mod metric;
pub mod unionfind;
pub mod validate;

pub use error::{Error, Result};
