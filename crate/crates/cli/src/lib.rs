//! Experiment runner around the `reddiff` library: JSON-config runs, parameter
//! sweeps, and a self-contained verification suite (`check`).

// negated comparisons in validation so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod config;
pub mod io;
pub mod runner;
pub mod sweep;
