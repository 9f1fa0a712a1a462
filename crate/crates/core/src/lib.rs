//! Engine for placing and parallelizing geo-distributed streaming joins.
//!
//! The pipeline embeds measured network latencies into a Euclidean cost
//! space, computes each join replica's ideal position as a geometric median,
//! and then maps replicas onto physical nodes under capacity and bandwidth
//! constraints, with incremental re-optimization for topology and workload
//! changes. Comparison strategies and an experiment harness live alongside.

pub mod baselines;
pub mod costspace;
pub mod demo;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod median;
pub mod placement;
pub mod plan;
pub mod reopt;
pub mod spatial;
pub mod topology;

pub use error::{Error, Result};
