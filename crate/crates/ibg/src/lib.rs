//! Intersecting block graph (IBG) toolkit: fit a rank-K overlapping-block
//! factorization to a directed graph-signal under a densifying weighted
//! Frobenius loss, certify the approximation quality in cut similarity, and
//! run node classification or knowledge-graph completion on the O(N)-sized
//! factors.

pub mod adam;
pub mod certify;
pub mod cli;
pub mod error;
pub mod graph;
pub mod ibg;
pub mod io;
pub mod kg;
pub mod nn;
pub mod norms;
pub mod sgd;
pub mod svd;

pub use error::{IbgError, Result};

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::run()
}
