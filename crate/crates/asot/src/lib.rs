//! Batched 1-Wasserstein distances over learned anchor spaces.
//!
//! The crate solves collections of optimal transport problems by translating
//! them into a shared anchor space: every distribution is mapped onto a fixed
//! set of `k` anchor points, after which all pairs share one `k x k` cost
//! matrix. Exact (min-cost-flow) and entropic (Sinkhorn) solvers are provided
//! for both the original and the translated problems, together with the
//! error-bound calculators that control the approximation quality and three
//! ways of learning the anchor space (k-means, metric learning, unrolled
//! dictionary learning).

pub mod anchor;
pub mod batch;
pub mod data;
pub mod dl;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod ml;
pub mod nn;
pub mod ot;
pub mod pipeline;

pub use error::{Error, Result};
