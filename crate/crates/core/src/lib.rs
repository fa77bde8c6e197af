//! Inference for discrete probabilistic models whose dependencies are sums:
//! `Y = X1 + X2 + ... + Xn` over integer-supported random variables.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense row-major n-dimensional arrays.
//! * [`fourier`]: radix-2 FFTs (decimation in time and frequency) with
//!   optional shuffle and transpose elision for convolution pipelines.
//! * [`convolution`]: exact and FFT convolution, and the p-convolution
//!   `out[k] ~ (sum_i (x[i] y[k-i])^p)^(1/p)` spanning sum (p = 1) to
//!   max (p = infinity).
//! * [`pmf`]: labeled probability mass functions over integer lattices.
//! * [`conv_tree`]: trimmed, lazily cached convolution trees that answer
//!   prior-of-sum and likelihood-of-addend queries.
//! * [`engine`]: message passers (table nodes, hyperedges, constant
//!   multipliers, convolution trees) wired into a graph.
//! * [`scheduling`]: FIFO, priority, random-subtree, and chain schedulers.
//! * [`builders`]: declarative model descriptions compiled to graphs.
//! * [`oracles`]: independent brute-force references used by tests.

mod error;
pub mod builders;
pub mod conv_tree;
pub mod convolution;
pub mod engine;
pub mod oracles;
pub mod fourier;
pub mod scheduling;
pub mod pmf;
pub mod tensor;

pub use builders::{Decomposition, Dependency, ModelSpec};
pub use conv_tree::{ConvTree, TreeStats, TrimMode};
pub use convolution::PParam;
pub use engine::{EdgeId, InferenceGraph, PasserId};
pub use error::{Error, Result};
pub use pmf::{LabeledPmf, Pmf, SupportBox};
pub use scheduling::{ConvergenceConfig, ConvergenceReport, Scheduler};
pub use tensor::Tensor;
