//! Data-driven, memory-dependent Markov abstractions of discrete-time dynamical
//! systems.
//!
//! The pipeline is:
//!
//! 1. [`dynamics`]: a deterministic system `x_{k+1} = f(x_k)`, `y_k = h(x_k)`
//!    with a sampled initial state.
//! 2. [`symbolic`]: timed words over the output alphabet; a set of words that
//!    partitions the state space into blocks.
//! 3. [`estimation`]: Monte-Carlo estimation of the labeled Markov chain whose
//!    states are those blocks.
//! 4. [`ck`]: the Cantor-Kantorovich metric between two labeled Markov chains,
//!    computed by a pruned depth-first search over the word tree, plus an exact
//!    transportation oracle for small instances.
//! 5. [`refine`]: greedy block splitting driven by a chain metric.
//! 6. [`safety`]: finite-horizon safety estimates from an abstraction, a grid
//!    baseline and a Monte-Carlo ground truth.

pub mod ck;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod io;
pub mod markov;
pub mod refine;
pub mod safety;
pub mod symbolic;

pub use error::{Error, Result};

/// Index of an output letter in the alphabet `{0, …, |A|-1}`.
pub type Label = u8;
