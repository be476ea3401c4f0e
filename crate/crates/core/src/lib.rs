//! Non-negative latent factor analysis for sparse, incomplete matrices.
//!
//! The solver alternates multiplicative non-negative updates of the row
//! factors `X` and column factors `Y`, and can refine each step with a
//! proportional-integral combination of the current increment and the sum of
//! all past increments. See [`solver`] for the update itself and
//! [`experiment`] for the cross-validated sweep harness.

pub mod checkpoint;
pub mod data;
pub mod experiment;
pub mod factors;
pub mod oracle;
pub mod solver;
pub mod synthetic;

pub use data::{EntrySet, HdiMatrix, RatingTriple, SplitAssignment};
pub use factors::{FactorPair, Hyperparams};
pub use solver::{Schedule, SolverConfig, SolverState, StopReason, TrainReport};
