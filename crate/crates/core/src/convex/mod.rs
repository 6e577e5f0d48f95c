//! Convex building blocks: feasible sets, potentials with their conjugates,
//! Bregman divergences, and a small deterministic solver.
//!
//! For a strictly convex `R`, the Bregman divergence is
//!
//! ```text
//! D_R(x, y) = R(x) - R(y) - grad R(y) . (x - y)
//! ```
//!
//! and the convex conjugate is `R*(g) = sup_x g.x - R(x)`.

mod potential;
mod set;
mod solver;

use thiserror::Error;

pub use potential::{
    bregman_divergence, conjugate, conjugate_gradient, dual_of, log_sum_exp, numeric_conjugate,
    sampled_conjugate_finiteness, softmax, ConjugateOptions, ConjugatePoint, ConvexPotential,
    CustomPotential, LogSumExp, NegEntropy, NumericConjugate, PotentialRef, SquaredNorm, PROB_FLOOR,
};
pub(crate) use potential::dot;
pub use set::{FeasibleSet, MEMBERSHIP_TOL};
pub use solver::{minimize, FnObjective, Minimum, Objective, RunStatus, SolverError, SolverOptions};

#[derive(Debug, Error)]
pub enum ConvexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("point {point:?} is not in the interior of the potential's domain")]
    NotInterior { point: Vec<f64> },
    #[error("point {point:?} is outside the potential's domain")]
    OutsideDomain { point: Vec<f64> },
    #[error("conjugate supremum is unbounded (escaping through {direction:?})")]
    Unbounded { direction: Vec<f64> },
    #[error(transparent)]
    Solver(#[from] SolverError),
}
