//! Entropic scaling algorithms for balanced and unbalanced optimal transport.
//!
//! The library solves problems of the form
//!
//! ```text
//! min_R  F1(R dy) + F2(Rᵀ dx) + ε KL(R | K)
//! ```
//!
//! over nonnegative couplings `R` of two discrete spaces, where `F1`, `F2` are
//! marginal functionals (equality constraints, KL / TV penalties, range
//! constraints, or composites such as barycenter and gradient-flow energies)
//! and `K = exp(-C/ε)` is the Gibbs kernel of a cost `C`. All solvers are
//! diagonal scaling iterations; the stabilized variant keeps the scalings in
//! the log domain so that `ε` can be taken very small.

pub mod barycenter;
pub mod divergences;
pub mod error;
pub mod extensions;
pub mod flows;
pub mod geometry;
pub mod scaling;

pub use divergences::{DivergenceKind, DivergenceSpec};
pub use error::{Error, Result};
pub use geometry::{CostMatrix, DiscreteSpace, Kernel};
pub use scaling::{solve_plain, solve_stabilized, Plan, ScalingOptions, SolveReport};
