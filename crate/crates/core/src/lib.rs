//! Entropy-regularized least squares on the nonnegative orthant,
//!
//! ```text
//! minimize  ‖Ax − b‖² / (2λ) + ⟨c, x⟩ + Σ x_j log(x_j / q_j)   over x ≥ 0,
//! ```
//!
//! solved through a scale-shape dual: the solution is written `x = τ p` with
//! `p` a weighted softmax, and the square system `F(y, τ) = 0` is driven to
//! zero by a damped inexact Newton method. Every exponential is evaluated
//! with a nonpositive argument, so large scales cannot overflow. Computable
//! certificates bound the iterates and the iteration count, and the
//! `sensitivity` module differentiates the solution map.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod dual;
pub mod error;
pub mod experiments;
pub mod instances;
pub mod linalg;
pub mod problem;
pub mod report;
pub mod scalar;
pub mod sensitivity;
pub mod solver;
pub mod ueg;

pub use certificates::{level_bounds, rate_certificate, LevelSetBounds, RateCertificate};
pub use dual::{eval_df, eval_f, primal_from_dual, DualPoint, SystemEval};
pub use error::{Error, Result};
pub use problem::{clip_prior, decompose, ProblemData, ProblemFile, ScaleShape};
pub use scalar::{exponent_audit, lambert_w, logsumexp_w, lse_softmax_w, softmax_w, LogWeights};
pub use sensitivity::{
    joint_lipschitz_bound, regularization_path, resolve_differences, solution_jacobians, PathOptions,
};
pub use solver::{solve, solve_classical, solve_fixed_scale, EtaSchedule, SolveReport, SolveStatus, SolverConfig};
pub use ueg::{gen_ueg, UegSpec};
