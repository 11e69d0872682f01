//! Exact soft-MDP mathematics on finite models.
//!
//! Everything here works in double precision on small dense tables. The
//! unconditioned soft backup uses the counting measure over actions
//! (`log Σ_a exp Q`), and latent-conditioned backups weight each action by the
//! discriminator posterior `p(z|s,a)`.

mod correction;
mod diverse;
mod kl;
mod soft;
mod verify;

pub use correction::{correction_fixed_point, CorrectionKind, CorrectionRecursion, CorrectionTable};
pub use diverse::{
    solve_diverse_system, solve_diverse_system_from, OuterMethod, DiscriminatorTable, DiverseOptions, DiverseSystemSolution, PosteriorMode, StatePosterior,
};
pub use kl::{exact_posterior, symmetric_kl_direct, symmetric_kl_via_discriminator};
pub use soft::{
    occupancy_measures, policy_from_soft_q, soft_policy_evaluation, soft_value_iteration, weighted_logsumexp, Prior,
    PriorKind, SoftQTable, SolverOptions, SweepOrder, TabularPolicy,
};
pub use verify::{residuals as theorem_residuals, verify_theorems, verify_theorems_with, TheoremReport};

use thiserror::Error;

/// Default floor applied to probabilities before they enter a logarithm.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TabularError {
    #[error("{what} did not converge in {iterations} iterations (last residual {residual:e})")]
    NotConverged { what: &'static str, iterations: usize, residual: f64, history: Vec<f64> },
    #[error("inconsistent soft table: row {state} sums to {sum}")]
    InconsistentTable { state: usize, sum: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular linear system in {0}")]
    Singular(&'static str),
}

pub type Result<T> = std::result::Result<T, TabularError>;
