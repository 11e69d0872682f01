//! Maximum-entropy reinforcement learning with diverse, latent-conditioned
//! policies.
//!
//! The crate has two halves that share the [`mdp`] vocabulary:
//!
//! * [`tabular`] solves finite soft MDPs exactly: soft value iteration,
//!   latent-conditioned policies under a discriminator prior, the coupled
//!   Bayes-consistent system, and the correction-table recursions that relate
//!   the per-latent soft Q functions to the unconditioned one.
//! * [`agents`] trains SAC, MEDE and DIAYN agents on continuous tasks from
//!   [`envs`], built on the small hand-differentiated networks in [`nn`].

pub mod agents;
pub mod envs;
pub mod mdp;
pub mod nn;
pub mod rng;
pub mod tabular;

pub use mdp::{DiscreteMdp, LatentId, MdpError, Trajectory, Transition};
