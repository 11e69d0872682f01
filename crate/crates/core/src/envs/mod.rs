//! Environments: the 2-D multigoal navigation task and the seeded random
//! finite-MDP generator used by the tabular checks.

mod gridworld;
mod multigoal;

pub use gridworld::{make_random_mdp, GridworldSpec};
pub use multigoal::{MultigoalSpec, MultigoalState, StepOutcome};
