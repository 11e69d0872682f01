//! Off-policy maximum-entropy agents: SAC, MEDE and DIAYN sharing one replay
//! buffer, twin critics with polyak targets, and latent-conditioned networks.

mod buffer;
mod checkpoint;
mod losses;
mod networks;
mod trainer;

pub use buffer::{Batch, ReplayBuffer, StoredTransition};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use losses::{
    actor_loss, critic_loss, diayn_augmented_reward, discriminator_loss, value_estimate, ActorLoss, CriticLoss,
    DiscriminatorLoss, LossParams,
};
pub use networks::{AgentNetworks, Optimizers};
pub use trainer::{EvalReport, LatentEval, MetricsRow, PathStep, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Sac,
    #[default]
    Mede,
    Diayn,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Sac => "sac",
            Algo::Mede => "mede",
            Algo::Diayn => "diayn",
        })
    }
}

/// Floating-point width used for network parameters during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Learning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub z_cardinality: usize,
    /// Temperature α.
    pub alpha: f64,
    pub reward_scale: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub disc_lr: f64,
    /// Polyak rate of the target critics.
    pub tau: f64,
    pub hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub steps_per_iteration: usize,
    /// Uniformly random environment steps before learning starts.
    pub warmup_steps: usize,
    pub twin_critics: bool,
    /// When false, α scales only −log π and the discriminator bonus enters
    /// with weight 1.
    pub temperature_scales_discriminator: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            z_cardinality: 4,
            alpha: 0.3,
            reward_scale: 1.0,
            gamma: 0.99,
            batch_size: 256,
            capacity: 1_000_000,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            disc_lr: 3e-4,
            tau: 0.005,
            hidden: vec![128, 128],
            disc_hidden: vec![256, 256],
            steps_per_iteration: 100,
            warmup_steps: 1000,
            twin_critics: true,
            temperature_scales_discriminator: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algo: Algo,
    pub seed: u64,
    pub iterations: usize,
    pub agent: AgentConfig,
}

impl TrainConfig {
    pub fn new(algo: Algo, seed: u64, iterations: usize, agent: AgentConfig) -> Self {
        Self { algo, seed, iterations, agent }
    }

    /// SAC always runs with a single latent.
    pub fn resolved(mut self) -> Self {
        if self.algo == Algo::Sac {
            self.agent.z_cardinality = 1;
        }
        self
    }

    pub fn cardinality(&self) -> usize {
        if self.algo == Algo::Sac {
            1
        } else {
            self.agent.z_cardinality
        }
    }

    /// Whether discriminators exist at all.
    pub fn has_discriminators(&self) -> bool {
        self.cardinality() >= 2
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let a = &self.agent;
        let bad = |m: String| Err(AgentError::Config(m));
        if a.z_cardinality == 0 {
            return bad("z_cardinality must be at least 1".into());
        }
        if !(a.alpha >= 0.0 && a.alpha.is_finite()) {
            return bad(format!("alpha {} must be non-negative", a.alpha));
        }
        if !(a.reward_scale > 0.0) {
            return bad(format!("reward_scale {} must be positive", a.reward_scale));
        }
        if !(a.gamma >= 0.0 && a.gamma < 1.0) {
            return bad(format!("gamma {} outside [0, 1)", a.gamma));
        }
        if a.batch_size == 0 || a.batch_size > a.capacity {
            return bad(format!("batch_size {} must be in 1..=capacity ({})", a.batch_size, a.capacity));
        }
        if !(a.tau > 0.0 && a.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", a.tau));
        }
        for lr in [a.actor_lr, a.critic_lr, a.disc_lr] {
            if !(lr > 0.0) {
                return bad(format!("learning rate {lr} must be positive"));
            }
        }
        if a.hidden.iter().chain(&a.disc_hidden).any(|&w| w == 0) {
            return bad("hidden widths must be positive".into());
        }
        if a.steps_per_iteration == 0 {
            return bad("steps_per_iteration must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replay buffer holds {size} transitions, cannot sample a batch of {batch}")]
    InsufficientData { size: usize, batch: usize },
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
