use std::collections::VecDeque;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    actor_loss, critic_loss, discriminator_loss, AgentError, AgentNetworks, Batch, LossParams, Optimizers,
    ReplayBuffer, StoredTransition, TrainConfig,
};
use crate::envs::{MultigoalSpec, MultigoalState};
use crate::nn::{gaussian_rsample, Real};
use crate::rng::{self, stream};

/// Completed-episode returns kept per latent for the running return metrics.
pub(crate) const RETURN_WINDOW: usize = 10;

/// One row of metrics.csv. Loss and discriminator entries are `None` for
/// iterations without gradient steps; returns are `None` before the first
/// completed episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: u64,
    pub env_steps: u64,
    /// Mean of the last completed episode returns, per latent.
    pub returns_per_z: Vec<Option<f64>>,
    pub mean_return: Option<f64>,
    pub max_return: Option<f64>,
    pub mean_log_q_zsa: Option<f64>,
    pub mean_log_p_zs: Option<f64>,
    pub q_loss: Option<f64>,
    pub pi_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub t: usize,
    /// Position before the step.
    pub position: [f64; 2],
    pub action: [f64; 2],
    pub reward: f64,
    pub done: bool,
    pub goal: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LatentEval {
    pub z: usize,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub max_return: f64,
    /// Episodes ending at each goal; the last slot counts budget exhaustion.
    pub goal_histogram: Vec<usize>,
}

impl LatentEval {
    /// Most frequent terminal goal and its share of episodes.
    pub fn modal_goal(&self) -> Option<(usize, f64)> {
        let n: usize = self.goal_histogram.iter().sum();
        let goals = &self.goal_histogram[..self.goal_histogram.len() - 1];
        let (g, &c) = goals.iter().enumerate().max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i)))?;
        (n > 0 && c > 0).then(|| (g, c as f64 / n as f64))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub per_z: Vec<LatentEval>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Streams {
    pub env: rng::Rng,
    pub acting: rng::Rng,
    pub replay: rng::Rng,
    pub noise: rng::Rng,
    pub latent: rng::Rng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Episode {
    pub state: MultigoalState,
    pub z: usize,
    pub ret: f64,
}

#[derive(Default)]
struct Accum {
    n: usize,
    q: f64,
    pi: f64,
    disc: f64,
    log_q_sa: f64,
    log_p_s: f64,
}

/// Full training state: networks, optimizers, replay, random streams and
/// the episode in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<F: Real> {
    pub config: TrainConfig,
    pub env: MultigoalSpec,
    pub nets: AgentNetworks<F>,
    pub opts: Optimizers<F>,
    pub buffer: ReplayBuffer,
    pub(crate) streams: Streams,
    pub(crate) episode: Episode,
    pub(crate) recent: Vec<VecDeque<f64>>,
    pub env_steps: u64,
    pub iteration: u64,
    pub grad_steps: u64,
}

fn noise<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, r: &mut R) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || F::lit(r.sample::<f64, _>(StandardNormal)))
}

impl<F: Real> Trainer<F> {
    pub fn new(config: TrainConfig, env: MultigoalSpec) -> Result<Self, AgentError> {
        let config = config.resolved();
        config.validate()?;
        env.validate().map_err(AgentError::Config)?;
        let (sd, ad) = (env.state_dim(), env.action_dim());
        let nets = AgentNetworks::new(&config, sd, ad);
        let opts = Optimizers::new(&config, &nets);
        let seed = config.seed;
        let mut streams = Streams {
            env: rng::split(seed, stream::ENV),
            acting: rng::split(seed, stream::ACTING),
            replay: rng::split(seed, stream::REPLAY),
            noise: rng::split(seed, stream::LEARNER_NOISE),
            latent: rng::split(seed, stream::LATENT),
        };
        let nz = config.cardinality();
        let z = streams.latent.random_range(0..nz);
        Ok(Self {
            buffer: ReplayBuffer::new(config.agent.capacity, sd, ad),
            episode: Episode { state: env.reset(), z, ret: 0.0 },
            recent: vec![VecDeque::new(); nz],
            config,
            env,
            nets,
            opts,
            streams,
            env_steps: 0,
            iteration: 0,
            grad_steps: 0,
        })
    }

    pub fn cardinality(&self) -> usize {
        self.config.cardinality()
    }

    /// Samples a ~ π(·|s, z) with the given generator.
    pub fn act<R: Rng + ?Sized>(&self, position: [f64; 2], z: usize, r: &mut R) -> [f64; 2] {
        let ad = self.nets.action_dim;
        let state = Array2::from_shape_fn((1, 2), |(_, j)| F::lit(position[j]));
        let out = self.nets.policy.forward_batch(self.nets.policy_input(state.view(), &[z]).view()).expect("policy input");
        let eps: Array2<F> = noise(1, ad, r);
        let head = gaussian_rsample(out.slice(s![.., ..ad]), out.slice(s![.., ad..]), eps.view());
        [head.action[[0, 0]].as_f64(), head.action[[0, 1]].as_f64()]
    }

    fn learning(&self) -> bool {
        self.env_steps >= self.config.agent.warmup_steps as u64 && self.buffer.len() >= self.config.agent.batch_size
    }

    fn env_step(&mut self) {
        let position = self.episode.state.position;
        let z = self.episode.z;
        let action = if self.env_steps < self.config.agent.warmup_steps as u64 {
            let r = &mut self.streams.acting;
            [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]
        } else {
            let mut r = self.streams.acting.clone();
            let a = self.act(position, z, &mut r);
            self.streams.acting = r;
            a
        };
        let out = self.env.step(&self.episode.state, action, &mut self.streams.env);
        self.buffer.push(&StoredTransition {
            state: position.to_vec(),
            action: action.to_vec(),
            reward: out.reward,
            next_state: out.state.position.to_vec(),
            done: out.terminal(),
            z,
        });
        self.episode.ret += out.reward;
        self.env_steps += 1;
        if out.done {
            let window = &mut self.recent[z];
            if window.len() == RETURN_WINDOW {
                window.pop_front();
            }
            window.push_back(self.episode.ret);
            let nz = self.cardinality();
            self.episode = Episode { state: self.env.reset(), z: self.streams.latent.random_range(0..nz), ret: 0.0 };
        } else {
            self.episode.state = out.state;
        }
    }

    fn sample_batch(&mut self) -> Result<Batch<F>, AgentError> {
        self.buffer.sample(self.config.agent.batch_size, &mut self.streams.replay)
    }

    fn non_finite(&self, what: &'static str) -> AgentError {
        AgentError::NonFinite { what, iteration: self.iteration + 1 }
    }

    fn params(&self) -> LossParams<F> {
        LossParams::<F>::from_config(&self.config)
    }

    /// One Adam step on every critic; returns the summed critic loss.
    pub(crate) fn update_critics(&mut self) -> Result<f64, AgentError> {
        let p = self.params();
        let batch = self.sample_batch()?;
        let eps = noise(self.config.agent.batch_size, self.nets.action_dim, &mut self.streams.noise);
        let cl = critic_loss(&self.nets, &p, &batch, eps.view());
        if !cl.loss.is_finite() || !cl.grads.iter().all(|g| g.is_finite()) {
            return Err(self.non_finite("critic loss"));
        }
        for ((net, opt), g) in self.nets.critics.iter_mut().zip(&mut self.opts.critics).zip(&cl.grads) {
            opt.step(net, g);
        }
        Ok(cl.loss.as_f64())
    }

    /// One Adam step on the policy.
    pub(crate) fn update_actor(&mut self) -> Result<f64, AgentError> {
        let p = self.params();
        let batch = self.sample_batch()?;
        let eps = noise(self.config.agent.batch_size, self.nets.action_dim, &mut self.streams.noise);
        let al = actor_loss(&self.nets, &p, batch.states.view(), &batch.z, eps.view());
        if !al.loss.is_finite() || !al.grad.is_finite() {
            return Err(self.non_finite("actor loss"));
        }
        self.opts.policy.step(&mut self.nets.policy, &al.grad);
        Ok(al.loss.as_f64())
    }

    /// One Adam step on both discriminators from a shared batch. Returns
    /// (objective loss, mean log q(z|s,a), mean log p(z|s)), or `None` with
    /// fewer than two latents.
    pub(crate) fn update_discriminators(&mut self) -> Result<Option<(f64, f64, f64)>, AgentError> {
        if !self.config.has_discriminators() {
            return Ok(None);
        }
        let batch = self.sample_batch()?;
        let sa = AgentNetworks::sa_input(batch.states.view(), batch.actions.view());
        let (Some(dsa), Some(ds)) = (self.nets.disc_sa.as_mut(), self.nets.disc_s.as_mut()) else {
            unreachable!("discriminators exist for |Z| >= 2")
        };
        let lsa = discriminator_loss(dsa, sa.view(), &batch.z);
        let ls = discriminator_loss(ds, batch.states.view(), &batch.z);
        if !(lsa.loss.is_finite() && ls.loss.is_finite() && lsa.grad.is_finite() && ls.grad.is_finite()) {
            return Err(self.non_finite("discriminator loss"));
        }
        self.opts.disc_sa.as_mut().expect("optimizer").step(dsa, &lsa.grad);
        self.opts.disc_s.as_mut().expect("optimizer").step(ds, &ls.grad);
        let objective = match self.config.algo {
            super::Algo::Diayn => ls.loss,
            _ => lsa.loss,
        };
        Ok(Some((objective.as_f64(), lsa.mean_log_q.as_f64(), ls.mean_log_q.as_f64())))
    }

    fn gradient_step(&mut self, acc: &mut Accum) -> Result<(), AgentError> {
        let q = self.update_critics()?;
        let pi = self.update_actor()?;
        let (disc, log_q_sa, log_p_s) = self.update_discriminators()?.unwrap_or((0.0, 0.0, 0.0));
        self.nets.polyak_update(F::lit(self.config.agent.tau));
        self.grad_steps += 1;
        acc.n += 1;
        acc.q += q;
        acc.pi += pi;
        acc.disc += disc;
        acc.log_q_sa += log_q_sa;
        acc.log_p_s += log_p_s;
        Ok(())
    }

    /// Collects `steps_per_iteration` environment steps, taking one gradient
    /// step on every network after each once learning has started.
    pub fn train_iteration(&mut self) -> Result<MetricsRow, AgentError> {
        let mut acc = Accum::default();
        for _ in 0..self.config.agent.steps_per_iteration {
            self.env_step();
            if self.learning() {
                self.gradient_step(&mut acc)?;
            }
        }
        self.iteration += 1;
        Ok(self.metrics(&acc))
    }

    fn metrics(&self, acc: &Accum) -> MetricsRow {
        let returns_per_z: Vec<Option<f64>> = self
            .recent
            .iter()
            .map(|w| (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64))
            .collect();
        let seen: Vec<f64> = returns_per_z.iter().flatten().copied().collect();
        let mean_return = (!seen.is_empty()).then(|| seen.iter().sum::<f64>() / seen.len() as f64);
        let max_return = seen.iter().copied().reduce(f64::max);
        let avg = |x: f64| (acc.n > 0).then(|| x / acc.n as f64);
        MetricsRow {
            iter: self.iteration,
            env_steps: self.env_steps,
            returns_per_z,
            mean_return,
            max_return,
            mean_log_q_zsa: avg(acc.log_q_sa),
            mean_log_p_zs: avg(acc.log_p_s),
            q_loss: avg(acc.q),
            pi_loss: avg(acc.pi),
            disc_loss: avg(acc.disc),
            alpha: self.config.agent.alpha,
        }
    }

    /// One stochastic episode of latent `z`.
    pub fn rollout<R: Rng + ?Sized>(&self, z: usize, r: &mut R) -> Vec<PathStep> {
        let mut state = self.env.reset();
        let mut path = Vec::with_capacity(self.env.max_steps);
        loop {
            let action = self.act(state.position, z, r);
            let out = self.env.step(&state, action, r);
            path.push(PathStep { t: state.steps, position: state.position, action, reward: out.reward, done: out.done, goal: out.goal });
            if out.done {
                return path;
            }
            state = out.state;
        }
    }

    /// Undiscounted returns and terminal goals of `episodes_per_z` stochastic
    /// rollouts per latent.
    pub fn evaluate_policies<R: Rng + ?Sized>(&self, episodes_per_z: usize, r: &mut R) -> EvalReport {
        if episodes_per_z == 0 {
            return EvalReport { per_z: Vec::new() };
        }
        let n_goals = self.env.goals.len();
        let per_z = (0..self.cardinality())
            .map(|z| {
                let mut returns = Vec::with_capacity(episodes_per_z);
                let mut goal_histogram = vec![0; n_goals + 1];
                for _ in 0..episodes_per_z {
                    let path = self.rollout(z, r);
                    returns.push(path.iter().map(|p| p.reward).sum());
                    goal_histogram[path.last().and_then(|p| p.goal).unwrap_or(n_goals)] += 1;
                }
                let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
                let max_return = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                LatentEval { z, returns, mean_return, max_return, goal_histogram }
            })
            .collect();
        EvalReport { per_z }
    }

    /// Evaluation with the run's dedicated evaluation stream.
    pub fn evaluate(&self, episodes_per_z: usize) -> EvalReport {
        self.evaluate_policies(episodes_per_z, &mut rng::split(self.config.seed, stream::EVALUATION))
    }

    /// min_i Q_i(s, a, z) for each action row at a fixed state.
    pub fn q_values(&self, position: [f64; 2], z: usize, actions: &Array2<f64>) -> Vec<f64> {
        let n = actions.nrows();
        let states = Array2::from_shape_fn((n, 2), |(_, j)| F::lit(position[j]));
        let acts = actions.mapv(F::lit);
        let zs = vec![z; n];
        self.nets.min_q(states.view(), acts.view(), &zs, false).iter().map(|q| q.as_f64()).collect()
    }
}
