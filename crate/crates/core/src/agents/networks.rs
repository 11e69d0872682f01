use ndarray::{s, Array1, Array2, ArrayView2};

use super::{Algo, TrainConfig};
use crate::nn::{Adam, AdamConfig, Mlp, Real};
use crate::rng::{self, stream};

/// All learnable functions of an agent.
///
/// `disc_sa` sees (s, a) and `disc_s` sees s. MEDE optimizes against
/// `disc_sa`, DIAYN against `disc_s`; the other one is the logging
/// discriminator. Both are absent with a single latent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNetworks<F> {
    pub algo: Algo,
    pub state_dim: usize,
    pub action_dim: usize,
    pub cardinality: usize,
    /// Outputs [μ, raw log σ].
    pub policy: Mlp<F>,
    pub critics: Vec<Mlp<F>>,
    pub target_critics: Vec<Mlp<F>>,
    pub disc_sa: Option<Mlp<F>>,
    pub disc_s: Option<Mlp<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers<F> {
    pub policy: Adam<F>,
    pub critics: Vec<Adam<F>>,
    pub disc_sa: Option<Adam<F>>,
    pub disc_s: Option<Adam<F>>,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

impl<F: Real> AgentNetworks<F> {
    /// Seeded initialization; each network family draws from its own stream.
    pub fn new(config: &TrainConfig, state_dim: usize, action_dim: usize) -> Self {
        let a = &config.agent;
        let nz = config.cardinality();
        let mut pr = rng::split(config.seed, stream::POLICY_INIT);
        let policy = Mlp::new(&widths(state_dim + nz, &a.hidden, 2 * action_dim), &mut pr);
        let mut cr = rng::split(config.seed, stream::CRITIC_INIT);
        let n_critics = if a.twin_critics { 2 } else { 1 };
        let critics: Vec<Mlp<F>> =
            (0..n_critics).map(|_| Mlp::new(&widths(state_dim + action_dim + nz, &a.hidden, 1), &mut cr)).collect();
        let (disc_sa, disc_s) = if config.has_discriminators() {
            let mut dr = rng::split(config.seed, stream::DISC_INIT);
            let mut ar = rng::split(config.seed, stream::AUX_DISC_INIT);
            let sa_widths = widths(state_dim + action_dim, &a.disc_hidden, nz);
            let s_widths = widths(state_dim, &a.disc_hidden, nz);
            // The objective discriminator always draws from DISC_INIT.
            match config.algo {
                Algo::Diayn => (Some(Mlp::new(&sa_widths, &mut ar)), Some(Mlp::new(&s_widths, &mut dr))),
                _ => (Some(Mlp::new(&sa_widths, &mut dr)), Some(Mlp::new(&s_widths, &mut ar))),
            }
        } else {
            (None, None)
        };
        Self {
            algo: config.algo,
            state_dim,
            action_dim,
            cardinality: nz,
            policy,
            target_critics: critics.clone(),
            critics,
            disc_sa,
            disc_s,
        }
    }

    pub fn one_hot(&self, z: &[usize]) -> Array2<F> {
        let mut out = Array2::zeros((z.len(), self.cardinality));
        for (i, &k) in z.iter().enumerate() {
            out[[i, k]] = F::one();
        }
        out
    }

    /// [s, onehot(z)].
    pub fn policy_input(&self, states: ArrayView2<F>, z: &[usize]) -> Array2<F> {
        self.with_one_hot(&[states], z)
    }

    /// [s, a, onehot(z)].
    pub fn critic_input(&self, states: ArrayView2<F>, actions: ArrayView2<F>, z: &[usize]) -> Array2<F> {
        self.with_one_hot(&[states.reborrow(), actions.reborrow()], z)
    }

    /// [s, a].
    pub fn sa_input(states: ArrayView2<F>, actions: ArrayView2<F>) -> Array2<F> {
        let mut out = Array2::zeros((states.nrows(), states.ncols() + actions.ncols()));
        out.slice_mut(s![.., ..states.ncols()]).assign(&states);
        out.slice_mut(s![.., states.ncols()..]).assign(&actions);
        out
    }

    fn with_one_hot(&self, parts: &[ArrayView2<F>], z: &[usize]) -> Array2<F> {
        let width: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut out = Array2::zeros((z.len(), width + self.cardinality));
        let mut col = 0;
        for p in parts {
            assert_eq!(p.nrows(), z.len(), "row counts agree");
            out.slice_mut(s![.., col..col + p.ncols()]).assign(p);
            col += p.ncols();
        }
        for (i, &k) in z.iter().enumerate() {
            out[[i, width + k]] = F::one();
        }
        out
    }

    /// The discriminator whose log-probability enters the objective.
    pub fn objective_disc(&self) -> Option<&Mlp<F>> {
        match self.algo {
            Algo::Mede => self.disc_sa.as_ref(),
            Algo::Diayn => self.disc_s.as_ref(),
            Algo::Sac => None,
        }
    }

    /// min over critics (or target critics) of Q(s, a, z).
    pub fn min_q(&self, states: ArrayView2<F>, actions: ArrayView2<F>, z: &[usize], target: bool) -> Array1<F> {
        let input = self.critic_input(states, actions, z);
        let nets = if target { &self.target_critics } else { &self.critics };
        let mut out: Option<Array1<F>> = None;
        for net in nets {
            let q = net.forward_batch(input.view()).expect("critic input width").column(0).to_owned();
            out = Some(match out {
                None => q,
                Some(m) => ndarray::Zip::from(&m).and(&q).map_collect(|&a, &b| a.min(b)),
            });
        }
        out.expect("at least one critic")
    }

    pub fn polyak_update(&mut self, tau: F) {
        for (t, c) in self.target_critics.iter_mut().zip(&self.critics) {
            t.polyak_from(c, tau);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.policy.is_finite()
            && self.critics.iter().chain(&self.target_critics).all(Mlp::is_finite)
            && self.disc_sa.as_ref().is_none_or(Mlp::is_finite)
            && self.disc_s.as_ref().is_none_or(Mlp::is_finite)
    }
}

impl<F: Real> Optimizers<F> {
    pub fn new(config: &TrainConfig, nets: &AgentNetworks<F>) -> Self {
        let a = &config.agent;
        let cfg = |lr| AdamConfig { lr, ..AdamConfig::default() };
        Self {
            policy: Adam::for_net(cfg(a.actor_lr), &nets.policy),
            critics: nets.critics.iter().map(|c| Adam::for_net(cfg(a.critic_lr), c)).collect(),
            disc_sa: nets.disc_sa.as_ref().map(|d| Adam::for_net(cfg(a.disc_lr), d)),
            disc_s: nets.disc_s.as_ref().map(|d| Adam::for_net(cfg(a.disc_lr), d)),
        }
    }
}
