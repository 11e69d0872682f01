//! The three learning objectives with hand-derived gradients. Every function
//! takes its Gaussian noise explicitly so results are reproducible and
//! finite-difference checkable.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{AgentNetworks, Algo, Batch, TrainConfig};
use crate::nn::{gaussian_rsample, log_softmax_rows, softmax_cross_entropy_batch, BackwardMode, GradBundle, Mlp, Real};

/// Scalar coefficients of the objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams<F> {
    pub algo: Algo,
    /// Weight of −log π.
    pub alpha: F,
    /// Weight of log q(z|·).
    pub disc_coef: F,
    pub gamma: F,
    pub reward_scale: F,
}

impl<F: Real> LossParams<F> {
    pub fn from_config(config: &TrainConfig) -> Self {
        let a = &config.agent;
        Self {
            algo: config.algo,
            alpha: F::lit(a.alpha),
            disc_coef: F::lit(if a.temperature_scales_discriminator { a.alpha } else { 1.0 }),
            gamma: F::lit(a.gamma),
            reward_scale: F::lit(a.reward_scale),
        }
    }
}

fn mean<F: Real>(x: ArrayView1<F>) -> F {
    x.iter().fold(F::zero(), |s, &v| s + v) / F::lit(x.len() as f64)
}

/// log q(z_i | x_i) for each row.
fn log_q<F: Real>(disc: &Mlp<F>, input: ArrayView2<F>, z: &[usize]) -> Array1<F> {
    let logits = disc.forward_batch(input).expect("discriminator input width");
    let lp = log_softmax_rows(logits.view());
    Array1::from_shape_fn(z.len(), |i| lp[[i, z[i]]])
}

/// r + coef · log softmax(logits)[z].
pub fn diayn_augmented_reward(reward: f64, logits: ArrayView1<f64>, z: usize, coef: f64) -> f64 {
    let lp = log_softmax_rows(logits.insert_axis(Axis(0)));
    reward + coef * lp[[0, z]]
}

/// Soft state value V(s′) for each row, estimated with one reparameterized
/// action per row from the target critics.
pub fn value_estimate<F: Real>(
    nets: &AgentNetworks<F>,
    p: &LossParams<F>,
    states: ArrayView2<F>,
    z: &[usize],
    noise: ArrayView2<F>,
) -> Array1<F> {
    let ad = nets.action_dim;
    let out = nets.policy.forward_batch(nets.policy_input(states, z).view()).expect("policy input width");
    let head = gaussian_rsample(out.slice(s![.., ..ad]), out.slice(s![.., ad..]), noise);
    let q = nets.min_q(states, head.action.view(), z, true);
    let mut v = q - &(&head.log_prob * p.alpha);
    if p.algo == Algo::Mede {
        if let Some(disc) = nets.objective_disc() {
            let input = AgentNetworks::sa_input(states, head.action.view());
            v = v + &(log_q(disc, input.view(), z) * p.disc_coef);
        }
    }
    v
}

#[derive(Debug, Clone)]
pub struct CriticLoss<F> {
    /// Σ over critics of mean ½(Q_i − y)².
    pub loss: F,
    pub grads: Vec<GradBundle<F>>,
    pub targets: Array1<F>,
}

/// Soft Bellman residual of every critic against one shared constant target.
pub fn critic_loss<F: Real>(
    nets: &AgentNetworks<F>,
    p: &LossParams<F>,
    batch: &Batch<F>,
    next_noise: ArrayView2<F>,
) -> CriticLoss<F> {
    let n = F::lit(batch.z.len() as f64);
    let mut reward = batch.rewards.clone();
    if p.algo == Algo::Diayn {
        if let Some(disc) = nets.objective_disc() {
            reward = reward + &(log_q(disc, batch.states.view(), &batch.z) * p.disc_coef);
        }
    }
    let v = value_estimate(nets, p, batch.next_states.view(), &batch.z, next_noise);
    let not_done = batch.dones.mapv(|d| F::one() - d);
    let targets = reward * p.reward_scale + &(not_done * &v * p.gamma);

    let input = nets.critic_input(batch.states.view(), batch.actions.view(), &batch.z);
    let mut loss = F::zero();
    let mut grads = Vec::with_capacity(nets.critics.len());
    for critic in &nets.critics {
        let (q, cache) = critic.forward_cached(input.view()).expect("critic input width");
        let diff = &q.column(0) - &targets;
        loss += diff.iter().fold(F::zero(), |s, &d| s + F::lit(0.5) * d * d) / n;
        let upstream = (diff / n).insert_axis(Axis(1));
        grads.push(critic.backward(&cache, upstream.view(), BackwardMode::PARAMS));
    }
    CriticLoss { loss, grads, targets }
}

#[derive(Debug, Clone)]
pub struct ActorLoss<F> {
    pub loss: F,
    pub grad: GradBundle<F>,
    pub mean_log_prob: F,
}

/// mean(α log π(a|s,z) − β log q(z|s,a) − min_i Q_i(s,a,z)) at a = f(ε; s, z),
/// with the discriminator term present for MEDE only. Gradients reach the
/// policy through a (critics and discriminator are differentiated with
/// respect to their inputs only) and through log π directly.
pub fn actor_loss<F: Real>(
    nets: &AgentNetworks<F>,
    p: &LossParams<F>,
    states: ArrayView2<F>,
    z: &[usize],
    noise: ArrayView2<F>,
) -> ActorLoss<F> {
    let b = z.len();
    let n = F::lit(b as f64);
    let (sd, ad) = (nets.state_dim, nets.action_dim);
    let (out, pcache) = nets.policy.forward_cached(nets.policy_input(states, z).view()).expect("policy input width");
    let head = gaussian_rsample(out.slice(s![.., ..ad]), out.slice(s![.., ad..]), noise);

    let cin = nets.critic_input(states, head.action.view(), z);
    let mut qs = Vec::with_capacity(nets.critics.len());
    for critic in &nets.critics {
        qs.push(critic.forward_cached(cin.view()).expect("critic input width"));
    }
    // Index of the smaller critic per row; ties go to the first.
    let pick: Vec<usize> = (0..b)
        .map(|i| (1..qs.len()).fold(0, |best, k| if qs[k].0[[i, 0]] < qs[best].0[[i, 0]] { k } else { best }))
        .collect();
    let mut grad_action = Array2::<F>::zeros((b, ad));
    let mut q_sum = F::zero();
    for (k, (critic, (q, cache))) in nets.critics.iter().zip(&qs).enumerate() {
        let mut upstream = Array2::<F>::zeros((b, 1));
        for i in 0..b {
            if pick[i] == k {
                upstream[[i, 0]] = -F::one() / n;
                q_sum += q[[i, 0]];
            }
        }
        let g = critic.backward(cache, upstream.view(), BackwardMode::INPUT);
        grad_action += &g.input.expect("input gradient requested").slice(s![.., sd..sd + ad]);
    }

    let mut disc_sum = F::zero();
    if p.algo == Algo::Mede {
        if let Some(disc) = nets.objective_disc() {
            let din = AgentNetworks::sa_input(states, head.action.view());
            let (logits, dcache) = disc.forward_cached(din.view()).expect("discriminator input width");
            let ce = softmax_cross_entropy_batch(logits.view(), z);
            // −β log q = β · cross-entropy.
            disc_sum = ce.losses.iter().fold(F::zero(), |s, &l| s + l) * p.disc_coef;
            let upstream = ce.grad * (p.disc_coef / n);
            let g = disc.backward(&dcache, upstream.view(), BackwardMode::INPUT);
            grad_action += &g.input.expect("input gradient requested").slice(s![.., sd..sd + ad]);
        }
    }

    let lp_sum = head.log_prob.iter().fold(F::zero(), |s, &x| s + x);
    let loss = (p.alpha * lp_sum + disc_sum - q_sum) / n;
    let grad_lp = Array1::from_elem(b, p.alpha / n);
    let hg = head.backward(grad_action.view(), grad_lp.view());
    let upstream = ndarray::concatenate(Axis(1), &[hg.mean.view(), hg.log_std.view()]).expect("head widths");
    let grad = nets.policy.backward(&pcache, upstream.view(), BackwardMode::PARAMS);
    ActorLoss { loss, grad, mean_log_prob: lp_sum / n }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLoss<F> {
    /// Mean cross-entropy.
    pub loss: F,
    pub grad: GradBundle<F>,
    /// Mean log q(z|x) = −loss.
    pub mean_log_q: F,
}

pub fn discriminator_loss<F: Real>(disc: &Mlp<F>, inputs: ArrayView2<F>, z: &[usize]) -> DiscriminatorLoss<F> {
    let n = F::lit(z.len() as f64);
    let (logits, cache) = disc.forward_cached(inputs).expect("discriminator input width");
    let ce = softmax_cross_entropy_batch(logits.view(), z);
    let loss = mean(ce.losses.view());
    let grad = disc.backward(&cache, (ce.grad / n).view(), BackwardMode::PARAMS);
    DiscriminatorLoss { loss, grad, mean_log_q: -loss }
}
