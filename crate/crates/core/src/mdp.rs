//! Shared MDP vocabulary: finite models, transitions, trajectories and
//! returns.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use thiserror::Error;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("discount {0} outside its admissible range")]
    InvalidDiscount(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row P(.|s={state}, a={action}) is not a distribution (sum {sum})")]
    BadTransitionRow { state: usize, action: usize, sum: f64 },
    #[error("initial distribution is not a distribution (sum {0})")]
    BadInitial(f64),
    #[error("index out of range: {what} {index} >= {bound}")]
    OutOfRange { what: &'static str, index: usize, bound: usize },
    #[error("latent index {index} >= cardinality {cardinality}")]
    BadLatent { index: usize, cardinality: usize },
}

/// Latent skill index `z` drawn from a uniform prior over `cardinality`
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatentId {
    index: usize,
    cardinality: usize,
}

impl LatentId {
    pub fn new(index: usize, cardinality: usize) -> Result<Self, MdpError> {
        if index >= cardinality {
            return Err(MdpError::BadLatent { index, cardinality });
        }
        Ok(Self { index, cardinality })
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn cardinality(self) -> usize {
        self.cardinality
    }

    /// Uniform prior probability p(z).
    pub fn prior(self) -> f64 {
        1.0 / self.cardinality as f64
    }

    pub fn sample<R: Rng + ?Sized>(cardinality: usize, rng: &mut R) -> Self {
        Self { index: rng.random_range(0..cardinality), cardinality }
    }
}

/// One step of experience. `S`/`A` are indices for finite models and
/// vectors for continuous tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub next_state: S,
    pub done: bool,
    pub latent: LatentId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S, A> {
    pub steps: Vec<Transition<S, A>>,
    pub terminal: bool,
}

impl<S, A> Default for Trajectory<S, A> {
    fn default() -> Self {
        Self { steps: Vec::new(), terminal: false }
    }
}

impl<S: PartialEq, A> Trajectory<S, A> {
    /// True when every step starts where the previous one ended.
    pub fn is_chained(&self) -> bool {
        self.steps.windows(2).all(|w| w[0].next_state == w[1].state)
    }
}

impl<S, A> Trajectory<S, A> {
    pub fn push(&mut self, t: Transition<S, A>) {
        self.terminal = t.done;
        self.steps.push(t);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|t| t.reward)
    }
}

/// Σ_t γ^t r_t over the trajectory.
pub fn discounted_return<S, A>(traj: &Trajectory<S, A>, gamma: f64) -> Result<f64, MdpError> {
    if traj.is_empty() {
        return Err(MdpError::EmptyTrajectory);
    }
    discounted_sum(traj.rewards(), gamma)
}

pub(crate) fn discounted_sum(rewards: impl Iterator<Item = f64>, gamma: f64) -> Result<f64, MdpError> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(MdpError::InvalidDiscount(gamma));
    }
    let mut total = 0.0;
    let mut weight = 1.0;
    for r in rewards {
        total += weight * r;
        weight *= gamma;
    }
    Ok(total)
}

/// Finite MDP with expected rewards R(s,a), used by the exact solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMdp {
    transition: Array3<f64>,
    reward: Array2<f64>,
    gamma: f64,
    initial: Array1<f64>,
}

impl DiscreteMdp {
    /// `transition[[s, a, s']] = P(s'|s,a)`. The discount may be 0 (bandit
    /// limit) but must stay below 1.
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        gamma: f64,
        initial: Array1<f64>,
    ) -> Result<Self, MdpError> {
        let (ns, na, ns2) = transition.dim();
        if ns == 0 || na == 0 || ns != ns2 {
            return Err(MdpError::Shape(format!("transition tensor {:?}", transition.dim())));
        }
        if reward.dim() != (ns, na) {
            return Err(MdpError::Shape(format!("reward {:?}, expected ({ns}, {na})", reward.dim())));
        }
        if initial.len() != ns {
            return Err(MdpError::Shape(format!("initial distribution of length {}", initial.len())));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::InvalidDiscount(gamma));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = transition.slice(ndarray::s![s, a, ..]);
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > PROB_TOL || row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                    return Err(MdpError::BadTransitionRow { state: s, action: a, sum });
                }
            }
        }
        let isum = initial.sum();
        if (isum - 1.0).abs() > PROB_TOL || initial.iter().any(|&p| p < 0.0) {
            return Err(MdpError::BadInitial(isum));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(MdpError::Shape("non-finite reward".into()));
        }
        Ok(Self { transition, reward, gamma, initial })
    }

    pub fn n_states(&self) -> usize {
        self.reward.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.reward.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    /// Same model with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self, MdpError> {
        Self::new(self.transition.clone(), self.reward.clone(), gamma, self.initial.clone())
    }

    /// E_{s'~P(.|s,a)}[f(s')].
    #[inline]
    pub fn expect_next(&self, s: usize, a: usize, f: &[f64]) -> f64 {
        let row = self.transition.slice(ndarray::s![s, a, ..]);
        row.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// Draws s' ~ P(.|s,a) and returns it with R(s,a).
    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        s: usize,
        a: usize,
        rng: &mut R,
    ) -> Result<(usize, f64), MdpError> {
        self.check_indices(s, a)?;
        let row = self.transition.slice(ndarray::s![s, a, ..]);
        let next = sample_categorical(row.iter().copied(), rng);
        Ok((next, self.reward[[s, a]]))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(self.initial.iter().copied(), rng)
    }

    fn check_indices(&self, s: usize, a: usize) -> Result<(), MdpError> {
        if s >= self.n_states() {
            return Err(MdpError::OutOfRange { what: "state", index: s, bound: self.n_states() });
        }
        if a >= self.n_actions() {
            return Err(MdpError::OutOfRange { what: "action", index: a, bound: self.n_actions() });
        }
        Ok(())
    }
}

/// Inverse-CDF draw from a probability vector. Mass lost to rounding goes to
/// the last index with positive probability.
pub fn sample_categorical<R: Rng + ?Sized>(probs: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{array, Array};
    use proptest::prelude::*;

    fn traj(rewards: &[f64]) -> Trajectory<usize, usize> {
        let z = LatentId::new(0, 1).unwrap();
        let mut t = Trajectory::default();
        for (i, &r) in rewards.iter().enumerate() {
            t.push(Transition { state: i, action: 0, reward: r, next_state: i + 1, done: false, latent: z });
        }
        t
    }

    fn coin_mdp() -> DiscreteMdp {
        let mut p = Array3::zeros((2, 2, 2));
        p[[0, 0, 0]] = 0.5;
        p[[0, 0, 1]] = 0.5;
        p[[0, 1, 1]] = 1.0;
        p[[1, 0, 1]] = 1.0;
        p[[1, 1, 0]] = 1.0;
        DiscreteMdp::new(p, array![[1.0, 2.0], [3.0, 4.0]], 0.9, array![1.0, 0.0]).unwrap()
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&traj(&[1.0, 1.0, 1.0]), 1.0).unwrap(), 3.0);
        assert_eq!(discounted_return(&traj(&[1.0, 0.0, 0.0]), 0.5).unwrap(), 1.0);
        assert_eq!(discounted_return(&traj(&[1.0, 1.0]), 0.5).unwrap(), 1.5);
        assert_eq!(discounted_return(&traj(&[]), 0.5), Err(MdpError::EmptyTrajectory));
        assert!(discounted_return(&traj(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn chained_trajectories() {
        let t = traj(&[1.0, 2.0, 3.0]);
        assert!(t.is_chained());
        let mut broken = t.clone();
        broken.steps[1].state = 7;
        assert!(!broken.is_chained());
    }

    #[test]
    fn deterministic_row_always_returns_target() {
        let mdp = coin_mdp();
        let mut r = rng::split(1, 0);
        for _ in 0..100 {
            assert_eq!(mdp.sample_transition(0, 1, &mut r).unwrap(), (1, 2.0));
        }
    }

    #[test]
    fn fair_row_frequency() {
        let mdp = coin_mdp();
        let mut r = rng::split(2, 0);
        let n = 100_000;
        let zeros = (0..n).filter(|_| mdp.sample_transition(0, 0, &mut r).unwrap().0 == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((0.49..=0.51).contains(&freq), "{freq}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mdp = coin_mdp();
        let draw = |seed| {
            let mut r = rng::split(seed, 0);
            (0..50).map(|_| mdp.sample_transition(0, 0, &mut r).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn out_of_range_indices() {
        let mdp = coin_mdp();
        let mut r = rng::split(0, 0);
        assert!(mdp.sample_transition(2, 0, &mut r).is_err());
        assert!(mdp.sample_transition(0, 2, &mut r).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let bad = Array::from_elem((1, 1, 1), 0.9);
        assert!(matches!(
            DiscreteMdp::new(bad, array![[0.0]], 0.5, array![1.0]),
            Err(MdpError::BadTransitionRow { .. })
        ));
        let ok = Array::from_elem((1, 1, 1), 1.0);
        assert!(DiscreteMdp::new(ok.clone(), array![[0.0]], 1.0, array![1.0]).is_err());
        assert!(DiscreteMdp::new(ok.clone(), array![[0.0]], 0.5, array![0.5]).is_err());
        assert!(DiscreteMdp::new(ok, array![[0.0]], 0.0, array![1.0]).is_ok());
    }

    #[test]
    fn latent_bounds() {
        assert!(LatentId::new(3, 3).is_err());
        let z = LatentId::new(1, 4).unwrap();
        assert_eq!(z.prior(), 0.25);
    }

    proptest! {
        #[test]
        fn return_is_linear_in_rewards(
            rewards in proptest::collection::vec(-10.0f64..10.0, 1..20),
            c in -5.0f64..5.0,
            gamma in 0.01f64..=1.0,
        ) {
            let base = discounted_return(&traj(&rewards), gamma).unwrap();
            let scaled: Vec<f64> = rewards.iter().map(|r| c * r).collect();
            let lhs = discounted_return(&traj(&scaled), gamma).unwrap();
            prop_assert!((lhs - c * base).abs() <= 1e-9 * (1.0 + base.abs() * c.abs()));
        }
    }
}
