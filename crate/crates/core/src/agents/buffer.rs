use ndarray::{Array1, Array2};
use rand::Rng;

use super::AgentError;
use crate::nn::Real;

/// One stored step; `done` marks goal termination only, never truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub z: usize,
}

/// Fixed-capacity ring of transitions stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
    zs: Vec<usize>,
    cursor: usize,
}

/// A training minibatch in network precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub states: Array2<F>,
    pub actions: Array2<F>,
    pub rewards: Array1<F>,
    pub next_states: Array2<F>,
    /// 1 where the transition ended at a goal.
    pub dones: Array1<F>,
    pub z: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            zs: Vec::new(),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.state_dim, self.action_dim)
    }

    /// Index the next push will write.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, t: &StoredTransition) {
        assert_eq!(t.state.len(), self.state_dim);
        assert_eq!(t.next_state.len(), self.state_dim);
        assert_eq!(t.action.len(), self.action_dim);
        let (sd, ad) = (self.state_dim, self.action_dim);
        if self.len() < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.next_states.extend_from_slice(&t.next_state);
            self.rewards.push(t.reward);
            self.dones.push(t.done);
            self.zs.push(t.z);
        } else {
            let i = self.cursor;
            self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.state);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.next_state);
            self.rewards[i] = t.reward;
            self.dones[i] = t.done;
            self.zs[i] = t.z;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> StoredTransition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        StoredTransition {
            state: self.states[i * sd..(i + 1) * sd].to_vec(),
            action: self.actions[i * ad..(i + 1) * ad].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * sd..(i + 1) * sd].to_vec(),
            done: self.dones[i],
            z: self.zs[i],
        }
    }

    /// Storage slots drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>, AgentError> {
        if self.len() < batch_size || batch_size == 0 {
            return Err(AgentError::InsufficientData { size: self.len(), batch: batch_size });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.len())).collect())
    }

    pub fn sample<F: Real, R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch<F>, AgentError> {
        let idx = self.sample_indices(batch_size, rng)?;
        Ok(self.gather(&idx))
    }

    pub fn gather<F: Real>(&self, idx: &[usize]) -> Batch<F> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let b = idx.len();
        let rows = |src: &[f64], d: usize| Array2::from_shape_fn((b, d), |(r, c)| F::lit(src[idx[r] * d + c]));
        Batch {
            states: rows(&self.states, sd),
            actions: rows(&self.actions, ad),
            rewards: Array1::from_shape_fn(b, |r| F::lit(self.rewards[idx[r]])),
            next_states: rows(&self.next_states, sd),
            dones: Array1::from_shape_fn(b, |r| if self.dones[idx[r]] { F::one() } else { F::zero() }),
            z: idx.iter().map(|&i| self.zs[i]).collect(),
        }
    }

    /// Raw columns for serialization: (states, actions, rewards, next_states, dones, zs).
    #[allow(clippy::type_complexity)]
    pub(crate) fn columns(&self) -> (&[f64], &[f64], &[f64], &[f64], &[bool], &[usize]) {
        (&self.states, &self.actions, &self.rewards, &self.next_states, &self.dones, &self.zs)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_columns(
        capacity: usize,
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
        next_states: Vec<f64>,
        dones: Vec<bool>,
        zs: Vec<usize>,
        cursor: usize,
    ) -> Result<Self, AgentError> {
        let n = rewards.len();
        let consistent = n <= capacity
            && states.len() == n * state_dim
            && next_states.len() == n * state_dim
            && actions.len() == n * action_dim
            && dones.len() == n
            && zs.len() == n
            && cursor < capacity
            && (n == capacity || cursor == n);
        if !consistent {
            return Err(AgentError::Checkpoint("inconsistent replay buffer".into()));
        }
        Ok(Self { capacity, state_dim, action_dim, states, actions, rewards, next_states, dones, zs, cursor })
    }
}
