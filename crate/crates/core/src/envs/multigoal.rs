use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Point-mass navigation in the plane; an episode ends within `threshold` of
/// any goal or after `max_steps` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultigoalSpec {
    pub goals: Vec<[f64; 2]>,
    pub threshold: f64,
    /// Per-component clamp on the displacement.
    pub action_bound: f64,
    /// Standard deviation of the Gaussian position noise.
    pub noise: f64,
    pub max_steps: usize,
    pub start: [f64; 2],
    pub reward_scale: f64,
    /// Optional quadratic action penalty; off by default.
    pub action_cost: f64,
}

impl Default for MultigoalSpec {
    fn default() -> Self {
        Self::four_goals()
    }
}

impl MultigoalSpec {
    /// Four symmetric goals around the origin.
    pub fn four_goals() -> Self {
        Self {
            goals: vec![[5.0, 0.0], [-5.0, 0.0], [0.0, 5.0], [0.0, -5.0]],
            threshold: 1.0,
            action_bound: 1.0,
            noise: 0.05,
            max_steps: 30,
            start: [0.0, 0.0],
            reward_scale: 1.0,
            action_cost: 0.0,
        }
    }

    /// Two unequal goals; the south-west one is closer to the start.
    pub fn two_goals() -> Self {
        Self { goals: vec![[-3.0, -3.0], [4.0, 4.0]], ..Self::four_goals() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.goals.is_empty() {
            return Err("multigoal env needs at least one goal".into());
        }
        if !(self.threshold > 0.0) {
            return Err(format!("goal threshold {} must be positive", self.threshold));
        }
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if !(self.action_bound > 0.0) || !(self.noise >= 0.0) {
            return Err("action_bound must be positive and noise non-negative".into());
        }
        Ok(())
    }

    pub const fn state_dim(&self) -> usize {
        2
    }

    pub const fn action_dim(&self) -> usize {
        2
    }

    pub fn reset(&self) -> MultigoalState {
        MultigoalState { position: self.start, steps: 0 }
    }

    /// Distance to, and index of, the nearest goal.
    pub fn nearest_goal(&self, p: [f64; 2]) -> (f64, usize) {
        self.goals
            .iter()
            .enumerate()
            .map(|(i, g)| (((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt(), i))
            .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &MultigoalState, action: [f64; 2], rng: &mut R) -> StepOutcome {
        let b = self.action_bound;
        let act = [action[0].clamp(-b, b), action[1].clamp(-b, b)];
        let mut position = [state.position[0] + act[0], state.position[1] + act[1]];
        if self.noise > 0.0 {
            for p in position.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *p += self.noise * n;
            }
        }
        let (dist, goal) = self.nearest_goal(position);
        let reward = -self.reward_scale * dist - self.action_cost * (act[0] * act[0] + act[1] * act[1]);
        let steps = state.steps + 1;
        let reached = dist <= self.threshold;
        StepOutcome {
            state: MultigoalState { position, steps },
            reward,
            done: reached || steps >= self.max_steps,
            goal: reached.then_some(goal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultigoalState {
    pub position: [f64; 2],
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: MultigoalState,
    pub reward: f64,
    /// Goal reached or step budget exhausted.
    pub done: bool,
    /// Goal reached this step, if any.
    pub goal: Option<usize>,
}

impl StepOutcome {
    /// Episode ended at a goal rather than by the step budget.
    pub fn terminal(&self) -> bool {
        self.goal.is_some()
    }
}
