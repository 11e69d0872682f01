use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::mdp::{DiscreteMdp, MdpError};
use crate::rng;

/// Parameters of a random finite MDP. Rows of P are symmetric-Dirichlet
/// draws, rewards are uniform in `reward_range`, and episodes start in state 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridworldSpec {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub concentration: f64,
    pub reward_range: (f64, f64),
    pub gamma: f64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self { seed: 0, n_states: 6, n_actions: 3, concentration: 1.0, reward_range: (0.0, 1.0), gamma: 0.9 }
    }
}

pub fn make_random_mdp(spec: &GridworldSpec) -> Result<DiscreteMdp, MdpError> {
    let (ns, na) = (spec.n_states, spec.n_actions);
    if ns < 2 || na < 2 {
        return Err(MdpError::Shape(format!("random MDP needs >= 2 states and actions, got {ns}x{na}")));
    }
    if !(spec.concentration > 0.0) {
        return Err(MdpError::Shape(format!("concentration {} must be positive", spec.concentration)));
    }
    let (lo, hi) = spec.reward_range;
    if !(lo <= hi) {
        return Err(MdpError::Shape(format!("empty reward range ({lo}, {hi})")));
    }
    let mut r = rng::split(spec.seed, 0);
    let gamma_dist = Gamma::new(spec.concentration, 1.0).expect("positive shape");
    let mut p = Array3::zeros((ns, na, ns));
    for s in 0..ns {
        for a in 0..na {
            let draws: Vec<f64> = (0..ns).map(|_| gamma_dist.sample(&mut r)).collect();
            let total: f64 = draws.iter().sum();
            if total > 0.0 && total.is_finite() {
                for (s2, d) in draws.iter().enumerate() {
                    p[[s, a, s2]] = d / total;
                }
            } else {
                // Every component underflowed: the Dirichlet limit is a vertex.
                p[[s, a, r.random_range(0..ns)]] = 1.0;
            }
        }
    }
    let reward = Array2::from_shape_fn((ns, na), |_| if hi > lo { r.random_range(lo..hi) } else { lo });
    let mut initial = Array1::zeros(ns);
    initial[0] = 1.0;
    DiscreteMdp::new(p, reward, spec.gamma, initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let spec = GridworldSpec { seed: 42, ..Default::default() };
        assert_eq!(make_random_mdp(&spec).unwrap(), make_random_mdp(&spec).unwrap());
        let other = GridworldSpec { seed: 43, ..Default::default() };
        assert_ne!(make_random_mdp(&spec).unwrap(), make_random_mdp(&other).unwrap());
    }

    #[test]
    fn rows_normalized() {
        for seed in 0..20 {
            let mdp = make_random_mdp(&GridworldSpec { seed, n_states: 7, n_actions: 4, ..Default::default() }).unwrap();
            for s in 0..7 {
                for a in 0..4 {
                    let sum: f64 = (0..7).map(|s2| mdp.transition()[[s, a, s2]]).sum();
                    assert!((sum - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn small_concentration_is_near_deterministic() {
        let (mut peaked, mut rows) = (0, 0);
        for seed in 0..100 {
            let spec = GridworldSpec { seed, concentration: 0.05, ..Default::default() };
            let mdp = make_random_mdp(&spec).unwrap();
            for s in 0..spec.n_states {
                for a in 0..spec.n_actions {
                    let max = (0..spec.n_states).map(|s2| mdp.transition()[[s, a, s2]]).fold(0.0, f64::max);
                    rows += 1;
                    if max >= 0.9 {
                        peaked += 1;
                    }
                }
            }
        }
        assert!(peaked * 2 >= rows, "{peaked}/{rows}");
    }

    #[test]
    fn rejects_tiny_models() {
        assert!(make_random_mdp(&GridworldSpec { n_states: 1, ..Default::default() }).is_err());
    }
}
