//! Correction tables relating Q*_z to the unconditioned soft Q function
//! (soft backup, S*) and to the soft Q function of the mixture policy
//! (linear backup, M*).

use ndarray::{Array1, Array2, ArrayView1};

use super::{weighted_logsumexp, Result, SolverOptions, TabularError, TabularPolicy};
use crate::mdp::DiscreteMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionKind {
    /// S(s,a) = γ E_{s'}[−log p(z|s') + log E_{a'~π_/z} exp S(s',a')].
    SStar,
    /// M(s,a) = γ E_{s'}[−log p(z|s') + E_{a'~π_/z} M(s',a')].
    MStar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionTable {
    pub table: Array2<f64>,
    pub kind: CorrectionKind,
    pub iterations: usize,
    pub residual: f64,
}

/// One latent's correction recursion with its inputs bound.
pub struct CorrectionRecursion<'a> {
    mdp: &'a DiscreteMdp,
    mixture: &'a TabularPolicy,
    /// −log p(z|s), floored.
    surprise: Array1<f64>,
    kind: CorrectionKind,
}

impl<'a> CorrectionRecursion<'a> {
    pub fn new(
        mdp: &'a DiscreteMdp,
        mixture: &'a TabularPolicy,
        state_posterior: ArrayView1<f64>,
        kind: CorrectionKind,
        floor: f64,
    ) -> Result<Self> {
        if mixture.probs().dim() != (mdp.n_states(), mdp.n_actions()) || state_posterior.len() != mdp.n_states() {
            return Err(TabularError::InvalidArgument("correction inputs do not match the MDP".into()));
        }
        let surprise = state_posterior.mapv(|p| -(p.max(floor)).ln());
        Ok(Self { mdp, mixture, surprise, kind })
    }

    /// Applies one backup to `table`.
    pub fn step(&self, table: &Array2<f64>) -> Array2<f64> {
        let (ns, na) = (self.mdp.n_states(), self.mdp.n_actions());
        let next_value: Vec<f64> = (0..ns)
            .map(|s| {
                let inner = match self.kind {
                    CorrectionKind::SStar => weighted_logsumexp(table.row(s), self.mixture.row(s)),
                    CorrectionKind::MStar => self.mixture.row(s).dot(&table.row(s)),
                };
                self.surprise[s] + inner
            })
            .collect();
        let gamma = self.mdp.gamma();
        Array2::from_shape_fn((ns, na), |(s, a)| gamma * self.mdp.expect_next(s, a, &next_value))
    }
}

/// Iterates the chosen recursion from the zero table to its fixed point.
pub fn correction_fixed_point(
    mdp: &DiscreteMdp,
    mixture: &TabularPolicy,
    state_posterior: ArrayView1<f64>,
    kind: CorrectionKind,
    floor: f64,
    opts: SolverOptions,
) -> Result<CorrectionTable> {
    let rec = CorrectionRecursion::new(mdp, mixture, state_posterior, kind, floor)?;
    let mut table = Array2::zeros((mdp.n_states(), mdp.n_actions()));
    let mut history = Vec::new();
    for it in 1..=opts.max_iters {
        let next = rec.step(&table);
        let residual = next.iter().zip(table.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        table = next;
        history.push(residual);
        if residual <= opts.tol {
            return Ok(CorrectionTable { table, kind, iterations: it, residual });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(TabularError::NotConverged {
        what: "correction recursion",
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::INFINITY),
        history,
    })
}
