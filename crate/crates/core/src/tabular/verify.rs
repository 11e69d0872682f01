//! Numeric residuals of the decomposition identities on a solved system.

use std::collections::HashSet;

use super::{
    correction_fixed_point, soft_policy_evaluation, soft_value_iteration, solve_diverse_system, symmetric_kl_direct,
    symmetric_kl_via_discriminator, CorrectionKind, DiverseOptions, DiverseSystemSolution, PosteriorMode, Prior,
    Result,
};
use crate::mdp::DiscreteMdp;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TheoremReport {
    /// max over states and latent pairs of |direct − discriminator-form| symmetric KL.
    pub thm1_residual: f64,
    /// max |Q*_soft − (Q*_z + S*_z)|.
    pub thm2_residual: f64,
    /// max |Q^{π_/z} − (Q*_z + M*_z)|.
    pub thm3_residual: f64,
    /// max(M*_z − S*_z, 0); zero when the soft correction dominates.
    pub jensen_violation: f64,
    pub bayes_residual: f64,
    pub outer_iterations: usize,
    /// (s,a) entries excluded from the residuals because a floor was binding.
    pub floored_entries: usize,
}

/// Solves the coupled system and measures every identity on the result.
pub fn verify_theorems(
    mdp: &DiscreteMdp,
    cardinality: usize,
    mode: PosteriorMode,
    seed: u64,
    tol: f64,
) -> Result<TheoremReport> {
    let opts = DiverseOptions { mode, seed, tol, ..DiverseOptions::default() };
    verify_theorems_with(mdp, cardinality, opts)
}

pub fn verify_theorems_with(mdp: &DiscreteMdp, cardinality: usize, opts: DiverseOptions) -> Result<TheoremReport> {
    let sol = solve_diverse_system(mdp, cardinality, opts)?;
    residuals(mdp, &sol, &opts)
}

pub fn residuals(mdp: &DiscreteMdp, sol: &DiverseSystemSolution, opts: &DiverseOptions) -> Result<TheoremReport> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let nz = sol.cardinality();
    let excluded: HashSet<(usize, usize)> = sol.floored.iter().copied().collect();

    let mut thm1: f64 = 0.0;
    for s in 0..ns {
        let rows: Vec<_> = sol.policies.iter().map(|p| p.row(s)).collect();
        let pz: Vec<f64> = (0..nz).map(|z| sol.state_posterior.post[[z, s]]).collect();
        for i in 0..nz {
            for j in (i + 1)..nz {
                let direct = symmetric_kl_direct(rows[i], rows[j]);
                let via = symmetric_kl_via_discriminator(&rows, &pz, i, j);
                let gap = if direct.is_infinite() && via.is_infinite() { 0.0 } else { (direct - via).abs() };
                thm1 = thm1.max(gap);
            }
        }
    }

    let q_soft = soft_value_iteration(mdp, Prior::Counting, opts.inner)?;
    let q_mix = soft_policy_evaluation(mdp, &sol.mixture, Prior::Counting, opts.inner)?;
    let (mut thm2, mut thm3, mut jensen): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for z in 0..nz {
        let post = sol.state_posterior.row(z);
        let s_star = correction_fixed_point(mdp, &sol.mixture, post, CorrectionKind::SStar, opts.floor, opts.inner)?;
        let m_star = correction_fixed_point(mdp, &sol.mixture, post, CorrectionKind::MStar, opts.floor, opts.inner)?;
        let qz = &sol.tables[z].q;
        for s in 0..ns {
            for a in 0..na {
                jensen = jensen.max(m_star.table[[s, a]] - s_star.table[[s, a]]);
                if excluded.contains(&(s, a)) {
                    continue;
                }
                thm2 = thm2.max((q_soft.q[[s, a]] - qz[[s, a]] - s_star.table[[s, a]]).abs());
                thm3 = thm3.max((q_mix.q[[s, a]] - qz[[s, a]] - m_star.table[[s, a]]).abs());
            }
        }
    }
    Ok(TheoremReport {
        thm1_residual: thm1,
        thm2_residual: thm2,
        thm3_residual: thm3,
        jensen_violation: jensen.max(0.0),
        bayes_residual: sol.bayes_residual(),
        outer_iterations: sol.outer_iterations(),
        floored_entries: excluded.len(),
    })
}
