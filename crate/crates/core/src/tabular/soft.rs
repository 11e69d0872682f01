use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{Result, TabularError};
use crate::mdp::DiscreteMdp;

/// Action weighting inside the soft backup.
#[derive(Debug, Clone, Copy)]
pub enum Prior<'a> {
    /// w(s,a) = 1.
    Counting,
    /// Explicit per-(s,a) weight, e.g. a discriminator slice p(z|s,a).
    Table(ArrayView2<'a, f64>),
}

impl<'a> Prior<'a> {
    #[inline]
    fn weight(&self, s: usize, a: usize) -> f64 {
        match self {
            Prior::Counting => 1.0,
            Prior::Table(w) => w[[s, a]],
        }
    }

    fn row(&self, s: usize, n_actions: usize) -> Array1<f64> {
        match self {
            Prior::Counting => Array1::ones(n_actions),
            Prior::Table(w) => w.row(s).to_owned(),
        }
    }

    fn check_shape(&self, mdp: &DiscreteMdp) -> Result<()> {
        if let Prior::Table(w) = self {
            if w.dim() != (mdp.n_states(), mdp.n_actions()) {
                return Err(TabularError::InvalidArgument(format!("prior table shape {:?}", w.dim())));
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(TabularError::InvalidArgument("prior weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    fn to_owned(self) -> Option<Array2<f64>> {
        match self {
            Prior::Counting => None,
            Prior::Table(w) => Some(w.to_owned()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Counting,
    Table,
}

/// Soft Q and V tables together with the action weights they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQTable {
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    weights: Option<Array2<f64>>,
    /// Sup-norm change of Q after each sweep.
    pub residuals: Vec<f64>,
}

impl SoftQTable {
    pub fn prior_kind(&self) -> PriorKind {
        if self.weights.is_some() {
            PriorKind::Table
        } else {
            PriorKind::Counting
        }
    }

    pub fn prior(&self) -> Prior<'_> {
        match &self.weights {
            None => Prior::Counting,
            Some(w) => Prior::Table(w.view()),
        }
    }

    /// max_s |v(s) − log Σ_a exp(q(s,a)) w(s,a)|.
    pub fn logsumexp_gap(&self) -> f64 {
        let prior = self.prior();
        (0..self.q.nrows())
            .map(|s| {
                let w = prior.row(s, self.q.ncols());
                (self.v[s] - weighted_logsumexp(self.q.row(s), w.view())).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Row-stochastic policy table π(a|s).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.axis_iter(Axis(0)).enumerate() {
            let sum = row.sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| !(p >= 0.0)) {
                return Err(TabularError::InconsistentTable { state: s, sum });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64) }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn row(&self, s: usize) -> ArrayView1<'_, f64> {
        self.probs.row(s)
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    /// Every state backs up from the previous sweep's values.
    #[default]
    Jacobi,
    /// States back up in index order from the freshest values.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub sweep: SweepOrder,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iters: 100_000, sweep: SweepOrder::Jacobi }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(TabularError::InvalidArgument(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

/// log Σ_i w_i exp(x_i), stable against overflow; entries with w_i = 0 drop
/// out. Returns −∞ when every weight is zero.
pub fn weighted_logsumexp(x: ArrayView1<f64>, w: ArrayView1<f64>) -> f64 {
    let m = x
        .iter()
        .zip(w.iter())
        .filter(|(_, &wi)| wi > 0.0)
        .map(|(&xi, _)| xi)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = x.iter().zip(w.iter()).filter(|(_, &wi)| wi > 0.0).map(|(&xi, &wi)| wi * (xi - m).exp()).sum();
    m + s.ln()
}

fn soft_v_row(q: ArrayView1<f64>, prior: &Prior, s: usize) -> f64 {
    match prior {
        Prior::Counting => weighted_logsumexp(q, Array1::ones(q.len()).view()),
        Prior::Table(w) => weighted_logsumexp(q, w.row(s)),
    }
}

fn sup_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Fixed point of Q(s,a) = R(s,a) + γ E[V(s')], V(s) = log Σ_a exp(Q(s,a)) w(s,a).
pub fn soft_value_iteration(mdp: &DiscreteMdp, prior: Prior, opts: SolverOptions) -> Result<SoftQTable> {
    soft_value_iteration_from(mdp, prior, opts, None)
}

/// As [`soft_value_iteration`], starting from `init` instead of the zero table.
pub fn soft_value_iteration_from(
    mdp: &DiscreteMdp,
    prior: Prior,
    opts: SolverOptions,
    init: Option<&Array2<f64>>,
) -> Result<SoftQTable> {
    opts.validate()?;
    prior.check_shape(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let mut q = match init {
        Some(q0) if q0.dim() == (ns, na) => q0.clone(),
        _ => Array2::zeros((ns, na)),
    };
    let mut v: Vec<f64> = (0..ns).map(|s| soft_v_row(q.row(s), &prior, s)).collect();
    let mut residuals = Vec::new();

    for _ in 0..opts.max_iters {
        let residual = match opts.sweep {
            SweepOrder::Jacobi => {
                let mut next = Array2::zeros((ns, na));
                for s in 0..ns {
                    for a in 0..na {
                        next[[s, a]] = mdp.reward()[[s, a]] + gamma * mdp.expect_next(s, a, &v);
                    }
                }
                let r = sup_diff(&next, &q);
                q = next;
                for (s, vs) in v.iter_mut().enumerate() {
                    *vs = soft_v_row(q.row(s), &prior, s);
                }
                r
            }
            SweepOrder::GaussSeidel => {
                let mut r: f64 = 0.0;
                for s in 0..ns {
                    for a in 0..na {
                        let new = mdp.reward()[[s, a]] + gamma * mdp.expect_next(s, a, &v);
                        r = r.max((new - q[[s, a]]).abs());
                        q[[s, a]] = new;
                    }
                    v[s] = soft_v_row(q.row(s), &prior, s);
                }
                r
            }
        };
        residuals.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok(SoftQTable { q, v: Array1::from(v), weights: prior.to_owned(), residuals });
        }
    }
    Err(TabularError::NotConverged {
        what: "soft value iteration",
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        history: residuals,
    })
}

/// π(a|s) = exp(q(s,a) − v(s)) w(s,a).
pub fn policy_from_soft_q(table: &SoftQTable) -> Result<TabularPolicy> {
    let prior = table.prior();
    let (ns, na) = table.q.dim();
    let mut probs = Array2::zeros((ns, na));
    for s in 0..ns {
        let mut sum = 0.0;
        for a in 0..na {
            let w = prior.weight(s, a);
            let p = if w > 0.0 { (table.q[[s, a]] - table.v[s]).exp() * w } else { 0.0 };
            probs[[s, a]] = p;
            sum += p;
        }
        if !((sum - 1.0).abs() <= 1e-8) {
            return Err(TabularError::InconsistentTable { state: s, sum });
        }
        probs.row_mut(s).mapv_inplace(|p| p / sum);
    }
    TabularPolicy::new(probs)
}

/// Soft evaluation of a fixed policy: V(s) = Σ_a π(a|s)[Q(s,a) − log π(a|s) + log w(s,a)],
/// with zero-probability actions contributing nothing.
///
/// The returned table holds V in expectation form; it coincides with the
/// log-sum-exp form only when `pol` is the soft-optimal policy for `prior`.
pub fn soft_policy_evaluation(
    mdp: &DiscreteMdp,
    pol: &TabularPolicy,
    prior: Prior,
    opts: SolverOptions,
) -> Result<SoftQTable> {
    opts.validate()?;
    prior.check_shape(mdp)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if pol.probs.dim() != (ns, na) {
        return Err(TabularError::InvalidArgument(format!("policy shape {:?}", pol.probs.dim())));
    }
    let gamma = mdp.gamma();
    // Per-state entropy-plus-prior bonus Σ_a π(−log π + log w).
    let bonus: Vec<f64> = (0..ns)
        .map(|s| {
            (0..na)
                .filter(|&a| pol.probs[[s, a]] > 0.0)
                .map(|a| {
                    let p = pol.probs[[s, a]];
                    p * (prior.weight(s, a).ln() - p.ln())
                })
                .sum()
        })
        .collect();
    let value_of = |q: &Array2<f64>| -> Vec<f64> {
        (0..ns)
            .map(|s| {
                let e: f64 = (0..na).filter(|&a| pol.probs[[s, a]] > 0.0).map(|a| pol.probs[[s, a]] * q[[s, a]]).sum();
                e + bonus[s]
            })
            .collect()
    };

    let mut q = Array2::zeros((ns, na));
    let mut v = value_of(&q);
    let mut residuals = Vec::new();
    for _ in 0..opts.max_iters {
        let residual = match opts.sweep {
            SweepOrder::Jacobi => {
                let mut next = Array2::zeros((ns, na));
                for s in 0..ns {
                    for a in 0..na {
                        next[[s, a]] = mdp.reward()[[s, a]] + gamma * mdp.expect_next(s, a, &v);
                    }
                }
                let r = sup_diff(&next, &q);
                q = next;
                v = value_of(&q);
                r
            }
            SweepOrder::GaussSeidel => {
                let mut r: f64 = 0.0;
                for s in 0..ns {
                    for a in 0..na {
                        let new = mdp.reward()[[s, a]] + gamma * mdp.expect_next(s, a, &v);
                        r = r.max((new - q[[s, a]]).abs());
                        q[[s, a]] = new;
                    }
                    v[s] = (0..na).filter(|&a| pol.probs[[s, a]] > 0.0).map(|a| pol.probs[[s, a]] * q[[s, a]]).sum::<f64>()
                        + bonus[s];
                }
                r
            }
        };
        residuals.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok(SoftQTable { q, v: Array1::from(v), weights: prior.to_owned(), residuals });
        }
    }
    Err(TabularError::NotConverged {
        what: "soft policy evaluation",
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
        history: residuals,
    })
}

/// Normalized discounted state occupancy d(s) ∝ Σ_t γ^t Pr(s_t = s), from
/// the flow equations d = (1−γ)ρ + γ P_πᵀ d.
pub fn occupancy_measures(mdp: &DiscreteMdp, pol: &TabularPolicy) -> Result<Array1<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if pol.probs.dim() != (ns, na) {
        return Err(TabularError::InvalidArgument(format!("policy shape {:?}", pol.probs.dim())));
    }
    let gamma = mdp.gamma();
    let p = mdp.transition();
    // A = I − γ P_πᵀ where P_π[s, s'] = Σ_a π(a|s) P(s'|s,a).
    let mut a_mat = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = pol.probs[[s, a]];
            if pa == 0.0 {
                continue;
            }
            for s2 in 0..ns {
                a_mat[(s2, s)] -= gamma * pa * p[[s, a, s2]];
            }
        }
    }
    let rhs = DVector::from_iterator(ns, mdp.initial().iter().map(|&r| (1.0 - gamma) * r));
    let d = a_mat.lu().solve(&rhs).ok_or(TabularError::Singular("occupancy flow equations"))?;
    let mut out = Array1::from_iter(d.iter().map(|&x| x.max(0.0)));
    let total = out.sum();
    debug_assert!(total > 0.0);
    out.mapv_inplace(|x| x / total);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_random_mdp, GridworldSpec};
    use crate::rng;
    use ndarray::{array, Array3};
    use rand::Rng;
    use rand_distr::{Distribution, Uniform};

    fn absorbing_two_actions(gamma: f64) -> DiscreteMdp {
        let p = Array3::from_elem((1, 2, 1), 1.0);
        DiscreteMdp::new(p, array![[1.0, 0.0]], gamma, array![1.0]).unwrap()
    }

    fn random_mdp(seed: u64, ns: usize, na: usize, gamma: f64) -> DiscreteMdp {
        make_random_mdp(&GridworldSpec { seed, n_states: ns, n_actions: na, gamma, ..Default::default() }).unwrap()
    }

    fn tight() -> SolverOptions {
        SolverOptions::default().with_tol(1e-13)
    }

    #[test]
    fn zero_discount_is_one_step() {
        let mdp = random_mdp(3, 4, 3, 0.9).with_gamma(0.0).unwrap();
        let t = soft_value_iteration(&mdp, Prior::Counting, tight()).unwrap();
        assert_eq!(t.q, mdp.reward().clone());
        for s in 0..4 {
            let expect = mdp.reward().row(s).iter().map(|r| r.exp()).sum::<f64>().ln();
            assert!((t.v[s] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn single_state_matches_scalar_fixed_point() {
        // Oracle: iterate v ← log(e^{1+γv} + e^{γv}) directly on the scalar.
        let gamma = 0.5;
        let mut v: f64 = 0.0;
        for _ in 0..10_000 {
            v = ((1.0 + gamma * v).exp() + (gamma * v).exp()).ln();
        }
        let t = soft_value_iteration(&absorbing_two_actions(gamma), Prior::Counting, tight()).unwrap();
        assert!((t.v[0] - v).abs() < 1e-12);
        assert!((t.q[[0, 0]] - (1.0 + gamma * v)).abs() < 1e-12);
        assert!((t.q[[0, 1]] - gamma * v).abs() < 1e-12);
    }

    #[test]
    fn jacobi_and_gauss_seidel_agree() {
        let mdp = random_mdp(11, 5, 3, 0.9);
        let j = soft_value_iteration(&mdp, Prior::Counting, tight()).unwrap();
        let gs = soft_value_iteration(&mdp, Prior::Counting, SolverOptions { sweep: SweepOrder::GaussSeidel, ..tight() })
            .unwrap();
        assert!(sup_diff(&j.q, &gs.q) < 1e-9);
        assert!(j.logsumexp_gap() < 1e-10);
    }

    #[test]
    fn contraction_residuals_decrease() {
        for seed in 0..5 {
            let mdp = random_mdp(seed, 6, 3, 0.9);
            let t = soft_value_iteration(&mdp, Prior::Counting, tight()).unwrap();
            // Monotone until the residual reaches rounding level.
            for w in t.residuals[1..].windows(2) {
                if w[0] > 1e-12 {
                    assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", w);
                }
            }
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mdp = random_mdp(1, 4, 2, 0.99);
        let err = soft_value_iteration(&mdp, Prior::Counting, SolverOptions { max_iters: 3, ..tight() }).unwrap_err();
        match err {
            TabularError::NotConverged { iterations, residual, history, .. } => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
                assert!(residual > 0.0);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn policy_examples() {
        let t = SoftQTable {
            q: array![[1.0, 0.0], [2.0, 2.0]],
            v: array![(1.0f64.exp() + 1.0).ln(), 2.0 + 2.0f64.ln()],
            weights: None,
            residuals: vec![],
        };
        let pol = policy_from_soft_q(&t).unwrap();
        let e = 1.0f64.exp();
        assert!((pol.probs[[0, 0]] - e / (1.0 + e)).abs() < 1e-15);
        assert!((pol.probs[[0, 0]] - 0.731059).abs() < 1e-6);
        assert!((pol.probs[[0, 1]] - 0.268941).abs() < 1e-6);
        assert_eq!(pol.probs[[1, 0]], 0.5);
        assert_eq!(pol.probs[[1, 1]], 0.5);
    }

    #[test]
    fn zero_prior_weight_gets_zero_mass() {
        let mdp = random_mdp(5, 3, 3, 0.8);
        let mut w = Array2::from_elem((3, 3), 0.5);
        w[[1, 2]] = 0.0;
        let t = soft_value_iteration(&mdp, Prior::Table(w.view()), tight()).unwrap();
        assert_eq!(t.prior_kind(), PriorKind::Table);
        let pol = policy_from_soft_q(&t).unwrap();
        assert_eq!(pol.probs[[1, 2]], 0.0);
    }

    #[test]
    fn inconsistent_table_rejected() {
        let t = SoftQTable { q: array![[1.0, 0.0]], v: array![0.0], weights: None, residuals: vec![] };
        assert!(matches!(policy_from_soft_q(&t), Err(TabularError::InconsistentTable { .. })));
    }

    #[test]
    fn optimal_policy_evaluates_to_optimal_values() {
        let mdp = random_mdp(7, 5, 3, 0.9);
        let mut w = Array2::zeros((5, 3));
        let mut r = rng::split(1, 1);
        w.mapv_inplace(|_: f64| r.random_range(0.1..1.0));
        for prior in [Prior::Counting, Prior::Table(w.view())] {
            let opt = soft_value_iteration(&mdp, prior, tight()).unwrap();
            let pol = policy_from_soft_q(&opt).unwrap();
            let ev = soft_policy_evaluation(&mdp, &pol, prior, tight()).unwrap();
            assert!(sup_diff(&ev.q, &opt.q) < 1e-8);
            // Log-sum-exp and expectation forms of V agree at the optimum.
            for s in 0..5 {
                assert!((ev.v[s] - opt.v[s]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn deterministic_policy_has_no_entropy_term() {
        let mdp = random_mdp(8, 4, 3, 0.9);
        let mut probs = Array2::zeros((4, 3));
        for s in 0..4 {
            probs[[s, s % 3]] = 1.0;
        }
        let pol = TabularPolicy::new(probs).unwrap();
        let ev = soft_policy_evaluation(&mdp, &pol, Prior::Counting, tight()).unwrap();
        for s in 0..4 {
            assert_eq!(ev.v[s], ev.q[[s, s % 3]]);
        }
    }

    #[test]
    fn policy_evaluation_matches_monte_carlo() {
        let gamma = 0.9;
        let mdp = random_mdp(21, 4, 3, gamma);
        let mut r = rng::split(21, 2);
        let mut probs = Array2::zeros((4, 3));
        for s in 0..4 {
            let row: Vec<f64> = (0..3).map(|_| r.random_range(0.1..1.0)).collect();
            let total: f64 = row.iter().sum();
            for a in 0..3 {
                probs[[s, a]] = row[a] / total;
            }
        }
        let pol = TabularPolicy::new(probs).unwrap();
        let ev = soft_policy_evaluation(&mdp, &pol, Prior::Counting, tight()).unwrap();
        let exact: f64 = (0..4).map(|s| mdp.initial()[s] * ev.v[s]).sum();

        // γ^T < 1e-8.
        let horizon = (1e-8f64.ln() / gamma.ln()).ceil() as usize;
        let n = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut s = mdp.sample_initial(&mut r);
            let mut g = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = crate::mdp::sample_categorical(pol.row(s).iter().copied(), &mut r);
                let (s2, rew) = mdp.sample_transition(s, a, &mut r).unwrap();
                g += disc * (rew - pol.probs[[s, a]].ln());
                disc *= gamma;
                s = s2;
            }
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn occupancy_absorbing_start() {
        let mdp = absorbing_two_actions(0.7);
        let d = occupancy_measures(&mdp, &TabularPolicy::uniform(1, 2)).unwrap();
        assert_eq!(d, array![1.0]);
    }

    #[test]
    fn occupancy_swap_chain_matches_power_iteration() {
        let gamma = 0.5;
        let mut p = Array3::zeros((2, 1, 2));
        p[[0, 0, 1]] = 1.0;
        p[[1, 0, 0]] = 1.0;
        let mdp = DiscreteMdp::new(p, array![[0.0], [0.0]], gamma, array![1.0, 0.0]).unwrap();
        let d = occupancy_measures(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();

        let mut dist = [1.0, 0.0];
        let mut acc = [0.0, 0.0];
        let mut w = 1.0;
        for _ in 0..1000 {
            acc[0] += w * dist[0];
            acc[1] += w * dist[1];
            dist = [dist[1], dist[0]];
            w *= gamma;
        }
        let total = acc[0] + acc[1];
        assert!((d[0] - acc[0] / total).abs() < 1e-12);
        assert!((d[1] - acc[1] / total).abs() < 1e-12);
    }

    #[test]
    fn occupancy_is_a_distribution() {
        let mut r = rng::split(4, 4);
        for seed in 0..10 {
            let mdp = random_mdp(seed, 6, 3, 0.95);
            let u = Uniform::new(0.0, 1.0).unwrap();
            let mut probs = Array2::from_shape_fn((6, 3), |_| u.sample(&mut r));
            for mut row in probs.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|x| x / s);
            }
            let d = occupancy_measures(&mdp, &TabularPolicy::new(probs).unwrap()).unwrap();
            assert!(d.iter().all(|&x| x >= 0.0));
            assert!((d.sum() - 1.0).abs() < 1e-12);
        }
    }
}
