//! The coupled latent-conditioned system: per-latent soft-optimal policies
//! under the prior p(z|s,a), and a posterior p(z|s,a) that is Bayes-consistent
//! with those policies.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;

use super::soft::soft_value_iteration_from;
use super::{
    occupancy_measures, policy_from_soft_q, Prior, Result, SoftQTable, SolverOptions, TabularError, TabularPolicy,
    PROB_FLOOR,
};
use crate::mdp::DiscreteMdp;
use crate::rng;

/// p(z|s,a) for every latent, state and action.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorTable {
    /// Shape (|Z|, n_states, n_actions).
    pub post: Array3<f64>,
    pub floor: f64,
}

impl DiscriminatorTable {
    pub fn uniform(cardinality: usize, n_states: usize, n_actions: usize, floor: f64) -> Self {
        Self { post: Array3::from_elem((cardinality, n_states, n_actions), 1.0 / cardinality as f64), floor }
    }

    pub fn cardinality(&self) -> usize {
        self.post.dim().0
    }

    pub fn slice(&self, z: usize) -> ndarray::ArrayView2<'_, f64> {
        self.post.index_axis(Axis(0), z)
    }

    /// max over (s,a) of |Σ_z p(z|s,a) − 1|.
    pub fn normalization_gap(&self) -> f64 {
        self.post.sum_axis(Axis(0)).iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMode {
    /// p(z|s) = p(z).
    #[default]
    Uniform,
    /// p(z|s) ∝ p(z) d_z(s) with d_z the discounted occupancy of π_z.
    Occupancy,
}

impl std::fmt::Display for PosteriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PosteriorMode::Uniform => "uniform",
            PosteriorMode::Occupancy => "occupancy",
        })
    }
}

/// p(z|s).
#[derive(Debug, Clone, PartialEq)]
pub struct StatePosterior {
    /// Shape (|Z|, n_states).
    pub post: Array2<f64>,
    pub mode: PosteriorMode,
}

impl StatePosterior {
    pub fn uniform(cardinality: usize, n_states: usize) -> Self {
        Self {
            post: Array2::from_elem((cardinality, n_states), 1.0 / cardinality as f64),
            mode: PosteriorMode::Uniform,
        }
    }

    /// p(z|s) ∝ d_z(s) under the uniform latent prior. States no policy
    /// visits fall back to the prior.
    pub fn from_occupancies(occupancies: &[Array1<f64>]) -> Self {
        let nz = occupancies.len();
        let ns = occupancies[0].len();
        let mut post = Array2::zeros((nz, ns));
        for s in 0..ns {
            let total: f64 = occupancies.iter().map(|d| d[s]).sum();
            for z in 0..nz {
                post[[z, s]] = if total > 0.0 { occupancies[z][s] / total } else { 1.0 / nz as f64 };
            }
        }
        Self { post, mode: PosteriorMode::Occupancy }
    }

    pub fn row(&self, z: usize) -> ndarray::ArrayView1<'_, f64> {
        self.post.row(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiverseOptions {
    pub mode: PosteriorMode,
    /// Weight of the fresh Bayes posterior in each outer update, in (0, 1].
    pub damping: f64,
    /// Outer convergence threshold on the sup-norm change of p(z|s,a).
    pub tol: f64,
    pub max_outer: usize,
    pub floor: f64,
    /// Magnitude of the seeded perturbation of the uniform initial posterior.
    pub init_noise: f64,
    pub seed: u64,
    pub inner: SolverOptions,
    pub method: OuterMethod,
}

/// Outer solver for the coupled system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    /// Damped iteration for the uniform posterior, Levenberg-Marquardt for
    /// the occupancy posterior.
    #[default]
    Auto,
    Damped,
    LevenbergMarquardt,
}

impl Default for DiverseOptions {
    fn default() -> Self {
        Self {
            mode: PosteriorMode::Uniform,
            damping: 0.5,
            tol: 1e-10,
            max_outer: 20_000,
            floor: PROB_FLOOR,
            init_noise: 0.01,
            seed: 0,
            inner: SolverOptions::default().with_tol(1e-13),
            method: OuterMethod::Auto,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiverseSystemSolution {
    /// Q*_z / V*_z per latent.
    pub tables: Vec<SoftQTable>,
    /// π*_z per latent.
    pub policies: Vec<TabularPolicy>,
    pub discriminator: DiscriminatorTable,
    pub state_posterior: StatePosterior,
    /// π_/z(a|s) = Σ_z p(z|s) π_z(a|s).
    pub mixture: TabularPolicy,
    /// Sup-norm change of p(z|s,a) per outer iteration.
    pub residual_history: Vec<f64>,
    /// (s,a) entries where the floor was binding in the last update, either
    /// on the mixture mass or on a posterior entry.
    pub floored: Vec<(usize, usize)>,
}

impl DiverseSystemSolution {
    pub fn cardinality(&self) -> usize {
        self.policies.len()
    }

    pub fn outer_iterations(&self) -> usize {
        self.residual_history.len()
    }

    /// max |π(a|s,z) p(z|s) − p(z|s,a) π_/z(a|s)| over (z,s,a) with
    /// π_/z(a|s) above the floor.
    pub fn bayes_residual(&self) -> f64 {
        let (nz, ns, na) = self.discriminator.post.dim();
        let mut worst: f64 = 0.0;
        for z in 0..nz {
            for s in 0..ns {
                for a in 0..na {
                    let mix = self.mixture.probs()[[s, a]];
                    if mix <= self.discriminator.floor {
                        continue;
                    }
                    let lhs = self.policies[z].probs()[[s, a]] * self.state_posterior.post[[z, s]];
                    let rhs = self.discriminator.post[[z, s, a]] * mix;
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        worst
    }

    /// max |π_/z(a|s) − Σ_z p(z|s) π_z(a|s)|.
    pub fn mixture_gap(&self) -> f64 {
        let m = mixture_of(&self.policies, &self.state_posterior);
        m.iter().zip(self.mixture.probs().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn mixture_of(policies: &[TabularPolicy], posterior: &StatePosterior) -> Array2<f64> {
    let (ns, na) = policies[0].probs().dim();
    let mut m = Array2::zeros((ns, na));
    for (z, pol) in policies.iter().enumerate() {
        for s in 0..ns {
            let pz = posterior.post[[z, s]];
            for a in 0..na {
                m[[s, a]] += pz * pol.probs()[[s, a]];
            }
        }
    }
    m
}

/// Latent policies, state posterior and mixture implied by a discriminator
/// table.
struct Induced {
    tables: Vec<SoftQTable>,
    policies: Vec<TabularPolicy>,
    posterior: StatePosterior,
    mixture: Array2<f64>,
}

fn induce(
    mdp: &DiscreteMdp,
    disc: &DiscriminatorTable,
    opts: &DiverseOptions,
    warm: Option<&[SoftQTable]>,
) -> Result<Induced> {
    let nz = disc.cardinality();
    let mut tables = Vec::with_capacity(nz);
    let mut policies = Vec::with_capacity(nz);
    for z in 0..nz {
        let init = warm.map(|w| &w[z].q);
        let t = soft_value_iteration_from(mdp, Prior::Table(disc.slice(z)), opts.inner, init)?;
        policies.push(policy_from_soft_q(&t)?);
        tables.push(t);
    }
    let posterior = match opts.mode {
        PosteriorMode::Uniform => StatePosterior::uniform(nz, mdp.n_states()),
        PosteriorMode::Occupancy => {
            let occ = policies.iter().map(|p| occupancy_measures(mdp, p)).collect::<Result<Vec<_>>>()?;
            StatePosterior::from_occupancies(&occ)
        }
    };
    let mixture = mixture_of(&policies, &posterior);
    Ok(Induced { tables, policies, posterior, mixture })
}

fn initial_discriminator(nz: usize, ns: usize, na: usize, opts: &DiverseOptions) -> DiscriminatorTable {
    let mut r = rng::split(opts.seed, 0);
    let mut disc = DiscriminatorTable::uniform(nz, ns, na, opts.floor);
    if opts.init_noise > 0.0 {
        disc.post.mapv_inplace(|p| p + opts.init_noise * r.random_range(-1.0..1.0));
    }
    for s in 0..ns {
        for a in 0..na {
            let mut col = disc.post.slice_mut(s![.., s, a]);
            col.mapv_inplace(|p| p.max(opts.floor));
            let total = col.sum();
            col.mapv_inplace(|p| p / total);
        }
    }
    disc
}

/// Undamped Bayes posterior π*_z(a|s) p(z|s) / π_/z(a|s), with the mixture
/// floored. Returns the entries where the floor was active.
fn bayes_target(induced: &Induced, floor: f64) -> (Array3<f64>, Vec<(usize, usize)>) {
    let nz = induced.policies.len();
    let (ns, na) = induced.mixture.dim();
    let mut target = Array3::zeros((nz, ns, na));
    let mut floored = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            let mix = induced.mixture[[s, a]];
            if mix < floor {
                floored.push((s, a));
            }
            for z in 0..nz {
                target[[z, s, a]] = induced.policies[z].probs()[[s, a]] * induced.posterior.post[[z, s]] / mix.max(floor);
            }
        }
    }
    (target, floored)
}

fn renormalize(post: &mut Array3<f64>, floor: f64, floored: &mut Vec<(usize, usize)>) {
    let (_, ns, na) = post.dim();
    for s in 0..ns {
        for a in 0..na {
            let mut col = post.slice_mut(s![.., s, a]);
            if col.iter().any(|&p| p < floor) && !floored.contains(&(s, a)) {
                floored.push((s, a));
            }
            col.mapv_inplace(|p| p.max(floor));
            let total = col.sum();
            col.mapv_inplace(|p| p / total);
        }
    }
    floored.sort_unstable();
}

/// Solves the coupled system
///
/// 1. Q*_z from soft value iteration with action weights p(z|s,a),
/// 2. π*_z(a|s) = exp(Q*_z − V*_z) p(z|s,a),
/// 3. p(z|s) per `opts.mode`,
/// 4. π_/z = Σ_z p(z|s) π*_z,
/// 5. p(z|s,a) = π*_z(a|s) p(z|s) / π_/z(a|s),
///
/// until the sup-norm Bayes residual of p(z|s,a) is at most `opts.tol`. The
/// damped method iterates step 5 with weight `opts.damping` on the fresh
/// posterior; Levenberg-Marquardt solves the residual equations directly,
/// which also reaches interior solutions that the damped iteration repels.
/// The returned tables are all recomputed from the final posterior.
pub fn solve_diverse_system(mdp: &DiscreteMdp, cardinality: usize, opts: DiverseOptions) -> Result<DiverseSystemSolution> {
    solve_diverse_system_from(mdp, cardinality, opts, None)
}

/// As [`solve_diverse_system`], starting from `initial` instead of the seeded
/// perturbation of the uniform posterior.
pub fn solve_diverse_system_from(
    mdp: &DiscreteMdp,
    cardinality: usize,
    opts: DiverseOptions,
    initial: Option<&DiscriminatorTable>,
) -> Result<DiverseSystemSolution> {
    if cardinality == 0 {
        return Err(TabularError::InvalidArgument("latent cardinality must be positive".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(TabularError::InvalidArgument(format!("damping {} outside (0, 1]", opts.damping)));
    }
    if !(opts.tol > 0.0) || !(opts.floor > 0.0) {
        return Err(TabularError::InvalidArgument("tolerance and floor must be positive".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let disc = match initial {
        Some(d) => {
            if d.post.dim() != (cardinality, ns, na) {
                return Err(TabularError::InvalidArgument("initial discriminator shape".into()));
            }
            let mut d = d.clone();
            renormalize(&mut d.post, opts.floor, &mut Vec::new());
            d
        }
        None => initial_discriminator(cardinality, ns, na, &opts),
    };
    let method = match (opts.method, opts.mode) {
        (OuterMethod::Auto, PosteriorMode::Uniform) => OuterMethod::Damped,
        (OuterMethod::Auto, PosteriorMode::Occupancy) => OuterMethod::LevenbergMarquardt,
        (m, _) => m,
    };
    if cardinality == 1 || method == OuterMethod::Damped {
        damped(mdp, disc, &opts)
    } else {
        levenberg_marquardt(mdp, disc, &opts)
    }
}

fn finish(
    mdp: &DiscreteMdp,
    disc: DiscriminatorTable,
    opts: &DiverseOptions,
    warm: &[SoftQTable],
    history: Vec<f64>,
    floored: Vec<(usize, usize)>,
) -> Result<DiverseSystemSolution> {
    let fin = induce(mdp, &disc, opts, Some(warm))?;
    let mixture = TabularPolicy::new(normalize_rows(fin.mixture))?;
    Ok(DiverseSystemSolution {
        tables: fin.tables,
        policies: fin.policies,
        discriminator: disc,
        state_posterior: fin.posterior,
        mixture,
        residual_history: history,
        floored,
    })
}

fn not_converged(history: Vec<f64>) -> TabularError {
    TabularError::NotConverged {
        what: "diverse system",
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    }
}

fn damped(mdp: &DiscreteMdp, mut disc: DiscriminatorTable, opts: &DiverseOptions) -> Result<DiverseSystemSolution> {
    let mut history = Vec::new();
    let mut warm: Option<Vec<SoftQTable>> = None;
    loop {
        let induced = induce(mdp, &disc, opts, warm.as_deref())?;
        let (target, mut floored) = bayes_target(&induced, opts.floor);
        let mut next = &disc.post * (1.0 - opts.damping) + &target * opts.damping;
        renormalize(&mut next, opts.floor, &mut floored);
        let residual = (&next - &disc.post).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        disc.post = next;
        history.push(residual);
        if residual <= opts.tol {
            return finish(mdp, disc, opts, &induced.tables, history, floored);
        }
        if !residual.is_finite() || history.len() >= opts.max_outer {
            return Err(not_converged(history));
        }
        warm = Some(induced.tables);
    }
}

/// Bayes residual of the posterior with logits `theta`, plus the posterior
/// and the induced system.
fn lm_residual(
    mdp: &DiscreteMdp,
    theta: &Array3<f64>,
    opts: &DiverseOptions,
    warm: Option<&[SoftQTable]>,
) -> Result<(Array3<f64>, DiscriminatorTable, Induced)> {
    let (_, ns, na) = theta.dim();
    let mut post = theta.clone();
    for s in 0..ns {
        for a in 0..na {
            let mut col = post.slice_mut(s![.., s, a]);
            let max = col.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            col.mapv_inplace(|x| (x - max).exp());
            let total = col.sum();
            col.mapv_inplace(|p| (p / total).max(opts.floor));
        }
    }
    let disc = DiscriminatorTable { post, floor: opts.floor };
    let induced = induce(mdp, &disc, opts, warm)?;
    let (target, _) = bayes_target(&induced, opts.floor);
    Ok((target - &disc.post, disc, induced))
}

fn sup_norm(x: &Array3<f64>) -> f64 {
    x.iter().fold(0.0f64, |m, d| m.max(d.abs()))
}

fn levenberg_marquardt(mdp: &DiscreteMdp, disc: DiscriminatorTable, opts: &DiverseOptions) -> Result<DiverseSystemSolution> {
    use nalgebra::{DMatrix, DVector};

    let dim = disc.post.dim();
    let n = disc.post.len();
    let mut theta = disc.post.mapv(f64::ln);
    let (mut r, mut disc, mut induced) = lm_residual(mdp, &theta, opts, None)?;
    let mut history = vec![sup_norm(&r)];
    let mut lambda = 1e-3;
    let h = 1e-7;
    while history.last().copied().unwrap_or(f64::INFINITY) > opts.tol {
        if history.len() >= opts.max_outer || !history.last().copied().unwrap_or(f64::NAN).is_finite() {
            return Err(not_converged(history));
        }
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let mut probe = theta.clone();
            probe.as_slice_mut().expect("standard layout")[k] += h;
            let (rk, _, _) = lm_residual(mdp, &probe, opts, Some(&induced.tables))?;
            for (i, (a, b)) in rk.iter().zip(r.iter()).enumerate() {
                jac[(i, k)] = (a - b) / h;
            }
        }
        let rv = DVector::from_iterator(n, r.iter().copied());
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &rv;
        let base = rv.norm_squared();
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = &theta + &Array3::from_shape_vec(dim, step.iter().copied().collect()).expect("shape");
            let (rc, dc, ic) = lm_residual(mdp, &cand, opts, Some(&induced.tables))?;
            if rc.iter().map(|x| x * x).sum::<f64>() < base {
                theta = cand;
                r = rc;
                disc = dc;
                induced = ic;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 4.0;
        }
        history.push(sup_norm(&r));
        if !accepted {
            return Err(not_converged(history));
        }
    }
    let mut floored = bayes_target(&induced, opts.floor).1;
    let mut post = disc.post.clone();
    renormalize(&mut post, opts.floor, &mut floored);
    finish(mdp, disc, opts, &induced.tables, history, floored)
}

fn normalize_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let total = row.sum();
        row.mapv_inplace(|p| p / total);
    }
    m
}
