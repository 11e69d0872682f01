use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::Real;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Batched tanh-squashed Gaussian sample; rows are batch entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeadOutput<F> {
    pub mean: Array2<F>,
    /// Clamped log standard deviation.
    pub log_std: Array2<F>,
    pub noise: Array2<F>,
    pub action: Array2<F>,
    pub log_prob: Array1<F>,
    /// True where the raw log std was inside the clamp range.
    active: Array2<bool>,
}

/// Gradients with respect to the raw head inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad<F> {
    pub mean: Array2<F>,
    pub log_std: Array2<F>,
}

fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// `log(1 − tanh(u)²)` without cancellation.
pub(crate) fn log_one_minus_tanh_sq<F: Real>(u: F) -> F {
    F::lit(2.0) * (F::lit(std::f64::consts::LN_2) - u - softplus(F::lit(-2.0) * u))
}

/// `a = tanh(μ + σ ε)` and its log density under the squashed distribution.
pub fn gaussian_rsample<F: Real>(mean: ArrayView2<F>, raw_log_std: ArrayView2<F>, noise: ArrayView2<F>) -> GaussianHeadOutput<F> {
    assert_eq!(mean.dim(), raw_log_std.dim());
    assert_eq!(mean.dim(), noise.dim());
    let (lo, hi) = (F::lit(LOG_STD_MIN), F::lit(LOG_STD_MAX));
    let active = raw_log_std.mapv(|l| l >= lo && l <= hi);
    let log_std = raw_log_std.mapv(|l| l.max(lo).min(hi));
    let half_log_two_pi = F::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let half = F::lit(0.5);

    let mut action = Array2::zeros(mean.dim());
    let mut terms = Array2::zeros(mean.dim());
    Zip::from(&mut action)
        .and(&mut terms)
        .and(mean)
        .and(&log_std)
        .and(noise)
        .for_each(|a, t, &m, &ls, &e| {
            let u = m + ls.exp() * e;
            *a = u.tanh();
            *t = -half * e * e - ls - half_log_two_pi - log_one_minus_tanh_sq(u);
        });
    // Sequential row sums keep the result independent of memory layout.
    let log_prob = terms.map_axis(Axis(1), |row| row.iter().fold(F::zero(), |acc, &x| acc + x));
    GaussianHeadOutput { mean: mean.to_owned(), log_std, noise: noise.to_owned(), action, log_prob, active }
}

impl<F: Real> GaussianHeadOutput<F> {
    /// Pulls `grad_action` (∂L/∂a) and `grad_log_prob` (∂L/∂log π) back to
    /// the mean and raw log std at fixed noise.
    pub fn backward(&self, grad_action: ArrayView2<F>, grad_log_prob: ndarray::ArrayView1<F>) -> HeadGrad<F> {
        let two = F::lit(2.0);
        let mut g_mean = Array2::zeros(self.mean.dim());
        let mut g_log_std = Array2::zeros(self.mean.dim());
        let (rows, cols) = self.mean.dim();
        for i in 0..rows {
            let glp = grad_log_prob[i];
            for j in 0..cols {
                let a = self.action[[i, j]];
                let du = grad_action[[i, j]] * (F::one() - a * a) + glp * two * a;
                g_mean[[i, j]] = du;
                if self.active[[i, j]] {
                    g_log_std[[i, j]] = du * self.log_std[[i, j]].exp() * self.noise[[i, j]] - glp;
                }
            }
        }
        HeadGrad { mean: g_mean, log_std: g_log_std }
    }
}
