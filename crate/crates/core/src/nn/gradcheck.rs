use rand::seq::index::sample;

use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    pub tol: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    /// Coordinates beyond this count are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-4, floor: 1e-6, max_coords: 400, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Compares `analytic` to central differences of `f` around `params`.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check<L>(mut f: L, params: &[f64], analytic: &[f64], opts: &GradCheckOptions) -> GradCheckReport
where
    L: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let n = params.len();
    let coords: Vec<usize> = if n <= opts.max_coords.max(200) {
        (0..n).collect()
    } else {
        let mut r = rng::split(opts.seed, rng::stream::EXPORT);
        let mut idx = sample(&mut r, n, opts.max_coords.max(200)).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords_checked: coords.len(),
        passed: true,
    };
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + opts.h;
        let up = f(&x);
        x[i] = orig - opts.h;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * opts.h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_error <= opts.tol;
    report
}
