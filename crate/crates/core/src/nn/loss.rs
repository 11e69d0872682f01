use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::Real;

/// `−log softmax(logits)[target]` and its gradient `softmax − onehot`.
pub fn cross_entropy<F: Real>(logits: ArrayView1<F>, target: usize) -> (F, Array1<F>) {
    assert!(target < logits.len());
    let batch = softmax_cross_entropy_batch(logits.insert_axis(Axis(0)), &[target]);
    (batch.losses[0], batch.grad.index_axis_move(Axis(0), 0))
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows<F: Real>(logits: ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
        let sum = row.iter().fold(F::zero(), |s, &x| s + (x - max).exp());
        let lse = max + sum.ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropyBatch<F> {
    pub log_probs: Array2<F>,
    /// Per-row losses.
    pub losses: Array1<F>,
    /// Gradient of each row's loss with respect to that row's logits.
    pub grad: Array2<F>,
}

impl<F: Real> CrossEntropyBatch<F> {
    pub fn mean_loss(&self) -> F {
        self.losses.iter().fold(F::zero(), |s, &x| s + x) / F::lit(self.losses.len() as f64)
    }

    /// Fraction of rows whose arg-max equals the target.
    pub fn accuracy(&self, targets: &[usize]) -> f64 {
        let hits = self
            .log_probs
            .rows()
            .into_iter()
            .zip(targets)
            .filter(|(row, &t)| {
                let best = row.iter().enumerate().fold((0, F::neg_infinity()), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
                best.0 == t
            })
            .count();
        hits as f64 / targets.len() as f64
    }
}

pub fn softmax_cross_entropy_batch<F: Real>(logits: ArrayView2<F>, targets: &[usize]) -> CrossEntropyBatch<F> {
    assert_eq!(logits.nrows(), targets.len());
    let log_probs = log_softmax_rows(logits);
    let mut grad = log_probs.mapv(F::exp);
    let mut losses = Array1::zeros(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        losses[i] = -log_probs[[i, t]];
        grad[[i, t]] -= F::one();
    }
    CrossEntropyBatch { log_probs, losses, grad }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, GradCheckOptions};
    use ndarray::array;

    #[test]
    fn uniform_logits() {
        let (loss, _) = cross_entropy(array![0.0, 0.0, 0.0, 0.0].view(), 2);
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_prediction() {
        let (loss, _) = cross_entropy(array![0.0, 50.0, 0.0].view(), 1);
        assert!(loss <= 1e-20);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, g) = cross_entropy(array![0.3f64, -1.2, 2.5, 0.0].view(), 0);
        assert!(g.sum().abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (loss, g) = cross_entropy(array![1000.0f32, -1000.0].view(), 1);
        assert!(loss.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.5, 0.0];
        let (_, g) = cross_entropy(ArrayView1::from(&logits), 2);
        let f = |p: &[f64]| cross_entropy(ArrayView1::from(p), 2).0;
        let rep = finite_diff_check(f, &logits, g.as_slice().unwrap(), &GradCheckOptions::default());
        assert!(rep.passed, "{rep:?}");
    }
}
