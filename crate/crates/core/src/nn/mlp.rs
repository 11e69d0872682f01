use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{NnError, Real};

/// Affine layer `x ↦ x W + b` with `W` stored as (fan_in, fan_out).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// ReLU perceptron; the last layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

/// Layer inputs saved by [`Mlp::forward_cached`]: `activations[0]` is the
/// network input, `activations[l]` the post-ReLU output of hidden layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    activations: Vec<Array2<F>>,
}

/// Gradients mirroring an [`Mlp`], plus the optional input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<F> {
    pub layers: Vec<DenseGrad<F>>,
    pub input: Option<Array2<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardMode {
    pub params: bool,
    pub input: bool,
}

impl BackwardMode {
    pub const PARAMS: Self = Self { params: true, input: false };
    pub const INPUT: Self = Self { params: false, input: true };
    pub const BOTH: Self = Self { params: true, input: true };
}

impl<F: Real> Mlp<F> {
    /// Weights and biases uniform in ±1/√fan_in.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = || F::lit(rng.random_range(-bound..bound));
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), &mut draw);
                let bias = Array1::from_shape_simple_fn(w[1], &mut draw);
                Dense { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense { weight: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.weight.ncols())).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.input_dim() {
            return Err(NnError::Shape { expected: format!("{} input features", self.input_dim()), got: cols.to_string() });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<F>) -> Result<Array1<F>, NnError> {
        let out = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok(out.index_axis_move(Axis(0), 0))
    }

    pub fn forward_batch(&self, x: ArrayView2<F>) -> Result<Array2<F>, NnError> {
        self.check_input(x.ncols())?;
        let mut h = affine(x, &self.layers[0]);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            h = affine(h.view(), layer);
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<F>) -> Result<(Array2<F>, ForwardCache<F>), NnError> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_owned());
        let mut h = affine(x, &self.layers[0]);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            let next = affine(h.view(), layer);
            activations.push(h);
            h = next;
        }
        Ok((h, ForwardCache { activations }))
    }

    /// Reverse pass for the scalar `Σ upstream ⊙ output`.
    pub fn backward(&self, cache: &ForwardCache<F>, upstream: ArrayView2<F>, mode: BackwardMode) -> GradBundle<F> {
        let n = self.layers.len();
        let mut layers: Vec<DenseGrad<F>> = Vec::with_capacity(if mode.params { n } else { 0 });
        let mut delta = upstream.to_owned();
        let mut input = None;
        for l in (0..n).rev() {
            let a = &cache.activations[l];
            if mode.params {
                layers.push(DenseGrad { weight: a.t().dot(&delta), bias: delta.sum_axis(Axis(0)) });
            }
            if l > 0 || mode.input {
                let mut da = delta.dot(&self.layers[l].weight.t());
                if l > 0 {
                    Zip::from(&mut da).and(a).for_each(|d, &act| {
                        if act <= F::zero() {
                            *d = F::zero();
                        }
                    });
                    delta = da;
                } else {
                    input = Some(da);
                }
            }
        }
        layers.reverse();
        GradBundle { layers, input }
    }

    /// Gradients of `upstream · f(x)` for a single input vector.
    pub fn backprop(&self, x: ArrayView1<F>, upstream: ArrayView1<F>, mode: BackwardMode) -> Result<GradBundle<F>, NnError> {
        if upstream.len() != self.output_dim() {
            return Err(NnError::Shape {
                expected: format!("{} output gradients", self.output_dim()),
                got: upstream.len().to_string(),
            });
        }
        let (_, cache) = self.forward_cached(x.insert_axis(Axis(0)))?;
        Ok(self.backward(&cache, upstream.insert_axis(Axis(0)), mode))
    }

    /// Parameters flattened layer by layer, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[F]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
    }

    /// `self ← (1 − τ) self + τ src`.
    pub fn polyak_from(&mut self, src: &Mlp<F>, tau: F) {
        let keep = F::one() - tau;
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            Zip::from(&mut dst.weight).and(&s.weight).for_each(|d, &x| *d = keep * *d + tau * x);
            Zip::from(&mut dst.bias).and(&s.bias).for_each(|d, &x| *d = keep * *d + tau * x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Converts every parameter to another precision.
    pub fn cast<G: Real>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense { weight: l.weight.mapv(|x| G::lit(x.as_f64())), bias: l.bias.mapv(|x| G::lit(x.as_f64())) })
                .collect(),
        }
    }
}

impl<F: Real> GradBundle<F> {
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &GradBundle<F>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

fn affine<F: Real>(x: ArrayView2<F>, layer: &Dense<F>) -> Array2<F> {
    let mut h = x.dot(&layer.weight);
    h += &layer.bias;
    h
}

fn relu_inplace<F: Real>(h: &mut Array2<F>) {
    h.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, GradCheckOptions};
    use crate::rng;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[3, 5, 2]);
        assert_eq!(net.forward(array![1.0, -2.0, 3.0].view()).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut r = rng::split(1, 0);
        let net = Mlp::<f64>::new(&[3, 2], &mut r);
        let x = array![0.5, -1.0, 2.0];
        let out = net.forward(x.view()).unwrap();
        for j in 0..2 {
            let mut expect = net.layers[0].bias[j];
            for i in 0..3 {
                expect += x[i] * net.layers[0].weight[[i, j]];
            }
            assert!((out[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_preactivations_are_cut() {
        // Hidden unit 0 is always negative, so its outgoing weight is irrelevant.
        let mut net = Mlp::<f64>::zeros(&[1, 2, 1]);
        net.layers[0].weight = array![[1.0, 1.0]];
        net.layers[0].bias = array![-10.0, 0.0];
        net.layers[1].weight = array![[123.0], [2.0]];
        let out = net.forward(array![1.0].view()).unwrap();
        assert_eq!(out[0], 2.0);
        let g = net.backprop(array![1.0].view(), array![1.0].view(), BackwardMode::BOTH).unwrap();
        assert_eq!(g.layers[0].weight[[0, 0]], 0.0);
        assert_eq!(g.layers[0].bias[0], 0.0);
        assert_eq!(g.layers[1].weight[[0, 0]], 0.0);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut r = rng::split(2, 0);
        let net = Mlp::<f64>::new(&[3, 1], &mut r);
        let x = array![0.5, -1.0, 2.0];
        let g = net.backprop(x.view(), array![1.0].view(), BackwardMode::BOTH).unwrap();
        assert_eq!(g.layers[0].weight.column(0), x);
        assert_eq!(g.layers[0].bias, array![1.0]);
        assert_eq!(g.input.unwrap().row(0), net.layers[0].weight.column(0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Mlp::<f64>::zeros(&[3, 2]);
        assert!(net.forward(array![1.0].view()).is_err());
        assert!(net.backprop(array![1.0, 2.0, 3.0].view(), array![1.0].view(), BackwardMode::PARAMS).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut r = rng::split(3, 0);
        let net = Mlp::<f64>::new(&[4, 6, 5, 3], &mut r);
        let x = array![0.3, -0.7, 1.1, 0.2];
        let up = array![0.5, -1.5, 2.0];
        let g = net.backprop(x.view(), up.view(), BackwardMode::BOTH).unwrap();
        let f = |p: &[f64]| {
            let mut n = net.clone();
            n.set_flat_params(p);
            n.forward(x.view()).unwrap().dot(&up)
        };
        let rep = finite_diff_check(f, &net.flat_params(), &g.flatten(), &GradCheckOptions { tol: 1e-6, ..Default::default() });
        assert!(rep.passed, "{rep:?}");

        let fx = |xs: &[f64]| net.forward(ArrayView1::from(xs)).unwrap().dot(&up);
        let gx = g.input.unwrap();
        let rep = finite_diff_check(fx, x.as_slice().unwrap(), gx.as_slice().unwrap(), &GradCheckOptions { tol: 1e-6, ..Default::default() });
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn batch_gradient_is_sum_of_rows() {
        let mut r = rng::split(4, 0);
        let net = Mlp::<f64>::new(&[2, 4, 2], &mut r);
        let x = array![[0.1, 0.2], [-0.3, 0.9]];
        let up = array![[1.0, 0.0], [0.5, -0.5]];
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let batch = net.backward(&cache, up.view(), BackwardMode::PARAMS);
        let mut sum = net.backprop(x.row(0), up.row(0), BackwardMode::PARAMS).unwrap();
        sum.accumulate(&net.backprop(x.row(1), up.row(1), BackwardMode::PARAMS).unwrap());
        for (a, b) in batch.flatten().iter().zip(sum.flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn polyak_is_convex_combination() {
        let mut r = rng::split(5, 0);
        let src = Mlp::<f64>::new(&[2, 3, 1], &mut r);
        let mut dst = Mlp::<f64>::new(&[2, 3, 1], &mut r);
        let before = dst.flat_params();
        dst.polyak_from(&src, 0.25);
        for ((d, b), s) in dst.flat_params().iter().zip(before).zip(src.flat_params()) {
            assert!((d - (0.75 * b + 0.25 * s)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut r = rng::split(6, 0);
        let net = Mlp::<f32>::new(&[8, 128, 128, 1], &mut r);
        let x = Array2::from_shape_fn((256, 8), |(i, j)| ((i * 7 + j) % 13) as f32 / 13.0);
        assert_eq!(net.forward_batch(x.view()).unwrap(), net.forward_batch(x.view()).unwrap());
    }
}
