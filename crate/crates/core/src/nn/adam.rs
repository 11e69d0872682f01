use serde::{Deserialize, Serialize};

use super::{GradBundle, Mlp, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction; moments are flat in [`Mlp::flat_params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self { config, m: vec![F::zero(); num_params], v: vec![F::zero(); num_params], t: 0 }
    }

    pub fn for_net(config: AdamConfig, net: &Mlp<F>) -> Self {
        Self::new(config, net.num_params())
    }

    /// One descent step on `net` along `grad`.
    pub fn step(&mut self, net: &mut Mlp<F>, grad: &GradBundle<F>) {
        assert_eq!(grad.layers.len(), net.layers.len(), "gradient does not mirror the network");
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = F::one() - F::lit(c.beta1.powi(self.t.min(i32::MAX as u64) as i32));
        let bc2 = F::one() - F::lit(c.beta2.powi(self.t.min(i32::MAX as u64) as i32));
        let lr = F::lit(c.lr);
        let eps = F::lit(c.eps);
        let mut k = 0;
        for (layer, g) in net.layers.iter_mut().zip(&grad.layers) {
            let params = layer.weight.iter_mut().zip(g.weight.iter()).chain(layer.bias.iter_mut().zip(g.bias.iter()));
            for (p, &gi) in params {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = b1 * *m + (F::one() - b1) * gi;
                *v = b2 * *v + (F::one() - b2) * gi * gi;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
                k += 1;
            }
        }
    }
}
