use ndarray::{Array1, ArrayView1};

/// KL(p‖q) + KL(q‖p) in nats. Infinite when either row puts mass where the
/// other has none.
pub fn symmetric_kl_direct(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    kl(p, q) + kl(q, p)
}

fn kl(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).ln();
        }
    }
    total
}

/// p(z|s,a) for every latent at one state, by Bayes from π(·|s,z) and p(z|s).
/// Actions with no mass under any latent get an all-zero column.
pub fn exact_posterior(policies: &[ArrayView1<f64>], state_posterior: &[f64]) -> Vec<Array1<f64>> {
    let na = policies[0].len();
    let mut post: Vec<Array1<f64>> = vec![Array1::zeros(na); policies.len()];
    for a in 0..na {
        let joint: Vec<f64> = policies.iter().zip(state_posterior).map(|(pi, &pz)| pi[a] * pz).collect();
        let marginal: f64 = joint.iter().sum();
        if marginal > 0.0 {
            for (z, j) in joint.iter().enumerate() {
                post[z][a] = j / marginal;
            }
        }
    }
    post
}

/// E_{a~π_i}[log p(z_i|s,a)/p(z_j|s,a)] + E_{a~π_j}[log p(z_j|s,a)/p(z_i|s,a)],
/// with the posterior computed exactly from `policies` and `state_posterior`.
pub fn symmetric_kl_via_discriminator(
    policies: &[ArrayView1<f64>],
    state_posterior: &[f64],
    i: usize,
    j: usize,
) -> f64 {
    let post = exact_posterior(policies, state_posterior);
    let half = |from: usize, to: usize| -> f64 {
        let mut total = 0.0;
        for (a, &pa) in policies[from].iter().enumerate() {
            if pa > 0.0 {
                let (num, den) = (post[from][a], post[to][a]);
                if den <= 0.0 {
                    return f64::INFINITY;
                }
                total += pa * (num / den).ln();
            }
        }
        total
    };
    half(i, j) + half(j, i)
}
