//! Two-block Gibbs sampling for the latent-variable form of a Gaussian
//! mixture: `z | x` is categorical with the exact posterior responsibilities
//! and `x | z` is the selected Gaussian, so both conditionals are sampled
//! exactly and every sweep is accepted.

use crate::error::{invalid, numeric, Result};
use crate::rng::Rng;

/// Isotropic Gaussian mixture with weights on the simplex.
#[derive(Debug, Clone)]
pub struct GmmSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GmmSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len()
        {
            return Err(invalid("weights, means and variances must align"));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(invalid("weights must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("weights must sum to one"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(invalid("means must share one nonzero dimension"));
        }
        if variances.iter().any(|v| *v <= 0.0) {
            return Err(invalid("variances must be positive"));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }
}

/// Exact conditional distribution of the latent component given `x`:
/// `p(z = i | x) ∝ w_i sigma_i^{-d} exp(-||x - mu_i||^2 / (2 sigma_i^2))`.
pub fn gibbs_gmm_conditional(spec: &GmmSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.dim() {
        return Err(invalid("state dimension mismatch"));
    }
    let d = spec.dim() as f64;
    let mut logits = Vec::with_capacity(spec.n_components());
    for i in 0..spec.n_components() {
        let var = spec.variances[i];
        let dist2: f64 = x
            .iter()
            .zip(&spec.means[i])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let logit = if spec.weights[i] > 0.0 {
            spec.weights[i].ln() - 0.5 * d * var.ln() - 0.5 * dist2 / var
        } else {
            f64::NEG_INFINITY
        };
        logits.push(logit);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(numeric("no component carries mass at the current state"));
    }
    let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(probs)
}

/// Runs the two-block Gibbs sweep `z | x` then `x | z`, returning both the
/// visited states and the latent assignments.
pub fn gibbs_gmm_run_with_latent(
    spec: &GmmSpec,
    x0: &[f64],
    n_steps: usize,
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if x0.len() != spec.dim() {
        return Err(invalid("initial state dimension mismatch"));
    }
    let mut x = x0.to_vec();
    let mut xs = Vec::with_capacity(n_steps);
    let mut zs = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let probs = gibbs_gmm_conditional(spec, &x)?;
        let z = sample_categorical(&probs, rng);
        let sigma = spec.variances[z].sqrt();
        for (xi, mu) in x.iter_mut().zip(&spec.means[z]) {
            *xi = mu + sigma * rng.normal();
        }
        xs.push(x.clone());
        zs.push(z);
    }
    Ok((xs, zs))
}

/// As [`gibbs_gmm_run_with_latent`] with the latent variable dropped.
pub fn gibbs_gmm_run(
    spec: &GmmSpec,
    x0: &[f64],
    n_steps: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    Ok(gibbs_gmm_run_with_latent(spec, x0, n_steps, rng)?.0)
}

fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
