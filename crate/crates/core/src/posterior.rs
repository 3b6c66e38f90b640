//! Tempered, weighted posterior energy.
//!
//! The sampling and optimization targets use
//! `U(x) = [ -log p(y|x) + lambda E(x) + w n (mean(x) - p0)^2 / 2 ] / T`,
//! the negative log of `(p(y|x) p(x)^lambda)^(1/T)` up to a constant. The
//! optional quadratic mean anchor restores coercivity along the constant
//! mode that DC-free filter banks annihilate.

use crate::error::{invalid, Result};
use crate::foe::FoeModel;
use crate::image::Image;
use crate::likelihood::gaussian_negloglik;
use crate::operators::{ForwardOperator, Measurement};

/// Quadratic penalty `weight * n * (mean(x) - p0)^2 / 2` on the image mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub p0: f64,
    pub weight: f64,
}

/// Everything that defines the posterior target for one inverse problem.
#[derive(Debug, Clone)]
pub struct PosteriorSpec {
    pub op: ForwardOperator,
    /// Likelihood noise variance `sigma^2`.
    pub noise_var: f64,
    /// Prior weight `lambda >= 0`.
    pub lambda: f64,
    /// Temperature `T > 0`; the density is raised to `1/T`.
    pub temperature: f64,
    pub anchor: Option<Anchor>,
}

impl PosteriorSpec {
    pub fn new(op: ForwardOperator, noise_var: f64, lambda: f64, temperature: f64) -> Result<Self> {
        let spec = Self {
            op,
            noise_var,
            lambda,
            temperature,
            anchor: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_anchor(mut self, p0: f64, weight: f64) -> Result<Self> {
        if weight < 0.0 {
            return Err(invalid("anchor weight must be nonnegative"));
        }
        self.anchor = Some(Anchor { p0, weight });
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_var > 0.0) {
            return Err(invalid("noise variance must be positive"));
        }
        if self.lambda < 0.0 {
            return Err(invalid("lambda must be nonnegative"));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid("temperature must be positive"));
        }
        if let Some(a) = &self.anchor {
            if a.weight < 0.0 {
                return Err(invalid("anchor weight must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Posterior energy and its exact gradient.
pub fn posterior_energy_grad(
    spec: &PosteriorSpec,
    model: &FoeModel,
    y: &Measurement,
    x: &Image,
) -> Result<(f64, Image)> {
    spec.validate()?;
    let (mut value, mut grad) = gaussian_negloglik(y, x, &spec.op, spec.noise_var)?;
    if spec.lambda > 0.0 {
        let (e, eg) = model.energy_value_grad(x)?;
        value += spec.lambda * e;
        grad.axpy(spec.lambda, &eg);
    }
    if let Some(anchor) = &spec.anchor {
        if anchor.weight > 0.0 {
            let n = x.len() as f64;
            let dev = x.mean() - anchor.p0;
            value += 0.5 * anchor.weight * n * dev * dev;
            grad.add_scalar(anchor.weight * dev);
        }
    }
    let inv_t = 1.0 / spec.temperature;
    grad.scale(inv_t);
    Ok((value * inv_t, grad))
}

/// Posterior energy without the gradient (cheaper inner loop for line
/// searches and acceptance tests).
pub fn posterior_energy(
    spec: &PosteriorSpec,
    model: &FoeModel,
    y: &Measurement,
    x: &Image,
) -> Result<f64> {
    spec.validate()?;
    let ax = spec.op.apply(x)?;
    let residual = ax.sub(y)?;
    let d = residual.len() as f64;
    let mut value = 0.5 * d * (2.0 * std::f64::consts::PI * spec.noise_var).ln()
        + spec.op.norm_sq(&residual)? / (2.0 * spec.noise_var);
    if spec.lambda > 0.0 {
        value += spec.lambda * model.energy(x)?;
    }
    if let Some(anchor) = &spec.anchor {
        if anchor.weight > 0.0 {
            let n = x.len() as f64;
            let dev = x.mean() - anchor.p0;
            value += 0.5 * anchor.weight * n * dev * dev;
        }
    }
    Ok(value / spec.temperature)
}

/// Power-iteration estimate of the largest eigenvalue of the posterior
/// Hessian at `x`, used to pick Langevin step sizes. Deterministic.
pub fn posterior_lipschitz_estimate(
    spec: &PosteriorSpec,
    model: &FoeModel,
    x: &Image,
    iters: usize,
) -> Result<f64> {
    let (h, w) = (x.height(), x.width());
    let mut v = Image::zeros(h, w);
    for (i, d) in v.data_mut().iter_mut().enumerate() {
        *d = ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5;
    }
    let nv = v.norm();
    v.scale(1.0 / nv);
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let mut hv = hessian_vec(spec, model, x, &v)?;
        lambda = hv.norm();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        hv.scale(1.0 / lambda);
        v = hv;
    }
    Ok(lambda)
}

/// Hessian-vector product of the posterior energy.
pub fn hessian_vec(
    spec: &PosteriorSpec,
    model: &FoeModel,
    x: &Image,
    v: &Image,
) -> Result<Image> {
    let av = spec.op.apply(v)?;
    let mut out = spec.op.adjoint(&av)?;
    out.scale(1.0 / spec.noise_var);
    if spec.lambda > 0.0 {
        out.axpy(spec.lambda, &model.energy_hvp(x, v)?);
    }
    if let Some(anchor) = &spec.anchor {
        if anchor.weight > 0.0 {
            out.add_scalar(anchor.weight * v.mean());
        }
    }
    out.scale(1.0 / spec.temperature);
    Ok(out)
}
