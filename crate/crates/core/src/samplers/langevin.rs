//! Overdamped (ULA) and underdamped Langevin samplers.
//!
//! ULA is the Euler-Maruyama discretization
//! `X_{k+1} = X_k - tau grad E(X_k) + sqrt(2 tau) Z_k`; its stationary law is
//! biased at order `tau`. The underdamped sampler freezes the gradient over
//! each step and draws the next `(x, v)` pair exactly from the Gaussian
//! transition of the resulting Ornstein-Uhlenbeck system, per coordinate via
//! the 2x2 Cholesky factor of the block-scalar covariance.

use crate::error::{invalid, numeric, Result};
use crate::rng::Rng;

use super::Target;

/// One ULA update with caller-supplied standard normal noise.
pub fn ula_step(target: &dyn Target, tau: f64, x: &mut [f64], noise: &[f64]) {
    let g = target.grad(x);
    let scale = (2.0 * tau).sqrt();
    for i in 0..x.len() {
        x[i] += -tau * g[i] + scale * noise[i];
    }
}

/// Runs ULA for `n_steps`, collecting every iterate.
pub fn ula_run(
    target: &dyn Target,
    tau: f64,
    x0: &[f64],
    n_steps: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut samples = Vec::with_capacity(n_steps);
    ula_run_with(target, tau, x0, n_steps, rng, |_, x| {
        samples.push(x.to_vec())
    })?;
    Ok(samples)
}

/// Streaming ULA driver: `visit(step_index, state)` is called after every
/// update and the final state is returned. Fails with the step index when an
/// iterate becomes non-finite.
pub fn ula_run_with(
    target: &dyn Target,
    tau: f64,
    x0: &[f64],
    n_steps: usize,
    rng: &mut Rng,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(invalid("step size must be positive"));
    }
    if x0.len() != target.dim() {
        return Err(invalid("initial state dimension mismatch"));
    }
    let mut x = x0.to_vec();
    let mut noise = vec![0.0; x.len()];
    for k in 0..n_steps {
        rng.fill_normal(&mut noise);
        ula_step(target, tau, &mut x, &noise);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(numeric(format!("ULA diverged at step {k}")));
        }
        visit(k, &x);
    }
    Ok(x)
}

/// Friction, inverse-mass scale and step size of the underdamped dynamics.
#[derive(Debug, Clone, Copy)]
pub struct UnderdampedParams {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl UnderdampedParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.tau > 0.0) {
            return Err(invalid("alpha, beta and tau must be positive"));
        }
        Ok(())
    }
}

/// Coefficients of the exact Gaussian transition over one step of length
/// `h` with the gradient frozen: the mean is
/// `x' = x + c_xv v - (beta/alpha) c_xg g` and `v' = c_vv v - (beta/alpha)
/// c_vg g`, the covariance is block-scalar with entries `(cov_xx, cov_xv,
/// cov_vv)` per coordinate.
#[derive(Debug, Clone, Copy)]
pub struct UnderdampedMoments {
    pub c_xv: f64,
    pub c_xg: f64,
    pub c_vv: f64,
    pub c_vg: f64,
    pub cov_xx: f64,
    pub cov_xv: f64,
    pub cov_vv: f64,
}

/// Exact transition moments of the frozen-gradient underdamped dynamics.
pub fn underdamped_moments(alpha: f64, beta: f64, h: f64) -> UnderdampedMoments {
    // 1 - exp(-alpha h) via expm1 for small-step accuracy.
    let em1 = -(-alpha * h).exp_m1();
    let em2 = -(-2.0 * alpha * h).exp_m1();
    let c1 = em1 / alpha;
    UnderdampedMoments {
        c_xv: c1,
        c_xg: h - c1,
        c_vv: 1.0 - em1,
        c_vg: em1,
        cov_xx: 2.0 * beta / alpha * (h - 2.0 * c1 + em2 / (2.0 * alpha)),
        cov_xv: beta / alpha * em1 * em1,
        cov_vv: beta * em2,
    }
}

/// Result of one underdamped transition.
#[derive(Debug, Clone)]
pub struct UnderdampedStep {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Set when the covariance was numerically non-PSD (extremely small
    /// steps) and the noise was dropped for this transition.
    pub noise_degenerate: bool,
}

/// Samples `(x', v')` from the exact Gaussian transition with the gradient
/// frozen at `x`.
pub fn underdamped_step(
    target: &dyn Target,
    p: &UnderdampedParams,
    x: &[f64],
    v: &[f64],
    rng: &mut Rng,
) -> Result<UnderdampedStep> {
    p.validate()?;
    if x.len() != target.dim() || v.len() != target.dim() {
        return Err(invalid("state dimension mismatch"));
    }
    let m = underdamped_moments(p.alpha, p.beta, p.tau);
    let ba = p.beta / p.alpha;
    let g = target.grad(x);
    // Per-coordinate 2x2 Cholesky factor of the block-scalar covariance.
    let mut degenerate = false;
    let (l11, l21, l22);
    if m.cov_xx > 0.0 {
        l11 = m.cov_xx.sqrt();
        l21 = m.cov_xv / l11;
        let rem = m.cov_vv - l21 * l21;
        if rem >= 0.0 {
            l22 = rem.sqrt();
        } else {
            degenerate = true;
            l22 = 0.0;
        }
    } else {
        degenerate = m.cov_xx < 0.0 || m.cov_xv != 0.0;
        l11 = 0.0;
        l21 = 0.0;
        l22 = if m.cov_vv > 0.0 { m.cov_vv.sqrt() } else { 0.0 };
    }
    if degenerate {
        log::warn!(
            "underdamped covariance not PSD at tau = {}; taking a noise-free mean step",
            p.tau
        );
    }
    let mut xn = vec![0.0; x.len()];
    let mut vn = vec![0.0; v.len()];
    for i in 0..x.len() {
        let mean_x = x[i] + m.c_xv * v[i] - ba * m.c_xg * g[i];
        let mean_v = m.c_vv * v[i] - ba * m.c_vg * g[i];
        if degenerate {
            xn[i] = mean_x;
            vn[i] = mean_v;
        } else {
            let z1 = rng.normal();
            let z2 = rng.normal();
            xn[i] = mean_x + l11 * z1;
            vn[i] = mean_v + l21 * z1 + l22 * z2;
        }
    }
    Ok(UnderdampedStep {
        x: xn,
        v: vn,
        noise_degenerate: degenerate,
    })
}

/// Iterates [`underdamped_step`]; the returned trajectory contains the
/// initial state followed by one entry per step.
pub fn underdamped_run(
    target: &dyn Target,
    p: &UnderdampedParams,
    x0: &[f64],
    v0: &[f64],
    n_steps: usize,
    rng: &mut Rng,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    p.validate()?;
    if x0.len() != target.dim() || v0.len() != target.dim() {
        return Err(invalid("state dimension mismatch"));
    }
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push((x0.to_vec(), v0.to_vec()));
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    for k in 0..n_steps {
        let step = underdamped_step(target, p, &x, &v, rng)?;
        x = step.x;
        v = step.v;
        if !x.iter().chain(v.iter()).all(|u| u.is_finite()) {
            return Err(numeric(format!("underdamped chain diverged at step {k}")));
        }
        out.push((x.clone(), v.clone()));
    }
    Ok(out)
}
