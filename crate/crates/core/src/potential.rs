//! Negative-log Gaussian-mixture potentials.
//!
//! A potential is `phi(t) = -log sum_i w_i exp(-(t - mu_i)^2 / (2 sigma^2))`
//! with the means on an equidistant grid over `[-nu, nu]` and a shared,
//! fixed variance. Outside the grid the nearest component dominates and the
//! potential grows quadratically; no special casing is needed.
//!
//! Evaluation shifts all exponents by the one at the grid point nearest to
//! `t`, so the summed terms stay in `[weight_floor, sum of weights]` for any
//! finite `t` and the log never sees zero or overflow. The shifted
//! exponentials are produced incrementally (two `exp` calls per evaluation
//! instead of one per component), which the gradient-heavy samplers rely on.

use crate::error::{invalid, Result};

/// Lower bound kept on every mixture weight so the density stays positive.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPotential {
    weights: Vec<f64>,
    nu: f64,
    sigma2: f64,
    // Cached grid quantities.
    delta: f64,
    inv_s2: f64,
    /// `exp(-delta^2 / sigma^2)`: ratio between consecutive step multipliers.
    ratio_decay: f64,
    /// `exp(-delta^2 / (2 sigma^2))`.
    half_decay: f64,
}

impl GmmPotential {
    /// Builds a potential from unnormalized positive weights. `nu` is the
    /// half-width of the mean grid; a single-component potential has its
    /// mean at zero.
    pub fn new(weights: Vec<f64>, nu: f64, sigma2: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("potential needs at least one component"));
        }
        if !(nu > 0.0) || !(sigma2 > 0.0) {
            return Err(invalid("nu and sigma2 must be positive"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < WEIGHT_FLOOR) {
            return Err(invalid(format!(
                "weights must be finite and at least {WEIGHT_FLOOR}"
            )));
        }
        let delta = if weights.len() > 1 {
            2.0 * nu / (weights.len() as f64 - 1.0)
        } else {
            0.0
        };
        let inv_s2 = 1.0 / sigma2;
        Ok(Self {
            weights,
            nu,
            sigma2,
            delta,
            inv_s2,
            ratio_decay: (-delta * delta * inv_s2).exp(),
            half_decay: (-0.5 * delta * delta * inv_s2).exp(),
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces the weights, clamping to the positivity floor.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(invalid("component count cannot change"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weights must be finite"));
        }
        for (dst, &src) in self.weights.iter_mut().zip(weights) {
            *dst = src.max(WEIGHT_FLOOR);
        }
        Ok(())
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.weights.len() == 1 {
            0.0
        } else {
            -self.nu + self.delta * i as f64
        }
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.weights.len()).map(|i| self.mean(i)).collect()
    }

    fn nearest_index(&self, t: f64) -> usize {
        if self.weights.len() == 1 || self.delta == 0.0 {
            return 0;
        }
        let raw = (t + self.nu) / self.delta;
        raw.round().clamp(0.0, (self.weights.len() - 1) as f64) as usize
    }

    /// Visits every component with its shifted exponential
    /// `c_m = exp(z_m - z_anchor)` (`z_m` the Gaussian exponent,
    /// `z_anchor` the one at the grid point nearest to `t`) and
    /// `d_m = (t - mu_m) / sigma^2`. The anchor guarantees `c_m <= 1`.
    #[inline]
    fn walk(&self, t: f64, mut f: impl FnMut(usize, f64, f64)) -> f64 {
        let m0 = self.nearest_index(t);
        let r0 = t - self.mean(m0);
        let z_anchor = -0.5 * r0 * r0 * self.inv_s2;
        let d0 = r0 * self.inv_s2;
        let step_d = self.delta * self.inv_s2;
        // Inside the grid |r0| <= delta/2 keeps this moderate; outside it
        // the sweep pointing away from t is empty, so an overflowed or
        // underflowed multiplier is either unused or flushes to zero.
        let up0 = (self.delta * d0).exp();

        f(m0, 1.0, d0);
        // Downward sweep: multiplier exp(-delta*(t-mu_m)/s2 - delta^2/(2 s2)).
        let mut c = 1.0;
        let mut mult = self.half_decay / up0;
        let mut d = d0;
        for m in (0..m0).rev() {
            c *= mult;
            mult *= self.ratio_decay;
            d += step_d;
            f(m, c, d);
        }
        // Upward sweep: multiplier exp(delta*(t-mu_m)/s2 - delta^2/(2 s2)).
        let mut c = 1.0;
        let mut mult = self.half_decay * up0;
        let mut d = d0;
        for m in m0 + 1..self.weights.len() {
            c *= mult;
            mult *= self.ratio_decay;
            d -= step_d;
            f(m, c, d);
        }
        z_anchor
    }

    /// Value and first two derivatives of the potential; `t` must be finite.
    pub fn eval(&self, t: f64) -> Result<(f64, f64, f64)> {
        if !t.is_finite() {
            return Err(invalid("potential argument must be finite"));
        }
        Ok(self.eval_unchecked(t))
    }

    /// As [`eval`](Self::eval) without the finiteness check; non-finite
    /// inputs propagate NaN.
    #[inline]
    pub fn eval_unchecked(&self, t: f64) -> (f64, f64, f64) {
        let weights = &self.weights;
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let z_anchor = self.walk(t, |m, c, d| {
            let wc = weights[m] * c;
            s0 += wc;
            let wcd = wc * d;
            s1 += wcd;
            s2 += wcd * d;
        });
        let phi = -z_anchor - s0.ln();
        let dphi = s1 / s0;
        let ddphi = dphi * dphi - s2 / s0 + self.inv_s2;
        (phi, dphi, ddphi)
    }

    /// Accumulates `coeff_phi * d(phi)/d(w_m) + coeff_dphi * d(phi')/d(w_m)`
    /// into `acc[m]` for every component. Used by the parameter adjoints.
    pub fn accumulate_weight_grads(
        &self,
        t: f64,
        coeff_phi: f64,
        coeff_dphi: f64,
        acc: &mut [f64],
    ) {
        debug_assert_eq!(acc.len(), self.weights.len());
        // First pass for the moments, second for the per-component terms.
        let weights = &self.weights;
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        self.walk(t, |m, c, d| {
            let wc = weights[m] * c;
            s0 += wc;
            s1 += wc * d;
        });
        let dphi = s1 / s0;
        let inv_s0 = 1.0 / s0;
        self.walk(t, |m, c, d| {
            // d(phi)/dw_m = -c_m / s0, d(phi')/dw_m = (c_m/s0) (d_m - phi').
            let cs = c * inv_s0;
            acc[m] += -coeff_phi * cs + coeff_dphi * cs * (d - dphi);
        });
    }
}
