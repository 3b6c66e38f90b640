//! Hamiltonian Monte Carlo with the Störmer-Verlet (leapfrog) integrator.
//!
//! The kinetic energy is `K(v) = v^T M^{-1} v / 2` with a diagonal mass
//! matrix. Each iteration resamples the momentum from its Gaussian marginal,
//! simulates the dynamics with leapfrog, flips the momentum sign (making the
//! proposal an involution) and accepts with probability
//! `min(1, exp(H_old - H_new))`.

use crate::error::{invalid, numeric, Result};
use crate::rng::Rng;

use super::Target;

/// Leapfrog integration of the Hamiltonian dynamics: per leap a half kick
/// `v -= h/2 grad E(x)`, a drift `x += h M^{-1} v`, and another half kick at
/// the new position. Reversible and volume preserving.
pub fn leapfrog(
    target: &dyn Target,
    mass_diag: &[f64],
    x: &[f64],
    v: &[f64],
    h: f64,
    n_leaps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(h > 0.0) {
        return Err(invalid("leapfrog step must be positive"));
    }
    if mass_diag.len() != target.dim() || mass_diag.iter().any(|m| *m <= 0.0) {
        return Err(invalid("mass diagonal must be positive and match the dimension"));
    }
    if x.len() != target.dim() || v.len() != target.dim() {
        return Err(invalid("state dimension mismatch"));
    }
    let dim = x.len();
    let mut x = x.to_vec();
    let mut v = v.to_vec();
    // The closing half kick of one leap shares its gradient with the opening
    // half kick of the next; evaluate once per position.
    let mut g = target.grad(&x);
    for _ in 0..n_leaps {
        for i in 0..dim {
            v[i] -= 0.5 * h * g[i];
        }
        for i in 0..dim {
            x[i] += h * v[i] / mass_diag[i];
        }
        g = target.grad(&x);
        for i in 0..dim {
            v[i] -= 0.5 * h * g[i];
        }
        if !x.iter().chain(v.iter()).all(|u| u.is_finite()) {
            return Err(numeric("leapfrog trajectory diverged"));
        }
    }
    Ok((x, v))
}

/// Kinetic energy `v^T M^{-1} v / 2`.
pub fn kinetic_energy(mass_diag: &[f64], v: &[f64]) -> f64 {
    v.iter()
        .zip(mass_diag)
        .map(|(vi, mi)| 0.5 * vi * vi / mi)
        .sum()
}

/// Chain output of an HMC run.
#[derive(Debug, Clone)]
pub struct HmcRun {
    pub samples: Vec<Vec<f64>>,
    pub accept_rate: f64,
}

pub fn hmc_run(
    target: &dyn Target,
    mass_diag: &[f64],
    h: f64,
    n_leaps: usize,
    x0: &[f64],
    n_steps: usize,
    rng: &mut Rng,
) -> Result<HmcRun> {
    if n_steps == 0 {
        return Err(invalid("need at least one step"));
    }
    if n_leaps == 0 {
        return Err(invalid("need at least one leapfrog step"));
    }
    if x0.len() != target.dim() {
        return Err(invalid("initial state dimension mismatch"));
    }
    let mut x = x0.to_vec();
    let mut e_x = target.neg_log_density(&x);
    if !e_x.is_finite() {
        return Err(invalid("target is not finite at the initial state"));
    }
    let dim = x.len();
    let mut samples = Vec::with_capacity(n_steps);
    let mut accepted = 0usize;
    for _ in 0..n_steps {
        // Momentum refreshment from the Gibbs marginal exp(-K(v)).
        let v: Vec<f64> = (0..dim)
            .map(|i| mass_diag[i].sqrt() * rng.normal())
            .collect();
        let h_old = e_x + kinetic_energy(mass_diag, &v);
        match leapfrog(target, mass_diag, &x, &v, h, n_leaps) {
            Ok((x_new, v_new)) => {
                // Momentum flip; K is even so H is unchanged by it.
                let v_new: Vec<f64> = v_new.iter().map(|u| -u).collect();
                let e_new = target.neg_log_density(&x_new);
                let h_new = e_new + kinetic_energy(mass_diag, &v_new);
                let u: f64 = rng.uniform();
                if u.ln() < h_old - h_new {
                    x = x_new;
                    e_x = e_new;
                    accepted += 1;
                }
            }
            Err(crate::Error::Numeric(_)) => {
                // Divergent trajectory counts as a rejection.
            }
            Err(e) => return Err(e),
        }
        samples.push(x.clone());
    }
    Ok(HmcRun {
        samples,
        accept_rate: accepted as f64 / n_steps as f64,
    })
}
