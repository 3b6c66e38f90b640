//! Metropolis-Hastings with random-walk and Langevin (MALA) proposals.

use crate::error::{invalid, Result};
use crate::rng::Rng;

use super::Target;

/// Proposal kernel of the Metropolis-Hastings chain.
#[derive(Debug, Clone, Copy)]
pub enum MhProposal {
    /// `y = x + step * z`; symmetric, so the proposal ratio drops out.
    RandomWalk { step: f64 },
    /// `y = x - step * grad E(x) + sqrt(2 step) z` with the Gaussian
    /// proposal density `q(x, y) ∝ exp(-||y - x + step grad E(x)||^2 /
    /// (4 step))`.
    Mala { step: f64 },
}

/// Chain output: one sample per step plus the empirical acceptance rate.
#[derive(Debug, Clone)]
pub struct MhRun {
    pub samples: Vec<Vec<f64>>,
    pub accept_rate: f64,
}

pub fn mh_run(
    target: &dyn Target,
    proposal: MhProposal,
    x0: &[f64],
    n_steps: usize,
    rng: &mut Rng,
) -> Result<MhRun> {
    if n_steps == 0 {
        return Err(invalid("need at least one step"));
    }
    if x0.len() != target.dim() {
        return Err(invalid("initial state dimension mismatch"));
    }
    match proposal {
        MhProposal::RandomWalk { step } if step < 0.0 => {
            return Err(invalid("random-walk step must be nonnegative"))
        }
        MhProposal::Mala { step } if step <= 0.0 => {
            return Err(invalid("MALA step must be positive"))
        }
        _ => {}
    }
    let mut x = x0.to_vec();
    let mut e_x = target.neg_log_density(&x);
    if !e_x.is_finite() {
        return Err(invalid("target is not finite at the initial state"));
    }
    let dim = x.len();
    let mut samples = Vec::with_capacity(n_steps);
    let mut accepted = 0usize;
    let mut grad_x = match proposal {
        MhProposal::Mala { .. } => target.grad(&x),
        MhProposal::RandomWalk { .. } => Vec::new(),
    };
    for _ in 0..n_steps {
        // Propose and compute the log acceptance ratio in log space; the
        // normalization constant never appears.
        let (y, log_q_ratio) = match proposal {
            MhProposal::RandomWalk { step } => {
                let y: Vec<f64> = x.iter().map(|xi| xi + step * rng.normal()).collect();
                (y, 0.0)
            }
            MhProposal::Mala { step } => {
                let y: Vec<f64> = (0..dim)
                    .map(|i| {
                        x[i] - step * grad_x[i] + (2.0 * step).sqrt() * rng.normal()
                    })
                    .collect();
                let grad_y = target.grad(&y);
                // log q(y, x) - log q(x, y)
                let mut forward = 0.0;
                let mut backward = 0.0;
                for i in 0..dim {
                    let df = y[i] - x[i] + step * grad_x[i];
                    let db = x[i] - y[i] + step * grad_y[i];
                    forward += df * df;
                    backward += db * db;
                }
                let ratio = (forward - backward) / (4.0 * step);
                (y, ratio)
            }
        };
        let e_y = target.neg_log_density(&y);
        let log_alpha = e_x - e_y + log_q_ratio;
        let u: f64 = rng.uniform();
        if u.ln() < log_alpha {
            x = y;
            e_x = e_y;
            if let MhProposal::Mala { .. } = proposal {
                grad_x = target.grad(&x);
            }
            accepted += 1;
        }
        samples.push(x.clone());
    }
    Ok(MhRun {
        samples,
        accept_rate: accepted as f64 / n_steps as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{ChainStats, FnTarget};

    fn std_gaussian(dim: usize) -> impl Target {
        FnTarget::new(
            dim,
            |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            |x: &[f64]| x.to_vec(),
        )
    }

    #[test]
    fn zero_step_random_walk_never_moves_and_always_accepts() {
        let target = std_gaussian(2);
        let mut rng = Rng::new(701);
        let run = mh_run(
            &target,
            MhProposal::RandomWalk { step: 0.0 },
            &[0.3, -0.7],
            500,
            &mut rng,
        )
        .unwrap();
        assert_eq!(run.accept_rate, 1.0);
        for s in &run.samples {
            assert_eq!(s.as_slice(), &[0.3, -0.7]);
        }
    }

    #[test]
    fn random_walk_recovers_gaussian_variance() {
        let target = std_gaussian(1);
        let mut rng = Rng::new(709);
        let run = mh_run(
            &target,
            MhProposal::RandomWalk { step: 1.0 },
            &[0.0],
            200_000,
            &mut rng,
        )
        .unwrap();
        let mut stats = ChainStats::new(1);
        for s in &run.samples {
            stats.update(s).unwrap();
        }
        let var = stats.variance()[0];
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
        assert!(run.accept_rate > 0.3 && run.accept_rate < 0.9);
    }

    #[test]
    fn mala_recovers_gaussian_variance() {
        let target = std_gaussian(1);
        let mut rng = Rng::new(719);
        let run = mh_run(
            &target,
            MhProposal::Mala { step: 0.3 },
            &[2.0],
            200_000,
            &mut rng,
        )
        .unwrap();
        let mut stats = ChainStats::new(1);
        for s in run.samples.iter().skip(1000) {
            stats.update(s).unwrap();
        }
        let var = stats.variance()[0];
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn rejects_bad_inputs_and_is_deterministic() {
        let target = std_gaussian(2);
        let mut rng = Rng::new(727);
        assert!(mh_run(
            &target,
            MhProposal::RandomWalk { step: 1.0 },
            &[0.0],
            10,
            &mut rng
        )
        .is_err());
        let nan_target = FnTarget::new(1, |_: &[f64]| f64::NAN, |_: &[f64]| vec![0.0]);
        assert!(mh_run(
            &nan_target,
            MhProposal::RandomWalk { step: 1.0 },
            &[0.0],
            10,
            &mut rng
        )
        .is_err());

        let a = mh_run(
            &target,
            MhProposal::Mala { step: 0.2 },
            &[0.1, 0.2],
            200,
            &mut Rng::new(5),
        )
        .unwrap();
        let b = mh_run(
            &target,
            MhProposal::Mala { step: 0.2 },
            &[0.1, 0.2],
            200,
            &mut Rng::new(5),
        )
        .unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
