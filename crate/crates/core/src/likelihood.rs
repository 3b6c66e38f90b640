//! Gaussian and Poisson likelihoods and measurement synthesis.

use crate::error::{domain, invalid, Result};
use crate::image::Image;
use crate::operators::{ForwardOperator, Measurement};
use crate::rng::Rng;

/// Negative log-likelihood of additive isotropic Gaussian noise,
/// `d/2 log(2 pi sigma^2) + ||y - A x||^2 / (2 sigma^2)`, with its exact
/// gradient `A^T (A x - y) / sigma^2`. The additive constant is retained in
/// reported values; it cancels in gradients and acceptance ratios.
pub fn gaussian_negloglik(
    y: &Measurement,
    x: &Image,
    op: &ForwardOperator,
    noise_var: f64,
) -> Result<(f64, Image)> {
    if !(noise_var > 0.0) {
        return Err(invalid("noise variance must be positive"));
    }
    let ax = op.apply(x)?;
    let residual = ax.sub(y)?;
    let d = residual.len() as f64;
    let value = 0.5 * d * (2.0 * std::f64::consts::PI * noise_var).ln()
        + op.norm_sq(&residual)? / (2.0 * noise_var);
    let mut grad = op.adjoint(&residual)?;
    grad.scale(1.0 / noise_var);
    Ok((value, grad))
}

/// Negative log-likelihood of independent Poisson counts with intensity
/// `A x`, `sum_i (Ax)_i - y_i log (Ax)_i + log(y_i!)`, with gradient
/// `A^T (1 - y / Ax)`.
pub fn poisson_negloglik(
    y: &Measurement,
    x: &Image,
    op: &ForwardOperator,
) -> Result<(f64, Image)> {
    let counts = y.as_real()?;
    if counts.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
        return Err(invalid("Poisson data must be integer-valued and nonnegative"));
    }
    let ax_m = op.apply(x)?;
    let ax = ax_m.as_real()?;
    if ax.len() != counts.len() {
        return Err(invalid("measurement length mismatch"));
    }
    if ax.iter().any(|v| *v <= 0.0) {
        return Err(domain("Poisson intensity must be strictly positive"));
    }
    let mut value = 0.0;
    let mut dual = Vec::with_capacity(ax.len());
    for (&mu, &k) in ax.iter().zip(counts) {
        value += mu - k * mu.ln() + ln_factorial(k);
        dual.push(1.0 - k / mu);
    }
    let grad = op.adjoint(&Measurement::Real(dual))?;
    Ok((value, grad))
}

/// `log(n!)` for a nonnegative integer given as f64.
fn ln_factorial(n: f64) -> f64 {
    ln_gamma(n + 1.0)
}

/// Lanczos approximation of `log Gamma(x)` for positive `x`; accurate to
/// about 1e-13 relative, plenty for likelihood constants.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEFF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEFF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEFF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Synthesizes a measurement `y = A x + noise`. Real measurements receive
/// `N(0, noise_var)` per entry; complex measurements receive independent
/// `N(0, noise_var / 2)` on the real and imaginary parts so the total
/// per-entry variance is `noise_var`.
pub fn synthesize_data(
    op: &ForwardOperator,
    x: &Image,
    noise_var: f64,
    rng: &mut Rng,
) -> Result<Measurement> {
    if noise_var < 0.0 {
        return Err(invalid("noise variance must be nonnegative"));
    }
    let mut y = op.apply(x)?;
    if noise_var > 0.0 {
        match &mut y {
            Measurement::Real(v) => {
                let s = noise_var.sqrt();
                for e in v.iter_mut() {
                    *e += s * rng.normal();
                }
            }
            Measurement::Complex(v) => {
                let s = (noise_var / 2.0).sqrt();
                for e in v.iter_mut() {
                    e.re += s * rng.normal();
                    e.im += s * rng.normal();
                }
            }
        }
    }
    Ok(y)
}

/// Noise variance that realizes a prescribed signal-to-noise ratio in dB:
/// the mean over images of `sum_i |(A x)_i|^2 / d` divided by
/// `10^(snr_db / 10)`.
pub fn snr_matched_noise_var(
    op: &ForwardOperator,
    images: &[Image],
    snr_db: f64,
) -> Result<f64> {
    if images.is_empty() {
        return Err(invalid("need at least one image"));
    }
    let mut mean_power = 0.0;
    for x in images {
        let ax = op.apply(x)?;
        let power: f64 = match &ax {
            Measurement::Real(v) => v.iter().map(|a| a * a).sum(),
            Measurement::Complex(v) => v.iter().map(|a| a.norm_sqr()).sum(),
        };
        mean_power += power / ax.len() as f64;
    }
    Ok(mean_power / images.len() as f64 / 10f64.powf(snr_db / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_fourier_mask, RadonGeometry};

    #[test]
    fn zero_residual_leaves_only_the_constant() {
        let mut rng = Rng::new(301);
        let x = Image::random_uniform(6, 6, &mut rng);
        let op = ForwardOperator::identity(6, 6);
        let y = op.apply(&x).unwrap();
        let v = 0.3;
        let (value, grad) = gaussian_negloglik(&y, &x, &op, v).unwrap();
        let want = 0.5 * 36.0 * (2.0 * std::f64::consts::PI * v).ln();
        assert!((value - want).abs() < 1e-12);
        assert!(grad.norm() < 1e-12);
    }

    #[test]
    fn scalar_gaussian_plug_in() {
        // One pixel, y = 0, x = 1, sigma^2 = 1.
        let op = ForwardOperator::identity(1, 1);
        let x = Image::constant(1, 1, 1.0);
        let y = Measurement::Real(vec![0.0]);
        let (value, grad) = gaussian_negloglik(&y, &x, &op, 1.0).unwrap();
        let want = 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5;
        assert!((value - want).abs() < 1e-14);
        assert!((grad.data()[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_grad_matches_finite_differences_for_all_operators() {
        let mut rng = Rng::new(307);
        let ops = vec![
            ForwardOperator::identity(8, 8),
            ForwardOperator::MaskedFourier(
                make_fourier_mask(8, 8, 0.2, 0.4, &mut rng).unwrap(),
            ),
            ForwardOperator::Radon {
                height: 8,
                width: 8,
                geometry: RadonGeometry::equispaced(12, 1.0, 5).unwrap(),
            },
        ];
        for op in ops {
            let x0 = Image::random_uniform(8, 8, &mut rng);
            let truth = Image::random_uniform(8, 8, &mut rng);
            let y = synthesize_data(&op, &truth, 0.05, &mut rng).unwrap();
            let v = 0.2;
            let (_, grad) = gaussian_negloglik(&y, &x0, &op, v).unwrap();
            let h = 1e-6;
            for i in (0..64).step_by(7) {
                let mut xp = x0.clone();
                xp.data_mut()[i] += h;
                let mut xm = x0.clone();
                xm.data_mut()[i] -= h;
                let fp = gaussian_negloglik(&y, &xp, &op, v).unwrap().0;
                let fm = gaussian_negloglik(&y, &xm, &op, v).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (grad.data()[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{op:?} pixel {i}: {} vs {fd}",
                    grad.data()[i]
                );
            }
        }
    }

    #[test]
    fn poisson_stationarity_and_scalar_value() {
        let op = ForwardOperator::identity(2, 2);
        let x = Image::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Measurement::Real(vec![1.0, 2.0, 3.0, 4.0]);
        let (_, grad) = poisson_negloglik(&y, &x, &op).unwrap();
        assert!(grad.norm() < 1e-12);

        let op = ForwardOperator::identity(1, 1);
        let x = Image::constant(1, 1, 1.0);
        let y = Measurement::Real(vec![1.0]);
        let (value, _) = poisson_negloglik(&y, &x, &op).unwrap();
        assert!((value - 1.0).abs() < 1e-12, "value {value}");
    }

    #[test]
    fn poisson_grad_matches_finite_differences() {
        let mut rng = Rng::new(311);
        let op = ForwardOperator::identity(8, 8);
        let mut x = Image::random_uniform(8, 8, &mut rng);
        x.add_scalar(0.5);
        let y = Measurement::Real((0..64).map(|i| (i % 5) as f64).collect());
        let (_, grad) = poisson_negloglik(&y, &x, &op).unwrap();
        let h = 1e-6;
        for i in (0..64).step_by(5) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fp = poisson_negloglik(&y, &xp, &op).unwrap().0;
            let fm = poisson_negloglik(&y, &xm, &op).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (grad.data()[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "pixel {i}"
            );
        }
    }

    #[test]
    fn poisson_rejects_bad_domains() {
        let op = ForwardOperator::identity(1, 1);
        let zero = Image::constant(1, 1, 0.0);
        let y = Measurement::Real(vec![1.0]);
        assert!(matches!(
            poisson_negloglik(&y, &zero, &op),
            Err(crate::Error::Domain(_))
        ));
        let x = Image::constant(1, 1, 1.0);
        assert!(poisson_negloglik(&Measurement::Real(vec![1.5]), &x, &op).is_err());
        assert!(poisson_negloglik(&Measurement::Real(vec![-1.0]), &x, &op).is_err());
    }

    #[test]
    fn synthesis_is_exact_without_noise_and_seeded() {
        let mut rng = Rng::new(313);
        let x = Image::random_uniform(6, 6, &mut rng);
        let op = ForwardOperator::identity(6, 6);
        let y = synthesize_data(&op, &x, 0.0, &mut rng).unwrap();
        assert_eq!(y.as_real().unwrap(), x.data());
        let a = synthesize_data(&op, &x, 0.3, &mut Rng::new(9)).unwrap();
        let b = synthesize_data(&op, &x, 0.3, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn complex_noise_splits_variance_across_parts() {
        let mut rng = Rng::new(317);
        let mask = make_fourier_mask(40, 40, 1.0, 1.0, &mut rng).unwrap();
        let op = ForwardOperator::MaskedFourier(mask);
        let x = Image::zeros(40, 40);
        let noise_var = 0.8;
        // Accumulate over repeated draws to reach ~10^6 scalar samples.
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut n = 0usize;
        for _ in 0..600 {
            let y = synthesize_data(&op, &x, noise_var, &mut rng).unwrap();
            for z in y.as_complex().unwrap() {
                sum += z.re + z.im;
                sum_sq += z.re * z.re + z.im * z.im;
                n += 2;
            }
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let per_part = noise_var / 2.0;
        assert!((var - per_part).abs() < 0.01 * per_part, "var {var}");
    }

    #[test]
    fn ln_gamma_matches_known_values() {
        // Gamma(n) = (n-1)! for small integers.
        let mut fact = 1.0f64;
        for n in 1..15 {
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-11);
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
    }
}
