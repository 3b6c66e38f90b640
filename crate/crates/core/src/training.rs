//! Parameter estimation: denoising score matching and bilevel learning.
//!
//! Score matching minimizes the Monte-Carlo estimate of
//! `E || sigma grad E(X + sigma N) - N ||^2`. Bilevel learning solves a
//! denoising lower-level problem per pair and differentiates the upper loss
//! through its optimality condition with the implicit function theorem,
//! applying the inverse Hessian by conjugate gradient. Both trainers use
//! Adam with separate learning rates per parameter group, keep the mixture
//! weights above their positivity floor after every step, and are
//! bit-reproducible under a fixed seed.

use crate::error::{invalid, numeric, Result};
use crate::foe::{FilterBank, FoeModel, FoeParamGrads};
use crate::image::Image;
use crate::optimize::{apgd, conjugate_gradient, Adam, AdamConfig, ApgdConfig};
use crate::patch::extract_patches;
use crate::potential::GmmPotential;
use crate::rng::Rng;

/// Score-matching configuration; defaults follow the experimental setup.
#[derive(Debug, Clone)]
pub struct DsmConfig {
    /// Smoothing noise level `sigma` of the target density.
    pub noise_sigma: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub lr_weights: f64,
    pub lr_betas: f64,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for DsmConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 2e-2,
            batch_size: 16,
            n_steps: 1000,
            lr_weights: 1e-5,
            lr_betas: 2e-4,
            patch_size: 96,
            seed: 0,
        }
    }
}

/// Bilevel configuration; defaults follow the experimental setup.
#[derive(Debug, Clone)]
pub struct BilevelConfig {
    /// Variance of the denoising lower-level problem.
    pub lower_noise_var: f64,
    pub lr_weights: f64,
    pub lr_betas: f64,
    /// Learning rate applied to `log lambda`.
    pub lr_lambda: f64,
    pub lambda_init: f64,
    pub apgd: ApgdConfig,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub batch_size: usize,
    pub n_steps: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self {
            lower_noise_var: 0.1,
            lr_weights: 1e-5,
            lr_betas: 5e-4,
            lr_lambda: 1e-4,
            lambda_init: 1.0 / 25.0,
            apgd: ApgdConfig {
                max_iters: 300,
                rel_tol: 1e-10,
                ..Default::default()
            },
            cg_iters: 200,
            cg_tol: 1e-10,
            batch_size: 16,
            n_steps: 500,
            patch_size: 96,
            seed: 0,
        }
    }
}

/// Which initialization scheme to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    ScoreMatching,
    Bilevel,
}

/// Euclidean projection onto the probability simplex via the sorted
/// threshold algorithm.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        acc += u;
        let candidate = (acc - 1.0) / (j as f64 + 1.0);
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&u| (u - theta).max(0.0)).collect()
}

/// Default model initialization: grid half-width 0.8, 123 components,
/// variance `2 nu / (N - 1)` (1.5x for bilevel), weights projected onto the
/// simplex from `-log(|mu| + 0.001)/10000`, coefficients `gamma/o` times a
/// standard normal with the constant column zeroed.
pub fn init_model(kind: InitKind, rng: &mut Rng) -> FoeModel {
    init_model_custom(kind, 24, 123, rng)
}

/// As [`init_model`] with a caller-chosen filter and component count (small
/// instances for tests and quick experiments).
pub fn init_model_custom(
    kind: InitKind,
    n_filters: usize,
    n_components: usize,
    rng: &mut Rng,
) -> FoeModel {
    let nu = 0.8;
    let sigma2_sm = 2.0 * nu / (n_components as f64 - 1.0).max(1.0);
    let (sigma2, gamma) = match kind {
        InitKind::ScoreMatching => (sigma2_sm, 2.5),
        InitKind::Bilevel => (1.5 * sigma2_sm, 1.5),
    };
    let mut betas = vec![0.0; n_filters * 25];
    for j in 0..n_filters {
        for l in 1..25 {
            betas[j * 25 + l] = gamma / n_filters as f64 * rng.normal();
        }
    }
    let bank = FilterBank::new(n_filters, betas, true).expect("valid init bank");
    // One shared weight profile, mildly peaked at the central means.
    let delta = 2.0 * nu / (n_components as f64 - 1.0).max(1.0);
    let raw: Vec<f64> = (0..n_components)
        .map(|i| {
            let mu = if n_components == 1 {
                0.0
            } else {
                -nu + delta * i as f64
            };
            -(mu.abs() + 0.001).ln() / 10_000.0
        })
        .collect();
    let weights = project_simplex(&raw);
    let potentials = (0..n_filters)
        .map(|_| {
            GmmPotential::new(
                weights.iter().map(|w| w.max(crate::potential::WEIGHT_FLOOR)).collect(),
                nu,
                sigma2,
            )
            .expect("valid init potential")
        })
        .collect();
    FoeModel::new(bank, potentials).expect("consistent init model")
}

/// One row of a training trace.
#[derive(Debug, Clone, Copy)]
pub struct TrainTraceRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm_weights: f64,
    pub grad_norm_betas: f64,
    pub lambda: Option<f64>,
}

/// Monte-Carlo denoising score-matching loss over a batch (one noise draw
/// per patch) and its exact parameter gradients.
pub fn dsm_loss_grad(
    model: &FoeModel,
    batch: &[Image],
    sigma: f64,
    rng: &mut Rng,
) -> Result<(f64, FoeParamGrads)> {
    if batch.is_empty() {
        return Err(invalid("score-matching batch must be nonempty"));
    }
    if !(sigma > 0.0) {
        return Err(invalid("smoothing noise level must be positive"));
    }
    let mut loss = 0.0;
    let mut grads = FoeParamGrads::zeros(model);
    let scale = 1.0 / batch.len() as f64;
    for x in batch {
        let mut noisy = x.clone();
        let mut noise = vec![0.0; x.len()];
        rng.fill_normal(&mut noise);
        for (v, z) in noisy.data_mut().iter_mut().zip(&noise) {
            *v += sigma * z;
        }
        let g = model.energy_grad(&noisy)?;
        // residual = sigma grad E(y) - z
        let mut residual = g.clone();
        residual.scale(sigma);
        for (r, z) in residual.data_mut().iter_mut().zip(&noise) {
            *r -= z;
        }
        loss += scale * residual.dot(&residual);
        // d/d theta ||r||^2 = <2 sigma r, d grad E / d theta>.
        let mut upstream = residual;
        upstream.scale(2.0 * sigma);
        let g = model.param_grad(&noisy, 0.0, Some(&upstream))?;
        grads.axpy(scale, &g);
    }
    Ok((loss, grads))
}

/// Trains a freshly initialized model by denoising score matching.
pub fn train_dsm(dataset: &[Image], cfg: &DsmConfig) -> Result<(FoeModel, Vec<TrainTraceRow>)> {
    let root = Rng::new(cfg.seed);
    let model = init_model(InitKind::ScoreMatching, &mut root.split(0));
    train_dsm_from(model, dataset, cfg)
}

/// As [`train_dsm`] starting from a caller-supplied model.
pub fn train_dsm_from(
    mut model: FoeModel,
    dataset: &[Image],
    cfg: &DsmConfig,
) -> Result<(FoeModel, Vec<TrainTraceRow>)> {
    if dataset.is_empty() {
        return Err(invalid("training dataset must be nonempty"));
    }
    let root = Rng::new(cfg.seed);
    let mut adam_w = Adam::new(
        AdamConfig::with_lr(cfg.lr_weights),
        model.n_filters() * model.n_components(),
    )?;
    let mut adam_b = Adam::new(AdamConfig::with_lr(cfg.lr_betas), model.bank().betas().len())?;
    let mut trace = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        let mut srng = root.split(step as u64 + 1);
        let batch = extract_patches(dataset, cfg.patch_size, 1, &mut srng, cfg.batch_size)?;
        let (loss, grads) = dsm_loss_grad(&model, &batch, cfg.noise_sigma, &mut srng)?;
        apply_step(&mut model, &grads, &mut adam_w, &mut adam_b)?;
        trace.push(TrainTraceRow {
            step,
            loss,
            grad_norm_weights: norm(&grads.weights),
            grad_norm_betas: norm(&grads.betas),
            lambda: None,
        });
    }
    Ok((model, trace))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Adam updates for both parameter groups followed by the weight-floor and
/// DC-column projections; fails on non-finite parameters.
fn apply_step(
    model: &mut FoeModel,
    grads: &FoeParamGrads,
    adam_w: &mut Adam,
    adam_b: &mut Adam,
) -> Result<()> {
    let mut weights = model.weights_flat();
    adam_w.step(&mut weights, &grads.weights)?;
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(numeric("weights became non-finite"));
    }
    model.set_weights_flat(&weights)?;
    let mut betas = model.bank().betas().to_vec();
    adam_b.step(&mut betas, &grads.betas)?;
    if !betas.iter().all(|b| b.is_finite()) {
        return Err(numeric("betas became non-finite"));
    }
    model.bank_mut().set_betas(&betas)?;
    Ok(())
}

/// Output of one bilevel loss/gradient evaluation.
#[derive(Debug, Clone)]
pub struct BilevelLossGrad {
    pub loss: f64,
    pub grads: FoeParamGrads,
    pub lambda_grad: f64,
    pub x_star: Image,
    /// Set when the lower solve exhausted backtracking or the conjugate
    /// gradient solve did not reach its tolerance.
    pub warned: bool,
}

/// Solves the denoising lower-level problem
/// `x* = argmin ||x - y||^2 / (2 v) + lambda E(x)`, computes the upper loss
/// `||x* - x_clean||^2 / 2` and its gradients with respect to all model
/// parameters and `lambda` via the implicit function theorem:
/// `grad = -(d/dtheta grad_x J)^T H^{-1} (x* - x_clean)` with
/// `H = I/v + lambda Hess E(x*)` applied through conjugate gradient.
pub fn bilevel_loss_grad(
    model: &FoeModel,
    lambda: f64,
    y: &Image,
    x_clean: &Image,
    cfg: &BilevelConfig,
) -> Result<BilevelLossGrad> {
    if !(lambda > 0.0) {
        return Err(invalid("lambda must be positive"));
    }
    if !(lower_var_ok(cfg)) {
        return Err(invalid("lower noise variance must be positive"));
    }
    if !y.same_shape(x_clean) {
        return Err(invalid("pair shapes must match"));
    }
    let v = cfg.lower_noise_var;
    let value_grad = |x: &Image| {
        let diff = x.sub(y);
        let (e, mut g) = model.energy_value_grad(x).expect("shape checked");
        let value = diff.dot(&diff) / (2.0 * v) + lambda * e;
        g.scale(lambda);
        g.axpy(1.0 / v, &diff);
        (value, g)
    };
    let value = |x: &Image| {
        let diff = x.sub(y);
        diff.dot(&diff) / (2.0 * v) + lambda * model.energy(x).expect("shape checked")
    };
    let lower = apgd(value_grad, value, |z, _| z.clone(), y, &cfg.apgd, None)?;
    let x_star = lower.x;
    let mut warned = lower.backtrack_exhausted;

    let b = x_star.sub(x_clean);
    let loss = 0.5 * b.dot(&b);
    // H u = grad_x L with H = I/v + lambda Hess E(x*).
    let (h, w) = (x_star.height(), x_star.width());
    let hv = |p: &[f64]| {
        let pv = Image::new(h, w, p.to_vec()).expect("dims fixed");
        let mut out = model.energy_hvp(&x_star, &pv).expect("dims fixed");
        out.scale(lambda);
        out.axpy(1.0 / v, &pv);
        out.into_data()
    };
    let cg = conjugate_gradient(hv, b.data(), cfg.cg_iters, cfg.cg_tol)?;
    warned |= !cg.converged;
    if !cg.converged {
        log::warn!(
            "bilevel conjugate gradient stalled at relative residual {}",
            cg.rel_residual
        );
    }
    let u = Image::new(h, w, cg.x)?;
    // theta-adjoint of <u, lambda grad_x E(x*)>, negated.
    let mut grads = model.param_grad(&x_star, 0.0, Some(&u))?;
    grads.scale(-lambda);
    let lambda_grad = -model.energy_grad(&x_star)?.dot(&u);
    Ok(BilevelLossGrad {
        loss,
        grads,
        lambda_grad,
        x_star,
        warned,
    })
}

fn lower_var_ok(cfg: &BilevelConfig) -> bool {
    cfg.lower_noise_var > 0.0
}

/// Trains a freshly initialized model by bilevel learning; the learned
/// `lambda` is stored on the returned model.
pub fn train_bilevel(
    dataset: &[Image],
    cfg: &BilevelConfig,
) -> Result<(FoeModel, Vec<TrainTraceRow>)> {
    let root = Rng::new(cfg.seed);
    let model = init_model(InitKind::Bilevel, &mut root.split(0));
    train_bilevel_from(model, dataset, cfg)
}

/// As [`train_bilevel`] starting from a caller-supplied model. `lambda` is
/// trained as its logarithm, so it stays positive for every step.
pub fn train_bilevel_from(
    mut model: FoeModel,
    dataset: &[Image],
    cfg: &BilevelConfig,
) -> Result<(FoeModel, Vec<TrainTraceRow>)> {
    if dataset.is_empty() {
        return Err(invalid("training dataset must be nonempty"));
    }
    if !(cfg.lambda_init > 0.0) {
        return Err(invalid("lambda_init must be positive"));
    }
    let root = Rng::new(cfg.seed);
    let mut adam_w = Adam::new(
        AdamConfig::with_lr(cfg.lr_weights),
        model.n_filters() * model.n_components(),
    )?;
    let mut adam_b = Adam::new(AdamConfig::with_lr(cfg.lr_betas), model.bank().betas().len())?;
    let mut adam_l = Adam::new(AdamConfig::with_lr(cfg.lr_lambda), 1)?;
    let mut log_lambda = cfg.lambda_init.ln();
    let mut trace = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        let mut srng = root.split(step as u64 + 1);
        let clean = extract_patches(dataset, cfg.patch_size, 1, &mut srng, cfg.batch_size)?;
        let lambda = log_lambda.exp();
        let mut loss = 0.0;
        let mut grads = FoeParamGrads::zeros(&model);
        let mut lambda_grad = 0.0;
        let scale = 1.0 / clean.len() as f64;
        for x_clean in &clean {
            // The clean reference stays noise-free; only the input is
            // polluted, with fresh noise for each selected pair.
            let mut y = x_clean.clone();
            let s = cfg.lower_noise_var.sqrt();
            for e in y.data_mut() {
                *e += s * srng.normal();
            }
            let out = bilevel_loss_grad(&model, lambda, &y, x_clean, cfg)?;
            loss += scale * out.loss;
            grads.axpy(scale, &out.grads);
            lambda_grad += scale * out.lambda_grad;
        }
        apply_step(&mut model, &grads, &mut adam_w, &mut adam_b)?;
        // Chain rule through lambda = exp(log_lambda).
        let mut ll = [log_lambda];
        adam_l.step(&mut ll, &[lambda_grad * lambda])?;
        log_lambda = ll[0];
        if !log_lambda.is_finite() {
            return Err(numeric("log lambda became non-finite"));
        }
        trace.push(TrainTraceRow {
            step,
            loss,
            grad_norm_weights: norm(&grads.weights),
            grad_norm_betas: norm(&grads.betas),
            lambda: Some(log_lambda.exp()),
        });
    }
    model.lambda = Some(log_lambda.exp());
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foe::BasisKind;
    use crate::image::Kernel;
    use crate::metrics::psnr;

    #[test]
    fn simplex_projection_properties() {
        // Already on the simplex: unchanged.
        let v = vec![0.2, 0.5, 0.3];
        let p = project_simplex(&v);
        for (a, b) in p.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
        // KKT threshold case.
        let p = project_simplex(&[2.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert!(p[1].abs() < 1e-15);
        // Random inputs land on the simplex.
        let mut rng = Rng::new(901);
        for _ in 0..50 {
            let v: Vec<f64> = (0..17).map(|_| 3.0 * rng.normal()).collect();
            let p = project_simplex(&v);
            assert!(p.iter().all(|u| *u >= 0.0));
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_model_matches_the_documented_scheme() {
        let mut rng = Rng::new(907);
        let m = init_model(InitKind::ScoreMatching, &mut rng);
        assert_eq!(m.n_filters(), 24);
        assert_eq!(m.n_components(), 123);
        assert_eq!(m.nu(), 0.8);
        assert!((m.sigma2() - 2.0 * 0.8 / 122.0).abs() < 1e-15);
        for p in m.potentials() {
            let sum: f64 = p.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.weights().iter().all(|w| *w >= 0.0));
        }
        for j in 0..24 {
            assert_eq!(m.bank().beta(j, 0), 0.0);
        }
        let mut rng = Rng::new(907);
        let b = init_model(InitKind::Bilevel, &mut rng);
        assert!((b.sigma2() - 1.5 * 2.0 * 0.8 / 122.0).abs() < 1e-15);
        // Same seed, same model.
        let mut r1 = Rng::new(11);
        let mut r2 = Rng::new(11);
        let m1 = init_model(InitKind::ScoreMatching, &mut r1);
        let m2 = init_model(InitKind::ScoreMatching, &mut r2);
        assert_eq!(m1.bank().betas(), m2.bank().betas());
    }

    #[test]
    fn dsm_loss_of_a_flat_energy_is_the_noise_dimension() {
        // Zero betas: grad E = 0, so the loss is E||N||^2 = d per patch.
        let mut rng = Rng::new(911);
        let mut model = init_model_custom(InitKind::ScoreMatching, 2, 7, &mut rng);
        let zeros = vec![0.0; model.bank().betas().len()];
        model.bank_mut().set_betas(&zeros).unwrap();
        let patches: Vec<Image> = (0..64).map(|_| Image::constant(8, 8, 0.5)).collect();
        let (loss, _) = dsm_loss_grad(&model, &patches, 0.02, &mut rng).unwrap();
        let d: f64 = 64.0;
        // CLT bound: sd of the mean of 64 chi-square(64) draws.
        let bound = 4.0 * (2.0 * d / 64.0f64).sqrt();
        assert!((loss - d).abs() < bound, "loss {loss}");
    }

    #[test]
    fn dsm_loss_vanishes_for_the_exact_score() {
        // One-pixel patches at zero and E(x) = x^2 / (2 sigma^2): the scaled
        // gradient reproduces the injected noise exactly.
        let sigma = 0.15;
        let delta = Kernel::new(1, vec![1.0]).unwrap();
        let bank =
            FilterBank::with_basis(1, vec![1.0], vec![delta], BasisKind::Custom, false).unwrap();
        let pot = GmmPotential::new(vec![1.0], 1.0, sigma * sigma).unwrap();
        let model = FoeModel::new(bank, vec![pot]).unwrap();
        let patches: Vec<Image> = (0..32).map(|_| Image::zeros(1, 1)).collect();
        let mut rng = Rng::new(919);
        let (loss, _) = dsm_loss_grad(&model, &patches, sigma, &mut rng).unwrap();
        assert!(loss < 1e-20, "loss {loss}");
    }

    #[test]
    fn dsm_gradients_match_finite_differences_with_frozen_noise() {
        let mut rng = Rng::new(929);
        let model = init_model_custom(InitKind::ScoreMatching, 2, 7, &mut rng);
        let patches: Vec<Image> = (0..3)
            .map(|_| Image::random_uniform(8, 8, &mut rng))
            .collect();
        let sigma = 0.1;
        let eval = |m: &FoeModel| dsm_loss_grad(m, &patches, sigma, &mut Rng::new(77)).unwrap();
        let (_, grads) = eval(&model);
        let betas = model.bank().betas().to_vec();
        let weights = model.weights_flat();
        let h = 1e-6;
        let mut checked = 0;
        let mut idx_rng = Rng::new(31);
        while checked < 30 {
            let total = betas.len() + weights.len();
            let idx = idx_rng.below(total);
            let (got, fd) = if idx < betas.len() {
                if idx % 25 == 0 {
                    continue;
                }
                let mut m_p = model.clone();
                let mut bp = betas.clone();
                bp[idx] += h;
                m_p.bank_mut().set_betas(&bp).unwrap();
                let mut m_m = model.clone();
                let mut bm = betas.clone();
                bm[idx] -= h;
                m_m.bank_mut().set_betas(&bm).unwrap();
                (grads.betas[idx], (eval(&m_p).0 - eval(&m_m).0) / (2.0 * h))
            } else {
                let wi = idx - betas.len();
                let mut m_p = model.clone();
                let mut wp = weights.clone();
                wp[wi] += h;
                m_p.set_weights_flat(&wp).unwrap();
                let mut m_m = model.clone();
                let mut wm = weights.clone();
                wm[wi] -= h;
                m_m.set_weights_flat(&wm).unwrap();
                (
                    grads.weights[wi],
                    (eval(&m_p).0 - eval(&m_m).0) / (2.0 * h),
                )
            };
            assert!(
                (got - fd).abs() <= 1e-4 * (1.0 + fd.abs()),
                "param {idx}: {got} vs {fd}"
            );
            checked += 1;
        }
    }

    #[test]
    fn fixed_batch_overfit_decreases_the_loss() {
        let mut rng = Rng::new(937);
        let mut model = init_model_custom(InitKind::ScoreMatching, 2, 9, &mut rng);
        let dataset: Vec<Image> = (0..4)
            .map(|_| Image::random_uniform(16, 16, &mut rng))
            .collect();
        let batch = extract_patches(&dataset, 16, 1, &mut rng, 4).unwrap();
        let mut adam_w = Adam::new(AdamConfig::with_lr(1e-5), 2 * 9).unwrap();
        let mut adam_b = Adam::new(AdamConfig::with_lr(2e-4), 2 * 25).unwrap();
        let mut losses = Vec::new();
        for _ in 0..50 {
            // Frozen noise: the same rng seed every step makes the loss a
            // deterministic function of the parameters.
            let (loss, grads) =
                dsm_loss_grad(&model, &batch, 0.05, &mut Rng::new(1234)).unwrap();
            losses.push(loss);
            apply_step(&mut model, &grads, &mut adam_w, &mut adam_b).unwrap();
        }
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn train_dsm_is_deterministic() {
        let mut rng = Rng::new(941);
        let dataset: Vec<Image> = (0..2)
            .map(|_| Image::random_uniform(24, 24, &mut rng))
            .collect();
        let cfg = DsmConfig {
            batch_size: 2,
            n_steps: 3,
            patch_size: 12,
            seed: 7,
            ..Default::default()
        };
        let (m1, t1) = train_dsm(&dataset, &cfg).unwrap();
        let (m2, t2) = train_dsm(&dataset, &cfg).unwrap();
        assert_eq!(m1.to_json().unwrap(), m2.to_json().unwrap());
        assert_eq!(t1.len(), t2.len());
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
        // Weight floor holds after training.
        for w in m1.weights_flat() {
            assert!(w >= crate::potential::WEIGHT_FLOOR);
        }
    }

    #[test]
    fn bilevel_gradient_matches_the_closed_form_1d_instance() {
        // J = (x - y)^2/2 + lambda x^2/2 with y = 1, lambda = 1 and clean
        // target 0: x* = 1/2 and dL/dlambda = -1/8.
        let delta = Kernel::new(1, vec![1.0]).unwrap();
        let bank =
            FilterBank::with_basis(1, vec![1.0], vec![delta], BasisKind::Custom, false).unwrap();
        let pot = GmmPotential::new(vec![1.0], 1.0, 1.0).unwrap();
        let model = FoeModel::new(bank, vec![pot]).unwrap();
        let cfg = BilevelConfig {
            lower_noise_var: 1.0,
            apgd: ApgdConfig {
                max_iters: 2000,
                rel_tol: 1e-14,
                ..Default::default()
            },
            cg_iters: 50,
            cg_tol: 1e-14,
            ..Default::default()
        };
        let y = Image::constant(1, 1, 1.0);
        let clean = Image::zeros(1, 1);
        let out = bilevel_loss_grad(&model, 1.0, &y, &clean, &cfg).unwrap();
        assert!((out.x_star.data()[0] - 0.5).abs() < 1e-9);
        assert!(
            (out.lambda_grad - (-0.125)).abs() < 1e-10,
            "lambda grad {}",
            out.lambda_grad
        );
        assert!(!out.warned);
    }

    #[test]
    fn bilevel_gradients_vanish_when_the_solution_matches_the_target() {
        // A flat energy makes x* = y; with x_clean = y the upper adjoint is
        // zero and so are all gradients.
        let mut rng = Rng::new(947);
        let mut model = init_model_custom(InitKind::Bilevel, 2, 7, &mut rng);
        let zeros = vec![0.0; model.bank().betas().len()];
        model.bank_mut().set_betas(&zeros).unwrap();
        let y = Image::random_uniform(8, 8, &mut rng);
        let cfg = BilevelConfig::default();
        let out = bilevel_loss_grad(&model, 0.04, &y, &y, &cfg).unwrap();
        assert!(out.loss < 1e-12);
        assert!(out.grads.betas.iter().all(|g| g.abs() < 1e-10));
        assert!(out.grads.weights.iter().all(|g| g.abs() < 1e-10));
        assert!(out.lambda_grad.abs() < 1e-10);
    }

    /// Finite-difference oracle for the bilevel loss: the lower problem is
    /// re-converged to machine precision (APGD plus a Newton polish with CG
    /// inner solves), since the step-rule stopping error of a plain APGD
    /// solve is large enough to contaminate difference quotients.
    fn bilevel_loss_oracle(
        model: &FoeModel,
        lambda: f64,
        y: &Image,
        x_clean: &Image,
        cfg: &BilevelConfig,
    ) -> f64 {
        let v = cfg.lower_noise_var;
        let mut x = bilevel_loss_grad(model, lambda, y, x_clean, cfg).unwrap().x_star;
        let (h, w) = (x.height(), x.width());
        for _ in 0..8 {
            let mut g = model.energy_grad(&x).unwrap();
            g.scale(lambda);
            g.axpy(1.0 / v, &x.sub(y));
            if g.norm() < 1e-13 {
                break;
            }
            let hv = |p: &[f64]| {
                let pv = Image::new(h, w, p.to_vec()).unwrap();
                let mut out = model.energy_hvp(&x, &pv).unwrap();
                out.scale(lambda);
                out.axpy(1.0 / v, &pv);
                out.into_data()
            };
            let step = conjugate_gradient(hv, g.data(), 300, 1e-14).unwrap();
            x.axpy(-1.0, &Image::new(h, w, step.x).unwrap());
        }
        let d = x.sub(x_clean);
        0.5 * d.dot(&d)
    }

    #[test]
    fn bilevel_implicit_gradient_matches_finite_differences() {
        let mut rng = Rng::new(953);
        let model = init_model_custom(InitKind::Bilevel, 2, 5, &mut rng);
        let clean = Image::random_uniform(8, 8, &mut rng);
        let mut y = clean.clone();
        for e in y.data_mut() {
            *e += 0.3 * rng.normal();
        }
        let lambda = 0.05;
        let cfg = BilevelConfig {
            apgd: ApgdConfig {
                max_iters: 4000,
                rel_tol: 1e-10,
                ..Default::default()
            },
            cg_iters: 300,
            cg_tol: 1e-10,
            ..Default::default()
        };
        let out = bilevel_loss_grad(&model, lambda, &y, &clean, &cfg).unwrap();
        assert!(!out.warned);
        let loss_of = |m: &FoeModel| bilevel_loss_oracle(m, lambda, &y, &clean, &cfg);
        let betas = model.bank().betas().to_vec();
        let weights = model.weights_flat();
        let h = 1e-5;
        let mut idx_rng = Rng::new(59);
        let mut checked = 0;
        while checked < 12 {
            let total = betas.len() + weights.len();
            let idx = idx_rng.below(total);
            let (got, fd) = if idx < betas.len() {
                if idx % 25 == 0 {
                    continue;
                }
                let mut m_p = model.clone();
                let mut bp = betas.clone();
                bp[idx] += h;
                m_p.bank_mut().set_betas(&bp).unwrap();
                let mut m_m = model.clone();
                let mut bm = betas.clone();
                bm[idx] -= h;
                m_m.bank_mut().set_betas(&bm).unwrap();
                (out.grads.betas[idx], (loss_of(&m_p) - loss_of(&m_m)) / (2.0 * h))
            } else {
                let wi = idx - betas.len();
                let mut m_p = model.clone();
                let mut wp = weights.clone();
                wp[wi] += h;
                m_p.set_weights_flat(&wp).unwrap();
                let mut m_m = model.clone();
                let mut wm = weights.clone();
                wm[wi] -= h;
                m_m.set_weights_flat(&wm).unwrap();
                (
                    out.grads.weights[wi],
                    (loss_of(&m_p) - loss_of(&m_m)) / (2.0 * h),
                )
            };
            let tol = 1e-3 * (1.0 + fd.abs());
            assert!((got - fd).abs() <= tol, "param {idx}: {got} vs {fd}");
            checked += 1;
        }
        // The lambda gradient too.
        let fd = (bilevel_loss_oracle(&model, lambda + 1e-6, &y, &clean, &cfg)
            - bilevel_loss_oracle(&model, lambda - 1e-6, &y, &clean, &cfg))
            / 2e-6;
        assert!(
            (out.lambda_grad - fd).abs() <= 1e-3 * (1.0 + fd.abs()),
            "{} vs {fd}",
            out.lambda_grad
        );
    }

    #[test]
    fn bilevel_training_improves_denoising_and_keeps_lambda_positive() {
        let mut rng = Rng::new(967);
        // Piecewise-smooth toy images.
        let dataset: Vec<Image> = (0..3)
            .map(|_| {
                let mut img = Image::zeros(24, 24);
                let level = rng.uniform();
                for r in 0..24 {
                    for c in 0..24 {
                        let edge = if c > 12 { 0.4 } else { 0.0 };
                        img.set(r, c, (level * 0.5 + edge + 0.01 * (r as f64)).clamp(0.0, 1.0));
                    }
                }
                img
            })
            .collect();
        let cfg = BilevelConfig {
            batch_size: 2,
            n_steps: 200,
            patch_size: 12,
            seed: 3,
            apgd: ApgdConfig {
                max_iters: 120,
                rel_tol: 1e-8,
                ..Default::default()
            },
            cg_iters: 60,
            cg_tol: 1e-8,
            ..Default::default()
        };
        let root = Rng::new(cfg.seed);
        let model0 = init_model_custom(InitKind::Bilevel, 3, 9, &mut root.split(0));
        let (model, trace) = train_bilevel_from(model0.clone(), &dataset, &cfg).unwrap();
        assert!(trace.iter().all(|r| r.lambda.unwrap() > 0.0));
        // Validation: MAP denoising with the trained model beats the init.
        let clean = dataset[0].crop(4, 4, 12).unwrap();
        let mut noisy = clean.clone();
        let mut nrng = Rng::new(31);
        for e in noisy.data_mut() {
            *e += cfg.lower_noise_var.sqrt() * nrng.normal();
        }
        let denoise = |m: &FoeModel, lam: f64| {
            bilevel_loss_grad(m, lam, &noisy, &clean, &cfg).unwrap().x_star
        };
        let x0 = denoise(&model0, cfg.lambda_init);
        let x1 = denoise(&model, model.lambda.unwrap());
        let p0 = psnr(&x0, &clean, 1.0).unwrap();
        let p1 = psnr(&x1, &clean, 1.0).unwrap();
        assert!(p1 > p0, "psnr {p0} -> {p1}");
    }

    #[test]
    fn config_defaults_match_the_documented_setup() {
        let d = DsmConfig::default();
        assert_eq!(d.noise_sigma, 2e-2);
        assert_eq!(d.lr_weights, 1e-5);
        assert_eq!(d.lr_betas, 2e-4);
        assert_eq!(d.patch_size, 96);
        let b = BilevelConfig::default();
        assert_eq!(b.lower_noise_var, 0.1);
        assert_eq!(b.lr_weights, 1e-5);
        assert_eq!(b.lr_betas, 5e-4);
        assert_eq!(b.lr_lambda, 1e-4);
        assert_eq!(b.lambda_init, 1.0 / 25.0);
        assert_eq!(b.cg_iters, 200);
        assert_eq!(b.apgd.rel_tol, 1e-10);
    }
}
