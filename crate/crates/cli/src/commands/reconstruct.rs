//! `ebmkit reconstruct`: MAP (accelerated proximal gradient) or MMSE
//! (unadjusted Langevin averaging) inference on the tempered posterior.

use std::path::PathBuf;

use ebmkit::foe::FoeModel;
use ebmkit::image::Image;
use ebmkit::io::{read_pgm, write_pgm, PgmDepth};
use ebmkit::likelihood::{snr_matched_noise_var, synthesize_data};
use ebmkit::metrics::psnr;
use ebmkit::operators::{
    make_fourier_mask, read_measurement_csv, write_measurement_csv, ForwardOperator, FourierMask,
    Measurement, RadonGeometry,
};
use ebmkit::optimize::{apgd, ApgdConfig};
use ebmkit::posterior::{
    posterior_energy, posterior_energy_grad, posterior_lipschitz_estimate, PosteriorSpec,
};
use ebmkit::rng::Rng;
use ebmkit::samplers::{ula_run_with, write_samples_bin, ChainStats, FnTarget};

use crate::config::RunConfig;
use crate::{CmdResult, Outcome};

use super::{out_dir, usage, write_metrics};

pub const HELP: &str = "\
ebmkit reconstruct --model FILE --mode map|mmse [flags]

  --op identity|fourier|radon   forward operator (default identity)
  --input FILE.pgm     clean image; the measurement is synthesized from it
  --measurement FILE   measurement CSV (skips synthesis)
  --height/--width N   image shape when no --input is given
  --noise-var V        likelihood variance (defaults: 0.01 identity,
                       0.002 fourier, SNR-matched radon)
  --snr DB             choose the noise variance by signal-to-noise ratio
  --lambda L           prior weight (default: trained lambda, else 1)
  --T T                temperature (default 0.1 identity, 0.05 otherwise)
  --mode map:          --map-iters N (500), --map-tol R (1e-7)
  --mode mmse:         --samples N (20000), --burn-in N (2000), --thin N (1),
                       --tau T (default 0.9 / Lipschitz estimate),
                       --warm-start-iters N (100), --dump-samples FILE
  fourier:             --keep-low F (0.1), --keep-rest F (0.25), --mask FILE
  radon:               --detectors N (160), --det-width W (1.0),
                       --n-angles N (60)
  anchoring:           --anchor-p0 P, --anchor-weight W
  outputs:             recon.pgm | mean.pgm + std.pgm, bp.pgm,
                       measurement.csv, metrics.csv";

struct Problem {
    op: ForwardOperator,
    y: Measurement,
    clean: Option<Image>,
    noise_var: f64,
}

/// Resolves operator, measurement and noise level from the flags.
fn setup(cfg: &RunConfig, rng: &mut Rng) -> Result<(Problem, PathBuf), crate::CliError> {
    let dir = out_dir(cfg)?;
    let op_kind = cfg.choice_or("op", &["identity", "fourier", "radon"], "identity")?;
    let clean = match cfg.str_opt("input") {
        Some(p) => Some(read_pgm(&p)?),
        None => None,
    };
    let (h, w) = match &clean {
        Some(img) => (img.height(), img.width()),
        None => (
            cfg.pos_usize_or("height", 0).and_then(|v| {
                if v == 0 {
                    Err(crate::config::UsageError(
                        "--height is required without --input".into(),
                    ))
                } else {
                    Ok(v)
                }
            })?,
            cfg.pos_usize_or("width", 0).and_then(|v| {
                if v == 0 {
                    Err(crate::config::UsageError(
                        "--width is required without --input".into(),
                    ))
                } else {
                    Ok(v)
                }
            })?,
        ),
    };
    let op = match op_kind.as_str() {
        "identity" => ForwardOperator::identity(h, w),
        "fourier" => {
            let mask = match cfg.str_opt("mask") {
                Some(path) => {
                    let img = read_pgm(&path)?;
                    if img.height() != h || img.width() != w / 2 + 1 {
                        return Err(usage(format!(
                            "mask shape {}x{} does not match the half spectrum {}x{}",
                            img.height(),
                            img.width(),
                            h,
                            w / 2 + 1
                        )));
                    }
                    FourierMask::from_flags(
                        h,
                        w,
                        img.data().iter().map(|v| *v > 0.5).collect(),
                    )?
                }
                None => make_fourier_mask(
                    h,
                    w,
                    cfg.nonneg_f64_or("keep-low", 0.10)?,
                    cfg.nonneg_f64_or("keep-rest", 0.25)?,
                    &mut rng.split(1),
                )?,
            };
            write_pgm(dir.join("mask.pgm"), &mask.to_image(), PgmDepth::Eight)?;
            ForwardOperator::MaskedFourier(mask)
        }
        "radon" => ForwardOperator::Radon {
            height: h,
            width: w,
            geometry: RadonGeometry::equispaced(
                cfg.pos_usize_or("detectors", 160)?,
                cfg.pos_f64_or("det-width", 1.0)?,
                cfg.pos_usize_or("n-angles", 60)?,
            )?,
        },
        _ => unreachable!(),
    };
    // Noise level: explicit variance, SNR matching, or per-operator default.
    let noise_var = match (cfg.f64_opt("noise-var")?, cfg.f64_opt("snr")?) {
        (Some(v), _) if v > 0.0 => v,
        (Some(v), _) => return Err(usage(format!("--noise-var must be positive, found {v}"))),
        (None, Some(snr)) => {
            let clean = clean
                .as_ref()
                .ok_or_else(|| usage("--snr needs --input to measure the signal power"))?;
            snr_matched_noise_var(&op, std::slice::from_ref(clean), snr)?
        }
        (None, None) => match op_kind.as_str() {
            "identity" => 0.01,
            "fourier" => 2e-3,
            "radon" => {
                let clean = clean.as_ref().ok_or_else(|| {
                    usage("radon synthesis without --noise-var needs --input for SNR matching")
                })?;
                snr_matched_noise_var(&op, std::slice::from_ref(clean), 30.0)?
            }
            _ => unreachable!(),
        },
    };
    let y = match cfg.str_opt("measurement") {
        Some(path) => {
            let m = read_measurement_csv(&path)?;
            if m.len() != op.output_len() {
                return Err(usage(format!(
                    "measurement length {} does not match the operator output {}",
                    m.len(),
                    op.output_len()
                )));
            }
            m
        }
        None => {
            let clean = clean
                .as_ref()
                .ok_or_else(|| usage("provide --measurement or --input"))?;
            synthesize_data(&op, clean, noise_var, &mut rng.split(2))?
        }
    };
    write_measurement_csv(dir.join("measurement.csv"), &y)?;
    Ok((
        Problem {
            op,
            y,
            clean,
            noise_var,
        },
        dir,
    ))
}

/// Backprojection with the visualization scaling: plain data for identity,
/// `A^T y / (h w)` for Fourier (the normalized masked inverse transform),
/// raw `A^T y` for Radon.
fn backprojection(op: &ForwardOperator, y: &Measurement) -> Result<Image, crate::CliError> {
    let mut bp = op.adjoint(y)?;
    if let ForwardOperator::MaskedFourier(_) = op {
        let (h, w) = op.image_shape();
        bp.scale(1.0 / (h * w) as f64);
    }
    Ok(bp)
}

pub fn run(cfg: &RunConfig) -> CmdResult {
    let model = FoeModel::load(cfg.require_str("model")?)?;
    let mode = cfg.choice("mode", &["map", "mmse"])?;
    let seed = cfg.u64_or("seed", 0)?;
    let mut rng = Rng::new(seed);
    let (problem, dir) = setup(cfg, &mut rng)?;
    let lambda = cfg.nonneg_f64_or("lambda", model.lambda.unwrap_or(1.0))?;
    let default_t = if matches!(problem.op, ForwardOperator::Identity { .. }) {
        0.1
    } else {
        0.05
    };
    let temperature = cfg.pos_f64_or("T", default_t)?;
    let mut spec = PosteriorSpec::new(
        problem.op.clone(),
        problem.noise_var,
        lambda,
        // MAP estimates are invariant under tempering; keep T = 1 there.
        if mode == "map" { 1.0 } else { temperature },
    )?;
    match (cfg.f64_opt("anchor-p0")?, cfg.f64_opt("anchor-weight")?) {
        (Some(p0), weight) => spec = spec.with_anchor(p0, weight.unwrap_or(1.0))?,
        (None, Some(_)) => return Err(usage("--anchor-weight needs --anchor-p0")),
        (None, None) => {}
    }
    println!("lambda = {lambda}");
    println!("noise_var = {}", problem.noise_var);

    let bp = backprojection(&problem.op, &problem.y)?;
    write_pgm(dir.join("bp.pgm"), &bp, PgmDepth::Eight)?;

    let mut metrics: Vec<(&str, f64)> = vec![
        ("noise_var", problem.noise_var),
        ("lambda", lambda),
        ("d", problem.y.len() as f64),
    ];
    if let Some(clean) = &problem.clean {
        metrics.push(("psnr_backprojection", psnr(&bp, clean, 1.0)?));
    }

    // Warm start: short MAP run from the backprojection.
    let warm_iters = cfg.pos_usize_or("warm-start-iters", 100)?;
    let map_iters = cfg.pos_usize_or("map-iters", 500)?;
    let map_tol = cfg.pos_f64_or("map-tol", 1e-7)?;
    // Backtracking adapts L in both directions, but the data term's
    // curvature spans many orders of magnitude across operators; start at
    // the estimated posterior Lipschitz constant.
    let initial_l = posterior_lipschitz_estimate(&spec, &model, &bp, 12)?.max(1.0);
    let value_grad =
        |x: &Image| posterior_energy_grad(&spec, &model, &problem.y, x).expect("valid posterior");
    let value = |x: &Image| posterior_energy(&spec, &model, &problem.y, x).expect("valid");
    let solve = |iters: usize, x0: &Image| {
        apgd(
            value_grad,
            value,
            |z, _| z.clone(),
            x0,
            &ApgdConfig {
                max_iters: iters,
                rel_tol: map_tol,
                initial_l,
                ..Default::default()
            },
            None,
        )
    };

    match mode.as_str() {
        "map" => {
            cfg.finish()?;
            let res = solve(map_iters, &bp)?;
            if res.backtrack_exhausted {
                log::warn!("backtracking exhausted; result is the last accepted iterate");
            }
            write_pgm(dir.join("recon.pgm"), &res.x, PgmDepth::Eight)?;
            metrics.push(("iters", res.iters as f64));
            if let Some(clean) = &problem.clean {
                let p = psnr(&res.x, clean, 1.0)?;
                metrics.push(("psnr_recon", p));
                println!("MAP PSNR = {p:.2} dB");
            }
            write_metrics(dir.join("metrics.csv"), &metrics)?;
            Ok(Outcome::Success)
        }
        "mmse" => {
            let n_samples = cfg.pos_usize_or("samples", 20000)?;
            let burn_in = cfg.usize_or("burn-in", 2000)?;
            let thin = cfg.pos_usize_or("thin", 1)?;
            let dump = cfg.str_opt("dump-samples");
            let x0 = solve(warm_iters, &bp)?.x;
            let lip = posterior_lipschitz_estimate(&spec, &model, &x0, 12)?;
            let tau = cfg.pos_f64_or("tau", 0.9 / lip.max(1e-12))?;
            cfg.finish()?;
            println!("temperature = {temperature}");
            println!("tau = {tau:.3e} (Lipschitz estimate {lip:.3e})");
            let (h, w) = problem.op.image_shape();
            let dim = h * w;
            let target = FnTarget::new(
                dim,
                |x: &[f64]| {
                    let img = Image::new(h, w, x.to_vec()).expect("dims fixed");
                    posterior_energy(&spec, &model, &problem.y, &img).expect("valid")
                },
                |x: &[f64]| {
                    let img = Image::new(h, w, x.to_vec()).expect("dims fixed");
                    posterior_energy_grad(&spec, &model, &problem.y, &img)
                        .expect("valid")
                        .1
                        .into_data()
                },
            );
            let mut stats = ChainStats::new(dim);
            let mut kept: Vec<Vec<f64>> = Vec::new();
            let total = burn_in + n_samples;
            let mut chain_rng = rng.split(3);
            ula_run_with(
                &target,
                tau,
                x0.data(),
                total,
                &mut chain_rng,
                |k, x| {
                    if k >= burn_in && (k - burn_in) % thin == 0 {
                        stats.update(x).expect("dim fixed");
                        if dump.is_some() {
                            kept.push(x.to_vec());
                        }
                    }
                },
            )?;
            let mean = Image::new(h, w, stats.mean().to_vec())?;
            let std = Image::new(h, w, stats.std())?;
            write_pgm(dir.join("mean.pgm"), &mean, PgmDepth::Eight)?;
            write_pgm(dir.join("std.pgm"), &std, PgmDepth::Sixteen)?;
            ebmkit::samplers::write_chain_summary_csv(dir.join("chain_summary.csv"), &stats)?;
            if let Some(path) = dump {
                write_samples_bin(path, dim, kept.iter().map(|s| s.as_slice()))?;
            }
            metrics.push(("samples", stats.count() as f64));
            metrics.push(("tau", tau));
            metrics.push(("temperature", temperature));
            if let Some(clean) = &problem.clean {
                let p = psnr(&mean, clean, 1.0)?;
                metrics.push(("psnr_mean", p));
                println!("MMSE PSNR = {p:.2} dB");
            }
            write_metrics(dir.join("metrics.csv"), &metrics)?;
            Ok(Outcome::Success)
        }
        _ => unreachable!(),
    }
}
