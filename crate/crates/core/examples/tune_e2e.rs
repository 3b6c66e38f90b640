//! Exploration driver for the desk-scale experiment configuration.

use ebmkit::foe::FoeModel;
use ebmkit::image::Image;
use ebmkit::likelihood::{gaussian_negloglik, snr_matched_noise_var, synthesize_data};
use ebmkit::metrics::psnr;
use ebmkit::operators::{make_fourier_mask, ForwardOperator, Measurement, RadonGeometry};
use ebmkit::optimize::{apgd, ApgdConfig};
use ebmkit::posterior::{posterior_energy, posterior_energy_grad, posterior_lipschitz_estimate, PosteriorSpec};
use ebmkit::rng::Rng;
use ebmkit::samplers::{ula_run_with, ChainStats, FnTarget};
use ebmkit::synth::mini_dataset;
use ebmkit::training::{train_dsm, DsmConfig};
use ebmkit::tv::SmoothTv;
use std::time::Instant;

fn map_solve(spec: &PosteriorSpec, model: &FoeModel, y: &Measurement, x0: &Image, iters: usize) -> Image {
    let initial_l = posterior_lipschitz_estimate(spec, model, x0, 12).unwrap().max(1.0);
    let vg = |x: &Image| posterior_energy_grad(spec, model, y, x).unwrap();
    let v = |x: &Image| posterior_energy(spec, model, y, x).unwrap();
    let res = apgd(vg, v, |z, _| z.clone(), x0, &ApgdConfig { max_iters: iters, rel_tol: 1e-5, initial_l, ..Default::default() }, None).unwrap();
    assert!(!res.backtrack_exhausted, "solver stalled");
    res.x
}

fn tv_solve(y: &Measurement, op: &ForwardOperator, noise_var: f64, lambda_tv: f64, x0: &Image, iters: usize) -> Image {
    let tv = SmoothTv::default();
    let vg = |x: &Image| {
        let (nll, mut g) = gaussian_negloglik(y, x, op, noise_var).unwrap();
        let (tvv, tvg) = tv.value_grad(x);
        g.axpy(lambda_tv, &tvg);
        (nll + lambda_tv * tvv, g)
    };
    let v = |x: &Image| {
        gaussian_negloglik(y, x, op, noise_var).unwrap().0 + lambda_tv * tv.value(x)
    };
    apgd(vg, v, |z, _| z.clone(), x0, &ApgdConfig { max_iters: iters, rel_tol: 1e-5, ..Default::default() }, None).unwrap().x
}

fn x0_for(op: &ForwardOperator, y: &Measurement) -> Image {
    let mut bp = op.adjoint(y).unwrap();
    match op {
        ForwardOperator::MaskedFourier(_) => {
            let (h, w) = op.image_shape();
            bp.scale(1.0 / (h * w) as f64);
        }
        ForwardOperator::Radon { .. } => {
            let ax = op.apply(&bp).unwrap();
            let num = match (&ax, y) {
                (Measurement::Real(a), Measurement::Real(b)) => a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>(),
                _ => 0.0,
            };
            let den = op.norm_sq(&ax).unwrap();
            bp.scale(num / den);
        }
        _ => {}
    }
    bp
}

fn main() {
    let t0 = Instant::now();
    let train = mini_dataset(12, 96, 555000);
    let eval = mini_dataset(8, 96, 20240901);
    let cfg = DsmConfig { batch_size: 8, n_steps: 1000, patch_size: 24, seed: 1, ..Default::default() };
    let (model, trace) = train_dsm(&train, &cfg).unwrap();
    println!("train: {:.1}s, loss {} -> {}", t0.elapsed().as_secs_f64(), trace[0].loss, trace.last().unwrap().loss);
    model.save("/tmp/tuned_model.json").unwrap();

    // ---- denoising ----
    let noise_var = 0.01;
    let op = ForwardOperator::identity(96, 96);
    let data: Vec<_> = eval.iter().enumerate().map(|(i, x)| {
        synthesize_data(&op, x, noise_var, &mut Rng::new(100 + i as u64)).unwrap()
    }).collect();
    for lambda in [0.25, 0.35, 0.5] {
        let spec = PosteriorSpec::new(op.clone(), noise_var, lambda, 1.0).unwrap();
        let mut avg = 0.0;
        for i in 0..8 {
            let xs = map_solve(&spec, &model, &data[i], &x0_for(&op, &data[i]), 80);
            avg += psnr(&xs, &eval[i], 1.0).unwrap();
        }
        println!("learned MAP denoise lambda={lambda}: avg8 {:.2} dB", avg / 8.0);
    }
    for ltv in [5.0, 8.0, 12.0, 18.0] {
        let mut avg = 0.0;
        for i in 0..8 {
            let xs = tv_solve(&data[i], &op, noise_var, ltv, &x0_for(&op, &data[i]), 250);
            avg += psnr(&xs, &eval[i], 1.0).unwrap();
        }
        println!("TV denoise lambda={ltv}: avg8 {:.2} dB", avg / 8.0);
    }

    // ---- MMSE on denoising (image 0 only, timing + gap probe) ----
    let lambda = 0.5;
    for t in [0.1] {
        let spec = PosteriorSpec::new(op.clone(), noise_var, lambda, t).unwrap();
        let map_spec = PosteriorSpec::new(op.clone(), noise_var, lambda, 1.0).unwrap();
        let mut gap_sum = 0.0;
        for i in 0..2 {
            let y = &data[i];
            let xmap = map_solve(&map_spec, &model, y, &x0_for(&op, y), 80);
            let lip = posterior_lipschitz_estimate(&spec, &model, &xmap, 12).unwrap();
            let tau = 0.9 / lip;
            let target = FnTarget::new(96 * 96,
                |x: &[f64]| posterior_energy(&spec, &model, y, &Image::new(96, 96, x.to_vec()).unwrap()).unwrap(),
                |x: &[f64]| posterior_energy_grad(&spec, &model, y, &Image::new(96, 96, x.to_vec()).unwrap()).unwrap().1.into_data(),
            );
            let mut stats = ChainStats::new(96 * 96);
            let mut rng = Rng::new(900 + i as u64);
            ula_run_with(&target, tau, xmap.data(), 1000, &mut rng, |k, x| {
                if k >= 200 { stats.update(x).unwrap(); }
            }).unwrap();
            let mean = Image::new(96, 96, stats.mean().to_vec()).unwrap();
            let pm = psnr(&mean, &eval[i], 1.0).unwrap();
            let pmap = psnr(&xmap, &eval[i], 1.0).unwrap();
            println!("img{i} T={t}: MAP {pmap:.2} dB, MMSE {pm:.2} dB (tau {tau:.2e})");
            gap_sum += (pm - pmap).abs();
        }
        println!("T={t}: mean |gap| {:.2} dB", gap_sum / 2.0);
    }

    // ---- fourier ----
    let mask = make_fourier_mask(96, 96, 0.10, 0.25, &mut Rng::new(77)).unwrap();
    let fop = ForwardOperator::MaskedFourier(mask);
    let fvar = 2e-3;
    let fdata: Vec<_> = eval.iter().enumerate().map(|(i, x)| {
        synthesize_data(&fop, x, fvar, &mut Rng::new(200 + i as u64)).unwrap()
    }).collect();
    let mut bp_avg = 0.0;
    for i in 0..8 {
        bp_avg += psnr(&x0_for(&fop, &fdata[i]), &eval[i], 1.0).unwrap();
    }
    println!("fourier backprojection avg8 {:.2} dB", bp_avg / 8.0);
    for lambda in [0.1, 0.3, 1.0] {
        let spec = PosteriorSpec::new(fop.clone(), fvar, lambda, 1.0).unwrap();
        let mut avg = 0.0;
        for i in 0..8 {
            let xs = map_solve(&spec, &model, &fdata[i], &x0_for(&fop, &fdata[i]), 80);
            avg += psnr(&xs, &eval[i], 1.0).unwrap();
        }
        println!("learned MAP fourier lambda={lambda}: avg8 {:.2} dB", avg / 8.0);
    }

    // ---- radon ----
    let geometry = RadonGeometry::equispaced(160, 1.0, 60).unwrap();
    let rop = ForwardOperator::Radon { height: 96, width: 96, geometry };
    let rvar = snr_matched_noise_var(&rop, &eval, 30.0).unwrap();
    println!("radon snr-matched noise var = {rvar:.3}");
    let rdata: Vec<_> = eval.iter().enumerate().map(|(i, x)| {
        synthesize_data(&rop, x, rvar, &mut Rng::new(300 + i as u64)).unwrap()
    }).collect();
    let mut bp_avg = 0.0;
    let mut bp_raw_avg = 0.0;
    for i in 0..8 {
        bp_avg += psnr(&x0_for(&rop, &rdata[i]), &eval[i], 1.0).unwrap();
        bp_raw_avg += psnr(&rop.adjoint(&rdata[i]).unwrap(), &eval[i], 1.0).unwrap();
    }
    println!("radon backprojection avg8: ls-scaled {:.2} dB, raw {:.2} dB", bp_avg / 8.0, bp_raw_avg / 8.0);
    for lambda in [0.1, 0.3, 1.0] {
        let spec = PosteriorSpec::new(rop.clone(), rvar, lambda, 1.0).unwrap();
        let mut avg = 0.0;
        for i in 0..8 {
            let xs = map_solve(&spec, &model, &rdata[i], &x0_for(&rop, &rdata[i]), 80);
            avg += psnr(&xs, &eval[i], 1.0).unwrap();
        }
        println!("learned MAP radon lambda={lambda}: avg8 {:.2} dB", avg / 8.0);
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
