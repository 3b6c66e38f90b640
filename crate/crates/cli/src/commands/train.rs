//! `ebmkit train`: fit a prior by score matching or bilevel learning.

use std::path::PathBuf;

use ebmkit::io::write_csv;
use ebmkit::training::{train_bilevel, train_dsm, BilevelConfig, DsmConfig, TrainTraceRow};

use crate::config::RunConfig;
use crate::{CmdResult, Outcome};

use super::{load_dataset, out_dir, usage};

pub const HELP: &str = "\
ebmkit train --method sm|bilevel --data DIR [flags]

  --data DIR            directory of PGM training images (required)
  --out FILE            model output (default OUT_DIR/model.json)
  --loss-csv FILE       loss trace (default OUT_DIR/loss.csv)
  --steps N             optimizer steps (default 1000 sm / 500 bilevel)
  --batch N             patches per step (default 16)
  --patch N             patch side length (default 96)
  --seed N              RNG seed (default 0)
  --sigma S             sm: smoothing noise level (default 0.02)
  --lower-noise-var V   bilevel: lower-level noise variance (default 0.1)
  --lambda-init L       bilevel: initial prior weight (default 0.04)
  --lr-weights / --lr-betas / --lr-lambda   learning rates";

pub fn run(cfg: &RunConfig) -> CmdResult {
    let method = cfg.choice("method", &["sm", "bilevel"])?;
    let data_dir = PathBuf::from(cfg.require_str("data")?);
    let dir = out_dir(cfg)?;
    let out = PathBuf::from(cfg.str_or("out", dir.join("model.json").to_str().unwrap()));
    let loss_csv = PathBuf::from(cfg.str_or("loss-csv", dir.join("loss.csv").to_str().unwrap()));
    let seed = cfg.u64_or("seed", 0)?;
    let batch = cfg.pos_usize_or("batch", 16)?;
    let patch = cfg.pos_usize_or("patch", 96)?;

    let dataset = load_dataset(&data_dir)?;
    for img in &dataset {
        if img.height() < patch || img.width() < patch {
            return Err(usage(format!(
                "patch size {patch} exceeds a {}x{} dataset image",
                img.height(),
                img.width()
            )));
        }
    }
    println!("method = {method}");
    println!("images = {}", dataset.len());
    let (model, trace) = match method.as_str() {
        "sm" => {
            let tc = DsmConfig {
                noise_sigma: cfg.pos_f64_or("sigma", 2e-2)?,
                batch_size: batch,
                n_steps: cfg.pos_usize_or("steps", 1000)?,
                lr_weights: cfg.pos_f64_or("lr-weights", 1e-5)?,
                lr_betas: cfg.pos_f64_or("lr-betas", 2e-4)?,
                patch_size: patch,
                seed,
            };
            cfg.finish()?;
            println!("noise_sigma = {}", tc.noise_sigma);
            println!("lr_weights = {}", tc.lr_weights);
            println!("lr_betas = {}", tc.lr_betas);
            println!("steps = {}", tc.n_steps);
            train_dsm(&dataset, &tc)?
        }
        "bilevel" => {
            let tc = BilevelConfig {
                lower_noise_var: cfg.pos_f64_or("lower-noise-var", 0.1)?,
                lr_weights: cfg.pos_f64_or("lr-weights", 1e-5)?,
                lr_betas: cfg.pos_f64_or("lr-betas", 5e-4)?,
                lr_lambda: cfg.pos_f64_or("lr-lambda", 1e-4)?,
                lambda_init: cfg.pos_f64_or("lambda-init", 1.0 / 25.0)?,
                batch_size: batch,
                n_steps: cfg.pos_usize_or("steps", 500)?,
                patch_size: patch,
                seed,
                ..Default::default()
            };
            cfg.finish()?;
            println!("lambda_init = {}", tc.lambda_init);
            println!("lower_noise_var = {}", tc.lower_noise_var);
            println!("lr_weights = {}", tc.lr_weights);
            println!("lr_betas = {}", tc.lr_betas);
            println!("lr_lambda = {}", tc.lr_lambda);
            println!("steps = {}", tc.n_steps);
            train_bilevel(&dataset, &tc)?
        }
        _ => unreachable!(),
    };
    model.save(&out)?;
    write_trace(&loss_csv, &trace, method == "bilevel")?;
    println!("model written to {}", out.display());
    if let Some(l) = model.lambda {
        println!("learned lambda = {l}");
    }
    Ok(Outcome::Success)
}

fn write_trace(
    path: &PathBuf,
    trace: &[TrainTraceRow],
    with_lambda: bool,
) -> Result<(), crate::CliError> {
    let header: &[&str] = if with_lambda {
        &["step", "loss", "grad_norm_weights", "grad_norm_betas", "lambda"]
    } else {
        &["step", "loss", "grad_norm_weights", "grad_norm_betas"]
    };
    write_csv(
        path,
        header,
        trace.iter().map(|r| {
            let mut row = vec![
                r.step as f64,
                r.loss,
                r.grad_norm_weights,
                r.grad_norm_betas,
            ];
            if with_lambda {
                row.push(r.lambda.unwrap_or(f64::NAN));
            }
            row
        }),
    )?;
    Ok(())
}
