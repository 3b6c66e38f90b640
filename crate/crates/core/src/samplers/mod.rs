//! MCMC kernels over a generic differentiable log-target.
//!
//! All samplers draw from `pi(x) ∝ exp(-E(x))` given only the energy and its
//! gradient through the [`Target`] trait. One chain owns one [`Rng`] stream;
//! chains are embarrassingly parallel and identical seeds give identical
//! trajectories.

mod gibbs;
mod hmc;
mod langevin;
mod mh;

pub use gibbs::{gibbs_gmm_conditional, gibbs_gmm_run, gibbs_gmm_run_with_latent, GmmSpec};
pub use hmc::{hmc_run, leapfrog, HmcRun};
pub use langevin::{
    ula_run, ula_run_with, ula_step, underdamped_moments, underdamped_run, underdamped_step,
    UnderdampedMoments, UnderdampedParams, UnderdampedStep,
};
pub use mh::{mh_run, MhProposal, MhRun};

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Result};

/// Differentiable unnormalized negative log-density.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    /// `E(x)` up to an additive constant.
    fn neg_log_density(&self, x: &[f64]) -> f64;
    /// Gradient of `E`.
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// Target built from closures; the workhorse for tests and adapters.
pub struct FnTarget<F, G> {
    dim: usize,
    value: F,
    gradient: G,
}

impl<F, G> FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, value: F, gradient: G) -> Self {
        Self {
            dim,
            value,
            gradient,
        }
    }
}

impl<F, G> Target for FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn neg_log_density(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

/// Advisory overdamped-Langevin step bound `2 m / L^2` from the geometric
/// ergodicity theory for `m`-strongly convex energies with `L`-Lipschitz
/// gradients. Callers warn rather than fail when exceeding it; the imaging
/// posteriors are nonconvex and the bound is only a guide.
pub fn langevin_step_bound(strong_convexity: f64, lipschitz: f64) -> f64 {
    2.0 * strong_convexity / (lipschitz * lipschitz)
}

/// Streaming per-coordinate mean and variance (Welford), with optional
/// autocovariance accumulators at lags `1..=max_lag`.
#[derive(Debug, Clone)]
pub struct ChainStats {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    max_lag: usize,
    ring: VecDeque<Vec<f64>>,
    lag_prod_sums: Vec<Vec<f64>>,
    lag_counts: Vec<u64>,
}

impl ChainStats {
    pub fn new(dim: usize) -> Self {
        Self::with_lags(dim, 0)
    }

    pub fn with_lags(dim: usize, max_lag: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            max_lag,
            ring: VecDeque::with_capacity(max_lag + 1),
            lag_prod_sums: vec![vec![0.0; dim]; max_lag],
            lag_counts: vec![0; max_lag],
        }
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "sample of dim {} fed to accumulator of dim {}",
                x.len(),
                self.dim
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.dim {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
        for lag in 1..=self.max_lag {
            if self.ring.len() >= lag {
                let past = &self.ring[self.ring.len() - lag];
                let sums = &mut self.lag_prod_sums[lag - 1];
                for i in 0..self.dim {
                    sums[i] += x[i] * past[i];
                }
                self.lag_counts[lag - 1] += 1;
            }
        }
        if self.max_lag > 0 {
            self.ring.push_back(x.to_vec());
            if self.ring.len() > self.max_lag {
                self.ring.pop_front();
            }
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased per-coordinate variance; zeros before two samples arrive.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.dim];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|v| (v / denom).max(0.0)).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().iter().map(|v| v.sqrt()).collect()
    }

    /// Per-coordinate autocovariance estimate at `lag`, `None` if the lag was
    /// not accumulated or too few samples arrived.
    pub fn autocovariance(&self, lag: usize) -> Option<Vec<f64>> {
        if lag == 0 || lag > self.max_lag || self.lag_counts[lag - 1] == 0 {
            return None;
        }
        let n = self.lag_counts[lag - 1] as f64;
        Some(
            self.lag_prod_sums[lag - 1]
                .iter()
                .zip(&self.mean)
                .map(|(s, m)| s / n - m * m)
                .collect(),
        )
    }
}

/// Writes samples as a flat binary stream: `dim` and `count` as
/// little-endian u64, then all coordinates as little-endian f64, sample by
/// sample.
pub fn write_samples_bin<'a>(
    path: impl AsRef<Path>,
    dim: usize,
    samples: impl IntoIterator<Item = &'a [f64]>,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    let mut count: u64 = 0;
    for s in samples {
        if s.len() != dim {
            return Err(invalid("sample dimension mismatch"));
        }
        for v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        count += 1;
    }
    let mut file = std::fs::File::create(path.as_ref())?;
    file.write_all(&(dim as u64).to_le_bytes())?;
    file.write_all(&count.to_le_bytes())?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a binary sample dump written by [`write_samples_bin`].
pub fn read_samples_bin(path: impl AsRef<Path>) -> Result<(usize, Vec<Vec<f64>>)> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < 16 {
        return Err(crate::Error::Format("sample dump too short".into()));
    }
    let dim = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let need = 16 + 8 * dim * count;
    if bytes.len() < need {
        return Err(crate::Error::Format("sample dump truncated".into()));
    }
    let mut samples = Vec::with_capacity(count);
    let mut off = 16;
    for _ in 0..count {
        let mut s = Vec::with_capacity(dim);
        for _ in 0..dim {
            s.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        samples.push(s);
    }
    Ok((dim, samples))
}

/// Writes the per-coordinate summary (index, mean, std) as CSV.
pub fn write_chain_summary_csv(path: impl AsRef<Path>, stats: &ChainStats) -> Result<()> {
    let std = stats.std();
    let rows = (0..stats.dim()).map(|i| vec![i as f64, stats.mean()[i], std[i]]);
    crate::io::write_csv(path, &["index", "mean", "std"], rows)
}
