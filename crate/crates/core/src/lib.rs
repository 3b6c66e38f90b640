//! Energy-based image priors for Bayesian inverse problems.
//!
//! The crate bundles everything needed to train a Fields-of-Experts energy
//! with negative-log Gaussian-mixture potentials, use it as a prior for
//! denoising, Fourier and Radon reconstruction (MAP via accelerated proximal
//! gradient, MMSE via Langevin sampling), and verify the underlying
//! measure-theoretic and Markov-chain claims on small discrete grids.
//!
//! Modules map onto the major subsystems:
//!
//! * [`image`], [`conv`], [`patch`], [`metrics`], [`io`] — dense image
//!   arithmetic, circular convolutions, the 5x5 DCT filter basis, patch
//!   sampling, PSNR and PGM/CSV input/output.
//! * [`potential`], [`foe`] — the Gaussian-mixture potentials and the
//!   Fields-of-Experts energy with all analytic derivatives.
//! * [`operators`], [`likelihood`], [`posterior`] — forward operators with
//!   exact adjoints, Gaussian/Poisson likelihoods and the tempered posterior.
//! * [`optimize`] — accelerated proximal gradient with Lipschitz
//!   backtracking, conjugate gradient, Adam.
//! * [`samplers`] — Metropolis-Hastings, Gibbs for mixture models,
//!   overdamped/underdamped Langevin, Hamiltonian Monte Carlo, chain
//!   statistics.
//! * [`training`] — denoising score matching and bilevel learning with
//!   implicit-function-theorem gradients.
//! * [`verify`] — brute-force finite-grid oracles: exact posteriors,
//!   Hellinger/total-variation distances, kernel stationarity checks.

pub mod conv;
pub mod error;
pub mod image;
pub mod foe;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod operators;
pub mod optimize;
pub mod patch;
pub mod posterior;
pub mod potential;
pub mod rng;
pub mod samplers;
pub mod synth;
pub mod threads;
pub mod training;
pub mod tv;
pub mod verify;

pub use error::{Error, Result};
pub use image::{Image, Kernel};
pub use rng::Rng;
