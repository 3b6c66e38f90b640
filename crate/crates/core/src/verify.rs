//! Brute-force finite-grid oracles: exact posteriors, Hellinger and total
//! variation distances, stationarity of Metropolis-Hastings and Gibbs
//! kernel matrices, and posterior stability curves.
//!
//! Everything here is dense, exact linear algebra on small grids; these are
//! reference oracles for the measure-theoretic claims, not production paths.

use std::path::Path;

use crate::error::{domain, invalid, Result};
use crate::rng::Rng;
use crate::samplers::{ula_run_with, ChainStats, FnTarget};

/// Probability vector on a finite grid of support points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() || support.is_empty() {
            return Err(invalid("support and probabilities must align"));
        }
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(invalid("probabilities must be nonnegative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { support, probs })
    }

    /// Normalizes nonnegative weights into a distribution.
    pub fn normalized(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(domain("weights carry no mass"));
        }
        let probs = weights.iter().map(|w| w / sum).collect();
        Self::new(support, probs)
    }

    /// Discretizes a density on a uniform grid over `[lo, hi]`.
    pub fn from_density(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let support: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n as f64 - 1.0))
            .collect();
        let weights: Vec<f64> = support.iter().map(|x| f(*x)).collect();
        Self::normalized(support, weights)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| x * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| (x - m) * (x - m) * p)
            .sum()
    }

    fn check_same_support(&self, other: &DiscreteDist) -> Result<()> {
        if self.support.len() != other.support.len()
            || self
                .support
                .iter()
                .zip(&other.support)
                .any(|(a, b)| a != b)
        {
            return Err(invalid("distributions live on different supports"));
        }
        Ok(())
    }
}

/// Exact grid posterior: pointwise `likelihood(y, x) * prior(x)`,
/// renormalized. Returns the posterior and the evidence `p_Y(y)`.
pub fn grid_posterior(
    prior: &DiscreteDist,
    likelihood: impl Fn(f64, f64) -> f64,
    y: f64,
) -> Result<(DiscreteDist, f64)> {
    let weights: Vec<f64> = prior
        .support()
        .iter()
        .zip(prior.probs())
        .map(|(x, p)| likelihood(y, *x) * p)
        .collect();
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(invalid("likelihood produced negative or non-finite values"));
    }
    let evidence: f64 = weights.iter().sum();
    if !(evidence > 0.0) {
        return Err(domain("zero evidence: the data rules out the whole grid"));
    }
    let probs = weights.iter().map(|w| w / evidence).collect();
    Ok((DiscreteDist::new(prior.support().to_vec(), probs)?, evidence))
}

/// Hellinger distance `sqrt(1/2 sum (sqrt(p) - sqrt(q))^2)` on a shared grid.
pub fn hellinger(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.check_same_support(q)?;
    let s: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((0.5 * s).sqrt())
}

/// Total variation distance `1/2 sum |p - q|` on a shared grid.
pub fn tv(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.check_same_support(q)?;
    Ok(0.5
        * p.probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Result of the `d_TV <= sqrt(2) d_Hel` comparison.
#[derive(Debug, Clone, Copy)]
pub struct TvHellingerCheck {
    pub tv: f64,
    pub hellinger: f64,
    pub holds: bool,
}

pub fn check_tv_hellinger(p: &DiscreteDist, q: &DiscreteDist) -> Result<TvHellingerCheck> {
    let t = tv(p, q)?;
    let h = hellinger(p, q)?;
    Ok(TvHellingerCheck {
        tv: t,
        hellinger: h,
        holds: t <= std::f64::consts::SQRT_2 * h + 1e-12,
    })
}

fn check_row_stochastic(mat: &[Vec<f64>], n: usize) -> Result<()> {
    if mat.len() != n {
        return Err(invalid("matrix size does not match the support"));
    }
    for row in mat {
        if row.len() != n {
            return Err(invalid("matrix must be square"));
        }
        if row.iter().any(|v| *v < 0.0) {
            return Err(invalid("matrix entries must be nonnegative"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("row sums to {sum}, not 1")));
        }
    }
    Ok(())
}

/// Metropolis-Hastings transition matrix for a finite target: off-diagonal
/// entries `q(x, y) rho(x, y)` with
/// `rho = min(p(y) q(y, x) / (p(x) q(x, y)), 1)` (and 1 where the
/// denominator vanishes); the diagonal absorbs the rejected mass.
pub fn mh_kernel_matrix(
    target: &DiscreteDist,
    proposal: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = target.len();
    check_row_stochastic(proposal, n)?;
    let p = target.probs();
    let mut kernel = vec![vec![0.0; n]; n];
    for x in 0..n {
        let mut off_diag = 0.0;
        for y in 0..n {
            if y == x {
                continue;
            }
            let denom = p[x] * proposal[x][y];
            let rho = if denom > 0.0 {
                (p[y] * proposal[y][x] / denom).min(1.0)
            } else {
                1.0
            };
            kernel[x][y] = proposal[x][y] * rho;
            off_diag += kernel[x][y];
        }
        kernel[x][x] = 1.0 - off_diag;
    }
    Ok(kernel)
}

/// `max_y |(pi R)_y - pi_y|` for a row-stochastic kernel.
pub fn stationarity_residual(pi: &[f64], kernel: &[Vec<f64>]) -> f64 {
    let n = pi.len();
    let mut worst = 0.0f64;
    for y in 0..n {
        let mut acc = 0.0;
        for x in 0..n {
            acc += pi[x] * kernel[x][y];
        }
        worst = worst.max((acc - pi[y]).abs());
    }
    worst
}

/// `max_{x != y} |pi_x R_xy - pi_y R_yx|`.
pub fn detailed_balance_residual(pi: &[f64], kernel: &[Vec<f64>]) -> f64 {
    let n = pi.len();
    let mut worst = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            if x != y {
                worst = worst.max((pi[x] * kernel[x][y] - pi[y] * kernel[y][x]).abs());
            }
        }
    }
    worst
}

/// One full two-block Gibbs sweep as a matrix over the product state space,
/// plus the positivity-condition report.
#[derive(Debug, Clone)]
pub struct GibbsKernel {
    /// Row-stochastic kernel over states `(x, z)` flattened as `x * nz + z`.
    pub kernel: Vec<Vec<f64>>,
    /// States `(x, z)` with positive marginals but zero joint mass; their
    /// presence breaks irreducibility, not stationarity.
    pub positivity_violations: Vec<(usize, usize)>,
}

/// Builds the sweep kernel `sample z' | x, then x' | z'` from a joint
/// probability matrix over `X x Z`.
pub fn gibbs_kernel_matrix(joint: &[Vec<f64>]) -> Result<GibbsKernel> {
    let nx = joint.len();
    if nx == 0 {
        return Err(invalid("joint must be nonempty"));
    }
    let nz = joint[0].len();
    if nz == 0 || joint.iter().any(|row| row.len() != nz) {
        return Err(invalid("joint must be rectangular"));
    }
    if joint.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(invalid("joint entries must be nonnegative"));
    }
    let total: f64 = joint.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("joint sums to {total}, not 1")));
    }
    let px: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
    let pz: Vec<f64> = (0..nz)
        .map(|z| joint.iter().map(|row| row[z]).sum())
        .collect();
    let mut violations = Vec::new();
    for x in 0..nx {
        for z in 0..nz {
            if px[x] > 0.0 && pz[z] > 0.0 && joint[x][z] == 0.0 {
                violations.push((x, z));
            }
        }
    }
    // Conditionals; uniform on zero-marginal states, which carry no mass
    // under the joint and only keep the kernel stochastic.
    let z_given_x = |x: usize, z: usize| {
        if px[x] > 0.0 {
            joint[x][z] / px[x]
        } else {
            1.0 / nz as f64
        }
    };
    let x_given_z = |x: usize, z: usize| {
        if pz[z] > 0.0 {
            joint[x][z] / pz[z]
        } else {
            1.0 / nx as f64
        }
    };
    let n = nx * nz;
    let mut kernel = vec![vec![0.0; n]; n];
    for x in 0..nx {
        for z in 0..nz {
            let row = &mut kernel[x * nz + z];
            for zp in 0..nz {
                let pzp = z_given_x(x, zp);
                if pzp == 0.0 {
                    continue;
                }
                for xp in 0..nx {
                    row[xp * nz + zp] += pzp * x_given_z(xp, zp);
                }
            }
        }
    }
    Ok(GibbsKernel {
        kernel,
        positivity_violations: violations,
    })
}

/// One point of a posterior stability curve.
#[derive(Debug, Clone, Copy)]
pub struct StabilityPoint {
    pub delta_abs: f64,
    pub hellinger: f64,
    pub tv: f64,
}

/// Hellinger (and total variation) distance between the posteriors at
/// `y_hat + delta` and at `y_hat`, per perturbation.
pub fn posterior_stability_curve(
    prior: &DiscreteDist,
    likelihood: impl Fn(f64, f64) -> f64,
    y_hat: f64,
    deltas: &[f64],
) -> Result<Vec<StabilityPoint>> {
    let (base, _) = grid_posterior(prior, &likelihood, y_hat)?;
    deltas
        .iter()
        .map(|d| {
            let (shifted, _) = grid_posterior(prior, &likelihood, y_hat + d)?;
            Ok(StabilityPoint {
                delta_abs: d.abs(),
                hellinger: hellinger(&shifted, &base)?,
                tv: tv(&shifted, &base)?,
            })
        })
        .collect()
}

fn gaussian_likelihood(var: f64) -> impl Fn(f64, f64) -> f64 {
    move |y: f64, x: f64| (-(y - x) * (y - x) / (2.0 * var)).exp()
}

/// Outcome of one verification case.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Row of the ULA bias table.
#[derive(Debug, Clone, Copy)]
pub struct UlaBiasRow {
    pub scale: f64,
    pub tau: f64,
    pub expected: f64,
    pub measured: f64,
    pub rel_err: f64,
}

/// Empirical ULA stationary variances against `s^2 / (1 - tau / (2 s^2))`
/// for the standard `(s, tau)` grid, 10^6 samples each.
pub fn ula_bias_table(seed: u64) -> Result<Vec<UlaBiasRow>> {
    let mut rows = Vec::new();
    for (i, (s, tau)) in [(1.0, 0.05), (1.0, 0.1), (2.0, 0.2)].into_iter().enumerate() {
        let s2: f64 = s * s;
        let target = FnTarget::new(
            1,
            move |x: &[f64]| 0.5 * x[0] * x[0] / s2,
            move |x: &[f64]| vec![x[0] / s2],
        );
        let mut rng = Rng::new(seed.wrapping_add(i as u64));
        let mut stats = ChainStats::new(1);
        let x = ula_run_with(&target, tau, &[0.0], 50_000, &mut rng, |_, _| {})?;
        ula_run_with(&target, tau, &x, 1_000_000, &mut rng, |_, x| {
            stats.update(x).expect("dim fixed");
        })?;
        let expected = s2 / (1.0 - tau / (2.0 * s2));
        let measured = stats.variance()[0];
        rows.push(UlaBiasRow {
            scale: s,
            tau,
            expected,
            measured,
            rel_err: (measured - expected).abs() / expected,
        });
    }
    Ok(rows)
}

/// Random sweep of the `d_TV <= sqrt(2) d_Hel` inequality; returns the
/// worst slack observed and whether every pair satisfied it.
pub fn sweep_tv_hellinger(n_pairs: usize, grid: usize, seed: u64) -> Result<(bool, f64)> {
    let mut rng = Rng::new(seed);
    let support: Vec<f64> = (0..grid).map(|i| i as f64).collect();
    let mut all_hold = true;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_pairs {
        let a: Vec<f64> = (0..grid).map(|_| rng.uniform() + 1e-6).collect();
        let b: Vec<f64> = (0..grid)
            .map(|_| if rng.uniform() < 0.1 { 0.0 } else { rng.uniform() })
            .collect();
        let p = DiscreteDist::normalized(support.clone(), a)?;
        let q = DiscreteDist::normalized(support.clone(), b)?;
        let c = check_tv_hellinger(&p, &q)?;
        all_hold &= c.holds;
        worst = worst.max(c.tv - std::f64::consts::SQRT_2 * c.hellinger);
        if c.hellinger > 1.0 + 1e-12 {
            all_hold = false;
        }
    }
    Ok((all_hold, worst))
}

/// Runs the named verification cases (all of them when `cases` is empty),
/// writing CSV reports into `out_dir` when given.
pub fn run_report(cases: &[String], out_dir: Option<&Path>) -> Result<Vec<CaseResult>> {
    let all = [
        "tv-hellinger",
        "conjugate-posterior",
        "stability-curve",
        "evidence-continuity",
        "mh-kernel",
        "gibbs-kernel",
        "ula-bias",
    ];
    let selected: Vec<&str> = if cases.is_empty() {
        all.to_vec()
    } else {
        let unknown: Vec<&String> = cases
            .iter()
            .filter(|c| !all.contains(&c.as_str()))
            .collect();
        if !unknown.is_empty() {
            return Err(invalid(format!("unknown verification cases: {unknown:?}")));
        }
        all.iter().copied().filter(|c| cases.iter().any(|s| s == c)).collect()
    };
    let mut results = Vec::new();
    for name in selected {
        let result = match name {
            "tv-hellinger" => {
                let (ok, worst) = sweep_tv_hellinger(1000, 50, 42)?;
                CaseResult {
                    name: "tv-hellinger",
                    passed: ok,
                    detail: format!("worst slack {worst:.3e} over 1000 random pairs"),
                }
            }
            "conjugate-posterior" => conjugate_posterior_case()?,
            "stability-curve" => stability_curve_case(out_dir)?,
            "evidence-continuity" => evidence_continuity_case()?,
            "mh-kernel" => mh_kernel_case()?,
            "gibbs-kernel" => gibbs_kernel_case()?,
            "ula-bias" => ula_bias_case(out_dir)?,
            _ => unreachable!(),
        };
        results.push(result);
    }
    Ok(results)
}

fn conjugate_posterior_case() -> Result<CaseResult> {
    // Gaussian prior x Gaussian likelihood against the closed form.
    let (m0, v0) = (0.2, 1.3);
    let (y, vl) = (0.5, 0.4);
    let prior = DiscreteDist::from_density(-10.0, 10.0, 4001, |x| {
        (-(x - m0) * (x - m0) / (2.0 * v0)).exp()
    })?;
    let (post, _) = grid_posterior(&prior, gaussian_likelihood(vl), y)?;
    let want_var = 1.0 / (1.0 / v0 + 1.0 / vl);
    let want_mean = want_var * (m0 / v0 + y / vl);
    let mean_err = (post.mean() - want_mean).abs();
    let var_err = (post.variance() - want_var).abs();
    Ok(CaseResult {
        name: "conjugate-posterior",
        passed: mean_err < 1e-4 && var_err < 1e-4,
        detail: format!("mean err {mean_err:.2e}, variance err {var_err:.2e}"),
    })
}

fn stability_curve_case(out_dir: Option<&Path>) -> Result<CaseResult> {
    let prior = DiscreteDist::from_density(-8.0, 8.0, 2001, |x| (-x * x / 2.0).exp())?;
    let deltas = [0.4, 0.2, 0.1, 0.05, 0.0];
    let curve = posterior_stability_curve(&prior, gaussian_likelihood(0.25), 0.3, &deltas)?;
    if let Some(dir) = out_dir {
        crate::io::write_csv(
            dir.join("stability_curve.csv"),
            &["delta", "hellinger", "tv"],
            curve.iter().map(|p| vec![p.delta_abs, p.hellinger, p.tv]),
        )?;
    }
    let zero_at_zero = curve.last().map(|p| p.hellinger == 0.0).unwrap_or(false);
    let monotone = curve.windows(2).all(|w| w[1].hellinger < w[0].hellinger || w[1].delta_abs == 0.0 && w[1].hellinger <= w[0].hellinger);
    let bounded = curve.iter().all(|p| p.hellinger <= 1.0 && p.tv <= 1.0);
    Ok(CaseResult {
        name: "stability-curve",
        passed: zero_at_zero && monotone && bounded,
        detail: format!(
            "distances {:?}",
            curve.iter().map(|p| p.hellinger).collect::<Vec<_>>()
        ),
    })
}

fn evidence_continuity_case() -> Result<CaseResult> {
    let prior = DiscreteDist::from_density(-8.0, 8.0, 2001, |x| (-x * x / 2.0).exp())?;
    let like = gaussian_likelihood(0.25);
    let (_, base) = grid_posterior(&prior, &like, 0.3)?;
    let mut last = f64::INFINITY;
    let mut monotone = true;
    for delta in [0.4, 0.2, 0.1, 0.05] {
        let (_, ev) = grid_posterior(&prior, &like, 0.3 + delta)?;
        let gap = (ev - base).abs();
        monotone &= gap < last;
        last = gap;
    }
    Ok(CaseResult {
        name: "evidence-continuity",
        passed: monotone && last < 0.05,
        detail: format!("evidence gap at delta 0.05: {last:.3e}"),
    })
}

fn mh_kernel_case() -> Result<CaseResult> {
    let mut rng = Rng::new(271828);
    let mut worst_stat = 0.0f64;
    let mut worst_db = 0.0f64;
    let mut worst_row = 0.0f64;
    for _ in 0..100 {
        let n = 2 + rng.below(9);
        let support: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let target = DiscreteDist::normalized(
            support,
            (0..n).map(|_| rng.uniform() + 0.01).collect(),
        )?;
        let proposal: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let row: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.01).collect();
                let s: f64 = row.iter().sum();
                row.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let kernel = mh_kernel_matrix(&target, &proposal)?;
        for row in &kernel {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        worst_stat = worst_stat.max(stationarity_residual(target.probs(), &kernel));
        worst_db = worst_db.max(detailed_balance_residual(target.probs(), &kernel));
    }
    Ok(CaseResult {
        name: "mh-kernel",
        passed: worst_stat <= 1e-14 && worst_db <= 1e-14 && worst_row <= 1e-14,
        detail: format!(
            "stationarity {worst_stat:.2e}, detailed balance {worst_db:.2e}, rows {worst_row:.2e}"
        ),
    })
}

fn gibbs_kernel_case() -> Result<CaseResult> {
    let mut rng = Rng::new(314159);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let nx = 2 + rng.below(4);
        let nz = 2 + rng.below(4);
        let mut joint: Vec<Vec<f64>> = (0..nx)
            .map(|_| (0..nz).map(|_| rng.uniform() + 0.01).collect())
            .collect();
        let total: f64 = joint.iter().flatten().sum();
        for row in joint.iter_mut() {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let gk = gibbs_kernel_matrix(&joint)?;
        if !gk.positivity_violations.is_empty() {
            return Ok(CaseResult {
                name: "gibbs-kernel",
                passed: false,
                detail: "full-support joint flagged as violating positivity".into(),
            });
        }
        let flat: Vec<f64> = joint.iter().flatten().copied().collect();
        worst = worst.max(stationarity_residual(&flat, &gk.kernel));
    }
    // A joint with a zero block must be flagged but still stationary.
    let blocked = vec![vec![0.5, 0.0], vec![0.25, 0.25]];
    let gk = gibbs_kernel_matrix(&blocked)?;
    let flagged = gk.positivity_violations == vec![(0, 1)];
    let flat: Vec<f64> = blocked.iter().flatten().copied().collect();
    let blocked_res = stationarity_residual(&flat, &gk.kernel);
    Ok(CaseResult {
        name: "gibbs-kernel",
        passed: worst <= 1e-14 && flagged && blocked_res <= 1e-14,
        detail: format!(
            "stationarity {worst:.2e}; positivity violation detected: {flagged}"
        ),
    })
}

fn ula_bias_case(out_dir: Option<&Path>) -> Result<CaseResult> {
    let rows = ula_bias_table(9001)?;
    if let Some(dir) = out_dir {
        crate::io::write_csv(
            dir.join("ula_bias.csv"),
            &["s", "tau", "expected", "measured"],
            rows.iter()
                .map(|r| vec![r.scale, r.tau, r.expected, r.measured]),
        )?;
    }
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0f64, f64::max);
    Ok(CaseResult {
        name: "ula-bias",
        passed: worst < 0.01,
        detail: format!("worst relative error {worst:.3e}"),
    })
}
