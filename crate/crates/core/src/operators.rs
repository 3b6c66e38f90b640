//! Linear forward operators with exact adjoints.
//!
//! Three operators cover the experiments: the identity (denoising), a masked
//! half-spectrum Fourier transform, and a parallel-beam Radon projector with
//! Joseph linear-interpolation line integrals. Each adjoint is the exact
//! transpose of the discrete forward map, which the dot tests pin down at
//! 1e-10 relative accuracy.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Measurement vector; complex entries keep the retained half-spectrum
/// coefficients in a deterministic scan order.
#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Measurement {
    pub fn len(&self) -> usize {
        match self {
            Measurement::Real(v) => v.len(),
            Measurement::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_real(&self) -> Result<&[f64]> {
        match self {
            Measurement::Real(v) => Ok(v),
            Measurement::Complex(_) => Err(invalid("expected a real measurement")),
        }
    }

    pub fn as_complex(&self) -> Result<&[Complex64]> {
        match self {
            Measurement::Complex(v) => Ok(v),
            Measurement::Real(_) => Err(invalid("expected a complex measurement")),
        }
    }

    /// Entry-wise difference; variants and lengths must match.
    pub fn sub(&self, other: &Measurement) -> Result<Measurement> {
        match (self, other) {
            (Measurement::Real(a), Measurement::Real(b)) if a.len() == b.len() => Ok(
                Measurement::Real(a.iter().zip(b).map(|(x, y)| x - y).collect()),
            ),
            (Measurement::Complex(a), Measurement::Complex(b)) if a.len() == b.len() => Ok(
                Measurement::Complex(a.iter().zip(b).map(|(x, y)| x - y).collect()),
            ),
            _ => Err(invalid("measurement variant or length mismatch")),
        }
    }
}

/// Parallel-beam acquisition geometry. Detector offsets are
/// `(k - (n_detectors - 1)/2) * detector_width` in pixel units and rays run
/// perpendicular to the detector array.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonGeometry {
    n_detectors: usize,
    detector_width: f64,
    angles: Vec<f64>,
}

impl RadonGeometry {
    pub fn new(n_detectors: usize, detector_width: f64, angles: Vec<f64>) -> Result<Self> {
        if n_detectors == 0 {
            return Err(invalid("need at least one detector"));
        }
        if !(detector_width > 0.0) {
            return Err(invalid("detector width must be positive"));
        }
        if angles.is_empty() || angles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("angles must be nonempty and strictly increasing"));
        }
        Ok(Self {
            n_detectors,
            detector_width,
            angles,
        })
    }

    /// `n_angles` projections equispaced in `[0, pi)`.
    pub fn equispaced(n_detectors: usize, detector_width: f64, n_angles: usize) -> Result<Self> {
        let angles = (0..n_angles)
            .map(|i| std::f64::consts::PI * i as f64 / n_angles as f64)
            .collect();
        Self::new(n_detectors, detector_width, angles)
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn detector_width(&self) -> f64 {
        self.detector_width
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn output_len(&self) -> usize {
        self.n_detectors * self.angles.len()
    }
}

/// Boolean mask over the `h x (floor(w/2) + 1)` half-spectrum grid of a real
/// 2-D FFT, plus the deterministic scan order of the kept bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMask {
    height: usize,
    width: usize,
    kept: Vec<(usize, usize)>,
    mask: Vec<bool>,
}

impl FourierMask {
    pub fn from_flags(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        let half_w = width / 2 + 1;
        if mask.len() != height * half_w {
            return Err(invalid(format!(
                "mask length {} does not match {}x{}",
                mask.len(),
                height,
                half_w
            )));
        }
        let mut kept = Vec::new();
        for r in 0..height {
            for c in 0..half_w {
                if mask[r * half_w + c] {
                    kept.push((r, c));
                }
            }
        }
        if kept.is_empty() {
            return Err(invalid("mask keeps no coefficients"));
        }
        Ok(Self {
            height,
            width,
            kept,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn half_width(&self) -> usize {
        self.width / 2 + 1
    }

    pub fn kept(&self) -> &[(usize, usize)] {
        &self.kept
    }

    pub fn flags(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_kept(&self) -> usize {
        self.kept.len()
    }

    /// Mask rendered as an image over the half-spectrum grid (1 = kept).
    pub fn to_image(&self) -> Image {
        let data = self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Image::new(self.height, self.half_width(), data).expect("mask shape")
    }

    /// Conjugate-symmetry duplication weight of a bin: 1 when the bin is its
    /// own mirror in the full spectrum, 2 otherwise.
    fn weight(&self, r: usize, c: usize) -> f64 {
        let self_conjugate =
            (self.height - r) % self.height == r && (self.width - c) % self.width == c;
        if self_conjugate {
            1.0
        } else {
            2.0
        }
    }
}

/// Builds a half-spectrum mask that keeps the lowest `keep_low` fraction of
/// bins by wrapped radial frequency deterministically, plus a uniformly
/// random `keep_rest` fraction of the remainder. Counts use floor rounding.
pub fn make_fourier_mask(
    h: usize,
    w: usize,
    keep_low: f64,
    keep_rest: f64,
    rng: &mut Rng,
) -> Result<FourierMask> {
    if !(0.0..=1.0).contains(&keep_low) || !(0.0..=1.0).contains(&keep_rest) {
        return Err(invalid("keep fractions must lie in [0, 1]"));
    }
    let half_w = w / 2 + 1;
    let m = h * half_w;
    // Wrapped radial frequency; ties broken by index so the low set does not
    // depend on the seed.
    let mut order: Vec<(u64, usize, usize)> = Vec::with_capacity(m);
    for r in 0..h {
        for c in 0..half_w {
            let fr = r.min(h - r) as u64;
            let fc = c as u64;
            order.push((fr * fr + fc * fc, r, c));
        }
    }
    order.sort();
    let n_low = ((keep_low * m as f64).floor() as usize).min(m);
    let mut flags = vec![false; m];
    for &(_, r, c) in order.iter().take(n_low) {
        flags[r * half_w + c] = true;
    }
    let mut rest: Vec<(usize, usize)> = order[n_low..].iter().map(|&(_, r, c)| (r, c)).collect();
    let n_rest = ((keep_rest * rest.len() as f64).floor() as usize).min(rest.len());
    // Partial Fisher-Yates: the first n_rest slots become the kept sample.
    for i in 0..n_rest {
        let j = i + rng.below(rest.len() - i);
        rest.swap(i, j);
    }
    for &(r, c) in rest.iter().take(n_rest) {
        flags[r * half_w + c] = true;
    }
    FourierMask::from_flags(h, w, flags)
}

/// Identity, masked-Fourier or Radon forward map with exact adjoint.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOperator {
    Identity {
        height: usize,
        width: usize,
    },
    MaskedFourier(FourierMask),
    Radon {
        height: usize,
        width: usize,
        geometry: RadonGeometry,
    },
}

impl ForwardOperator {
    pub fn identity(height: usize, width: usize) -> Self {
        ForwardOperator::Identity { height, width }
    }

    pub fn image_shape(&self) -> (usize, usize) {
        match self {
            ForwardOperator::Identity { height, width } => (*height, *width),
            ForwardOperator::MaskedFourier(mask) => (mask.height(), mask.width()),
            ForwardOperator::Radon { height, width, .. } => (*height, *width),
        }
    }

    /// Output dimension `d` of the operator.
    pub fn output_len(&self) -> usize {
        match self {
            ForwardOperator::Identity { height, width } => height * width,
            ForwardOperator::MaskedFourier(mask) => mask.n_kept(),
            ForwardOperator::Radon { geometry, .. } => geometry.output_len(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, ForwardOperator::MaskedFourier(_))
    }

    fn check_image(&self, x: &Image) -> Result<()> {
        let (h, w) = self.image_shape();
        if x.height() != h || x.width() != w {
            return Err(invalid(format!(
                "image {}x{} does not match operator domain {}x{}",
                x.height(),
                x.width(),
                h,
                w
            )));
        }
        Ok(())
    }

    fn check_measurement(&self, y: &Measurement) -> Result<()> {
        if y.len() != self.output_len() {
            return Err(invalid(format!(
                "measurement length {} does not match operator output {}",
                y.len(),
                self.output_len()
            )));
        }
        match (self.is_complex(), y) {
            (true, Measurement::Complex(_)) | (false, Measurement::Real(_)) => Ok(()),
            _ => Err(invalid("measurement variant does not match operator")),
        }
    }

    /// Applies the forward map.
    pub fn apply(&self, x: &Image) -> Result<Measurement> {
        self.check_image(x)?;
        match self {
            ForwardOperator::Identity { .. } => Ok(Measurement::Real(x.data().to_vec())),
            ForwardOperator::MaskedFourier(mask) => {
                let mut grid: Vec<Complex64> =
                    x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
                fft2(&mut grid, x.height(), x.width(), false);
                let out = mask
                    .kept()
                    .iter()
                    .map(|&(r, c)| grid[r * x.width() + c])
                    .collect();
                Ok(Measurement::Complex(out))
            }
            ForwardOperator::Radon { geometry, .. } => {
                let mut out = vec![0.0; geometry.output_len()];
                for (a, &angle) in geometry.angles().iter().enumerate() {
                    for k in 0..geometry.n_detectors() {
                        let t = detector_offset(geometry, k);
                        let mut acc = 0.0;
                        for_each_ray_weight(x.height(), x.width(), angle, t, |pix, wgt| {
                            acc += wgt * x.data()[pix];
                        });
                        out[a * geometry.n_detectors() + k] = acc;
                    }
                }
                Ok(Measurement::Real(out))
            }
        }
    }

    /// Exact adjoint with respect to the real inner product; in the complex
    /// case the pairing is the real part of the conjugate product with
    /// conjugate-symmetry duplication weights.
    pub fn adjoint(&self, y: &Measurement) -> Result<Image> {
        self.check_measurement(y)?;
        let (h, w) = self.image_shape();
        match self {
            ForwardOperator::Identity { .. } => {
                Image::new(h, w, y.as_real()?.to_vec())
            }
            ForwardOperator::MaskedFourier(mask) => {
                let vals = y.as_complex()?;
                let mut grid = vec![Complex64::new(0.0, 0.0); h * w];
                for (&(r, c), &v) in mask.kept().iter().zip(vals) {
                    grid[r * w + c] += mask.weight(r, c) * v;
                }
                fft2(&mut grid, h, w, true);
                Image::new(h, w, grid.iter().map(|z| z.re).collect())
            }
            ForwardOperator::Radon { geometry, .. } => {
                let vals = y.as_real()?;
                let mut out = Image::zeros(h, w);
                for (a, &angle) in geometry.angles().iter().enumerate() {
                    for k in 0..geometry.n_detectors() {
                        let v = vals[a * geometry.n_detectors() + k];
                        if v == 0.0 {
                            continue;
                        }
                        let t = detector_offset(geometry, k);
                        for_each_ray_weight(h, w, angle, t, |pix, wgt| {
                            out.data_mut()[pix] += wgt * v;
                        });
                    }
                }
                Ok(out)
            }
        }
    }

    /// Squared measurement norm `<y, y>` under the operator's inner product.
    pub fn norm_sq(&self, y: &Measurement) -> Result<f64> {
        self.check_measurement(y)?;
        Ok(match (self, y) {
            (_, Measurement::Real(v)) => v.iter().map(|a| a * a).sum(),
            (ForwardOperator::MaskedFourier(mask), Measurement::Complex(v)) => mask
                .kept()
                .iter()
                .zip(v)
                .map(|(&(r, c), z)| mask.weight(r, c) * z.norm_sqr())
                .sum(),
            _ => unreachable!("variant checked"),
        })
    }

    /// Largest singular value of the operator, estimated by power iteration
    /// on `A^T A`; deterministic.
    pub fn op_norm_sq_estimate(&self, iters: usize) -> f64 {
        let (h, w) = self.image_shape();
        let mut v = Image::zeros(h, w);
        for (i, d) in v.data_mut().iter_mut().enumerate() {
            *d = if i % 2 == 0 { 1.0 } else { -0.5 } + (i % 7) as f64 * 0.1;
        }
        let mut lambda = 0.0;
        for _ in 0..iters.max(1) {
            let av = self.apply(&v).expect("shape fixed");
            let mut atav = self.adjoint(&av).expect("shape fixed");
            lambda = atav.norm() / v.norm().max(1e-300);
            let n = atav.norm();
            if n == 0.0 {
                return 0.0;
            }
            atav.scale(1.0 / n);
            v = atav;
        }
        lambda
    }
}

fn detector_offset(geometry: &RadonGeometry, k: usize) -> f64 {
    (k as f64 - (geometry.n_detectors() as f64 - 1.0) / 2.0) * geometry.detector_width()
}

/// Joseph line integral: marches the ray over its dominant axis and
/// linearly interpolates between the two neighboring pixels on the other
/// axis; weights carry the `1/|dominant direction component|` arc length.
/// Both apply and adjoint run this exact loop, so the discrete maps are
/// transposes of each other by construction.
fn for_each_ray_weight(
    h: usize,
    w: usize,
    angle: f64,
    t: f64,
    mut f: impl FnMut(usize, f64),
) {
    let (sin, cos) = angle.sin_cos();
    // Ray: p(s) = t * n + s * d with normal n and direction d.
    let (nx, ny) = (cos, sin);
    let (dx, dy) = (-sin, cos);
    let half_w = (w as f64 - 1.0) / 2.0;
    let half_h = (h as f64 - 1.0) / 2.0;
    if dx.abs() >= dy.abs() {
        let inv = 1.0 / dx.abs();
        for j in 0..w {
            let x = j as f64 - half_w;
            let s = (x - t * nx) / dx;
            let y = t * ny + s * dy;
            let ry = y + half_h;
            let i0 = ry.floor();
            let frac = ry - i0;
            let i0 = i0 as i64;
            if (0..h as i64).contains(&i0) {
                f(i0 as usize * w + j, (1.0 - frac) * inv);
            }
            if (0..h as i64).contains(&(i0 + 1)) {
                f((i0 + 1) as usize * w + j, frac * inv);
            }
        }
    } else {
        let inv = 1.0 / dy.abs();
        for i in 0..h {
            let y = i as f64 - half_h;
            let s = (y - t * ny) / dy;
            let x = t * nx + s * dx;
            let cx = x + half_w;
            let j0 = cx.floor();
            let frac = cx - j0;
            let j0 = j0 as i64;
            if (0..w as i64).contains(&j0) {
                f(i * w + j0 as usize, (1.0 - frac) * inv);
            }
            if (0..w as i64).contains(&(j0 + 1)) {
                f(i * w + (j0 + 1) as usize, frac * inv);
            }
        }
    }
}

/// Unnormalized 2-D FFT over a row-major complex grid; `inverse` uses the
/// `exp(+2 pi i)` kernel, still unnormalized.
fn fft2(grid: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for r in 0..h {
        row_fft.process(&mut grid[r * w..(r + 1) * w]);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = grid[r * w + c];
        }
        col_fft.process(&mut col);
        for r in 0..h {
            grid[r * w + c] = col[r];
        }
    }
}

/// Writes a measurement as CSV with columns `index, value[, imag]`.
pub fn write_measurement_csv(
    path: impl AsRef<std::path::Path>,
    m: &Measurement,
) -> Result<()> {
    match m {
        Measurement::Real(v) => crate::io::write_csv(
            path,
            &["index", "value"],
            v.iter().enumerate().map(|(i, x)| vec![i as f64, *x]),
        ),
        Measurement::Complex(v) => crate::io::write_csv(
            path,
            &["index", "value", "imag"],
            v.iter().enumerate().map(|(i, z)| vec![i as f64, z.re, z.im]),
        ),
    }
}

/// Reads a measurement CSV written by [`write_measurement_csv`]; the header
/// decides between real and complex payloads.
pub fn read_measurement_csv(path: impl AsRef<std::path::Path>) -> Result<Measurement> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| crate::Error::Format("empty measurement csv".into()))?;
    let complex = match header.trim() {
        "index,value" => false,
        "index,value,imag" => true,
        other => {
            return Err(crate::Error::Format(format!(
                "unexpected measurement header {other:?}"
            )))
        }
    };
    let mut real = Vec::new();
    let mut cplx = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let want = if complex { 3 } else { 2 };
        if fields.len() != want {
            return Err(crate::Error::Format(format!(
                "measurement csv line {} has {} fields",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| crate::Error::Format(format!("bad number {s:?}")))
        };
        if complex {
            cplx.push(Complex64::new(parse(fields[1])?, parse(fields[2])?));
        } else {
            real.push(parse(fields[1])?);
        }
    }
    Ok(if complex {
        Measurement::Complex(cplx)
    } else {
        Measurement::Real(real)
    })
}
