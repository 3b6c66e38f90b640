//! Circular 2-D convolution, its exact adjoint, and the DCT filter basis.
//!
//! Kernels are centered: a tap at offset `(dr, dc)` with `dr, dc` in
//! `[-c, c]` multiplies the pixel at `p - (dr, dc)` (convolution flips the
//! kernel, correlation does not). This makes `conv2d_circular` and
//! `corr2d_circular` an exact adjoint pair, which the energy gradient
//! relies on.

use crate::error::{invalid, Result};
use crate::image::{Image, Kernel};

fn check_fits(img: &Image, k: &Kernel) -> Result<()> {
    if k.size() > img.height().min(img.width()) {
        return Err(invalid(format!(
            "kernel of size {} does not fit a {}x{} image",
            k.size(),
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Circular convolution: `out[p] = sum_q k[q] * img[(p - q) mod shape]`.
pub fn conv2d_circular(img: &Image, k: &Kernel) -> Result<Image> {
    check_fits(img, k)?;
    Ok(apply_taps(img, k, false))
}

/// Adjoint of [`conv2d_circular`] with the same kernel:
/// `out[p] = sum_q k[q] * img[(p + q) mod shape]`.
pub fn corr2d_circular(img: &Image, k: &Kernel) -> Result<Image> {
    check_fits(img, k)?;
    Ok(apply_taps(img, k, true))
}

fn apply_taps(img: &Image, k: &Kernel, add_offsets: bool) -> Image {
    let (h, w) = (img.height(), img.width());
    let size = k.size();
    let c = k.center() as isize;
    let src = img.data();
    let mut out = vec![0.0; h * w];
    // Wrapped source row/column indices for every (output index, tap offset)
    // pair, precomputed per axis. Convolution reads `p - q`, correlation
    // reads `p + q`.
    let mut row_idx = vec![0usize; h * size];
    let mut col_idx = vec![0usize; w * size];
    for r in 0..h {
        for (ti, t) in (-c..=c).enumerate() {
            let q = if add_offsets { t } else { -t };
            row_idx[r * size + ti] = (r as isize + q).rem_euclid(h as isize) as usize;
        }
    }
    for col in 0..w {
        for (ti, t) in (-c..=c).enumerate() {
            let q = if add_offsets { t } else { -t };
            col_idx[col * size + ti] = (col as isize + q).rem_euclid(w as isize) as usize;
        }
    }
    let taps = k.taps();
    for r in 0..h {
        let rows = &row_idx[r * size..(r + 1) * size];
        for col in 0..w {
            let cols = &col_idx[col * size..(col + 1) * size];
            let mut acc = 0.0;
            for (ti, &rr) in rows.iter().enumerate() {
                let base = rr * w;
                let tap_row = &taps[ti * size..(ti + 1) * size];
                for (tj, &cc) in cols.iter().enumerate() {
                    acc += tap_row[tj] * src[base + cc];
                }
            }
            out[r * w + col] = acc;
        }
    }
    Image::new(h, w, out).expect("shape preserved")
}

/// The 25 orthonormal 5x5 DCT-II basis kernels. Index 0 is the constant
/// kernel (all taps `1/5`); every other kernel has zero tap sum.
pub fn dct_basis() -> Vec<Kernel> {
    dct_basis_sized(5)
}

/// Orthonormal DCT-II basis for `size x size` kernels, constant kernel first.
pub fn dct_basis_sized(size: usize) -> Vec<Kernel> {
    let n = size;
    let mut axis = vec![vec![0.0; n]; n];
    for (k, row) in axis.iter_mut().enumerate() {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for (i, v) in row.iter_mut().enumerate() {
            *v = scale
                * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n as f64))
                    .cos();
        }
    }
    let mut basis = Vec::with_capacity(n * n);
    for k in 0..n {
        for l in 0..n {
            let mut taps = vec![0.0; n * n];
            for r in 0..n {
                for c in 0..n {
                    taps[r * n + c] = axis[k][r] * axis[l][c];
                }
            }
            basis.push(Kernel::new(n, taps).expect("valid basis kernel"));
        }
    }
    basis
}
