//! Deterministic synthetic grayscale scenes.
//!
//! The bundled eight-image mini-set is generated from these routines:
//! piecewise-smooth scenes with soft-edged shapes, gentle illumination
//! gradients and low-frequency texture. They carry the edge-plus-smooth
//! statistics the filter-based priors and the TV baseline are sensitive to,
//! without depending on any external dataset.

use crate::image::Image;
use crate::rng::Rng;

/// One natural-looking scene: smooth background, soft-edged ellipses and
/// boxes, low-frequency texture. Intensities land in `[0.02, 0.98]`.
pub fn natural_image(height: usize, width: usize, rng: &mut Rng) -> Image {
    let mut img = Image::zeros(height, width);
    // Bilinear illumination gradient.
    let corners: Vec<f64> = (0..4).map(|_| 0.25 + 0.5 * rng.uniform()).collect();
    for r in 0..height {
        let fr = r as f64 / (height - 1).max(1) as f64;
        for c in 0..width {
            let fc = c as f64 / (width - 1).max(1) as f64;
            let top = corners[0] * (1.0 - fc) + corners[1] * fc;
            let bottom = corners[2] * (1.0 - fc) + corners[3] * fc;
            img.set(r, c, top * (1.0 - fr) + bottom * fr);
        }
    }
    // Soft-edged shapes.
    let n_shapes = 6 + rng.below(6);
    for _ in 0..n_shapes {
        let cx = rng.uniform() * width as f64;
        let cy = rng.uniform() * height as f64;
        let a = 3.0 + rng.uniform() * 0.35 * width as f64;
        let b = 3.0 + rng.uniform() * 0.35 * height as f64;
        let angle = rng.uniform() * std::f64::consts::PI;
        let delta = (rng.uniform() - 0.5) * 0.8;
        let rectangular = rng.uniform() < 0.35;
        let (sin, cos) = angle.sin_cos();
        for r in 0..height {
            for c in 0..width {
                let dx = c as f64 - cx;
                let dy = r as f64 - cy;
                let u = (dx * cos + dy * sin) / a;
                let v = (-dx * sin + dy * cos) / b;
                // Signed distance proxy: negative inside.
                let d = if rectangular {
                    u.abs().max(v.abs()) - 1.0
                } else {
                    (u * u + v * v).sqrt() - 1.0
                };
                // Soft edge about one pixel wide.
                let edge = 1.0 / (1.0 + (d * a.min(b)).exp());
                if edge > 1e-4 {
                    img.set(r, c, img.get(r, c) + delta * edge);
                }
            }
        }
    }
    // Low-frequency undulation.
    for _ in 0..3 {
        let fx = (0.5 + 3.0 * rng.uniform()) * std::f64::consts::TAU / width as f64;
        let fy = (0.5 + 3.0 * rng.uniform()) * std::f64::consts::TAU / height as f64;
        let phase = rng.uniform() * std::f64::consts::TAU;
        let amp = 0.01 + 0.015 * rng.uniform();
        for r in 0..height {
            for c in 0..width {
                let t = (fx * c as f64 + fy * r as f64 + phase).sin();
                img.set(r, c, img.get(r, c) + amp * t);
            }
        }
    }
    // Stochastic micro- and mid-scale texture (smoothed noise fields); this
    // is where natural scenes differ most from piecewise-constant phantoms.
    add_texture(&mut img, 1, 0.05 + 0.03 * rng.uniform(), rng);
    add_texture(&mut img, 3, 0.035 + 0.025 * rng.uniform(), rng);
    for v in img.data_mut() {
        *v = v.clamp(0.02, 0.98);
    }
    img
}

/// Adds a zero-mean noise field smoothed by `passes` circular 3x3 box
/// blurs and rescaled to the requested standard deviation.
fn add_texture(img: &mut Image, passes: usize, std: f64, rng: &mut Rng) {
    let (h, w) = (img.height(), img.width());
    let mut field: Vec<f64> = (0..h * w).map(|_| rng.normal()).collect();
    let mut tmp = vec![0.0; h * w];
    for _ in 0..passes {
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for dr in [h - 1, 0, 1] {
                    for dc in [w - 1, 0, 1] {
                        acc += field[((r + dr) % h) * w + (c + dc) % w];
                    }
                }
                tmp[r * w + c] = acc / 9.0;
            }
        }
        std::mem::swap(&mut field, &mut tmp);
    }
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64;
    let scale = std / var.sqrt().max(1e-12);
    for (dst, src) in img.data_mut().iter_mut().zip(&field) {
        *dst += scale * (src - mean);
    }
}

/// Piecewise-constant phantom (hard-edged shapes over a flat background),
/// the favorable regime for total-variation regularization.
pub fn phantom(height: usize, width: usize, rng: &mut Rng) -> Image {
    let mut img = Image::constant(height, width, 0.15);
    let n_shapes = 4 + rng.below(4);
    for _ in 0..n_shapes {
        let cx = (0.2 + 0.6 * rng.uniform()) * width as f64;
        let cy = (0.2 + 0.6 * rng.uniform()) * height as f64;
        let a = 2.0 + rng.uniform() * 0.3 * width as f64;
        let b = 2.0 + rng.uniform() * 0.3 * height as f64;
        let level = 0.2 + 0.7 * rng.uniform();
        for r in 0..height {
            for c in 0..width {
                let u = (c as f64 - cx) / a;
                let v = (r as f64 - cy) / b;
                if u * u + v * v <= 1.0 {
                    img.set(r, c, level);
                }
            }
        }
    }
    img
}

/// The deterministic eight-scene mini dataset at the given side length.
pub fn mini_dataset(n: usize, size: usize, seed: u64) -> Vec<Image> {
    let root = Rng::new(seed);
    (0..n)
        .map(|i| natural_image(size, size, &mut root.split(i as u64)))
        .collect()
}
