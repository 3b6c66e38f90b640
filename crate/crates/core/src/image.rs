//! Dense grayscale images and small convolution kernels.

use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Dense 2-D grid of real intensities, stored row-major. Nominal intensity
/// range is `[0, 1]` but values are not clamped; all arithmetic is in f64
/// regardless of any file bit depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(invalid(format!(
                "data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(invalid("image entries must be finite"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Image that is `1` at `(row, col)` and `0` elsewhere.
    pub fn delta(height: usize, width: usize, row: usize, col: usize) -> Self {
        let mut img = Self::zeros(height, width);
        img.data[row * width + col] = 1.0;
        img
    }

    pub fn random_uniform(height: usize, width: usize, rng: &mut Rng) -> Self {
        let data = (0..height * width).map(|_| rng.uniform()).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self + alpha * other`, shapes must match.
    pub fn axpy(&mut self, alpha: f64, other: &Image) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn add_scalar(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a += c;
        }
    }

    pub fn sub(&self, other: &Image) -> Image {
        debug_assert!(self.same_shape(other));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Copies the `size x size` window with top-left corner `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size: usize) -> Result<Image> {
        if row + size > self.height || col + size > self.width {
            return Err(invalid("crop window exceeds image bounds"));
        }
        let mut data = Vec::with_capacity(size * size);
        for r in row..row + size {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + size]);
        }
        Ok(Image {
            height: size,
            width: size,
            data,
        })
    }
}

/// Square convolution kernel with odd side length; taps are stored row-major
/// and indexed relative to the central tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(invalid("kernel size must be odd and positive"));
        }
        if taps.len() != size * size {
            return Err(invalid(format!(
                "tap count {} does not match size {}",
                taps.len(),
                size
            )));
        }
        if !taps.iter().all(|v| v.is_finite()) {
            return Err(invalid("kernel taps must be finite"));
        }
        Ok(Self { size, taps })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Index of the central tap along one axis.
    pub fn center(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    pub fn tap_sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Kernel with taps mirrored through the center.
    pub fn point_reflected(&self) -> Kernel {
        let mut taps = self.taps.clone();
        taps.reverse();
        Kernel {
            size: self.size,
            taps,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.taps.iter().map(|t| t.abs()).sum()
    }
}
