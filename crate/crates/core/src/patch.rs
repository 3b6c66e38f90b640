//! Sampling of square training patches from a set of images.

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Enumerates the top-left corners of all stride-aligned `size x size`
/// windows of a `height x width` image.
fn window_corners(height: usize, width: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut corners = Vec::new();
    let mut r = 0;
    while r + size <= height {
        let mut c = 0;
        while c + size <= width {
            corners.push((r, c));
            c += stride;
        }
        r += stride;
    }
    corners
}

/// Number of distinct stride-aligned windows available over all images.
pub fn window_count(images: &[Image], size: usize, stride: usize) -> usize {
    images
        .iter()
        .map(|img| window_corners(img.height(), img.width(), size, stride).len())
        .sum()
}

/// Draws `count` patches uniformly with replacement from the set of all
/// stride-aligned `size x size` windows over all images.
pub fn extract_patches(
    images: &[Image],
    size: usize,
    stride: usize,
    rng: &mut Rng,
    count: usize,
) -> Result<Vec<Image>> {
    if images.is_empty() {
        return Err(invalid("patch extraction needs at least one image"));
    }
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    if size == 0 {
        return Err(invalid("patch size must be positive"));
    }
    for img in images {
        if size > img.height() || size > img.width() {
            return Err(invalid(format!(
                "patch size {} exceeds image dimensions {}x{}",
                size,
                img.height(),
                img.width()
            )));
        }
    }
    // Flat index of every (image, corner) pair; uniform over all windows.
    let mut windows = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for corner in window_corners(img.height(), img.width(), size, stride) {
            windows.push((i, corner));
        }
    }
    let mut patches = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, (r, c)) = windows[rng.below(windows.len())];
        patches.push(images[i].crop(r, c, size)?);
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_when_size_equals_image() {
        let img = Image::zeros(96, 96);
        assert_eq!(window_count(&[img], 96, 1), 1);
    }

    #[test]
    fn window_count_formula() {
        // (H - s)/stride + 1 windows per axis.
        let img = Image::zeros(97, 96);
        assert_eq!(window_count(&[img], 96, 1), 2);
        let img = Image::zeros(10, 10);
        assert_eq!(window_count(&[img], 4, 3), 9);
    }

    #[test]
    fn patches_copy_source_blocks_exactly() {
        let mut rng = Rng::new(99);
        let img = Image::random_uniform(12, 12, &mut rng);
        let patches = extract_patches(&[img.clone()], 5, 2, &mut rng, 20).unwrap();
        for p in &patches {
            // Locate the patch by matching its first row against the image.
            let mut found = false;
            for r in 0..=7 {
                for c in 0..=7 {
                    if img.crop(r, c, 5).unwrap() == *p {
                        found = true;
                    }
                }
            }
            assert!(found, "patch is not a sub-block of the source");
        }
    }

    #[test]
    fn errors_on_empty_or_oversized() {
        let mut rng = Rng::new(1);
        assert!(extract_patches(&[], 5, 1, &mut rng, 1).is_err());
        let img = Image::zeros(4, 4);
        assert!(extract_patches(&[img], 5, 1, &mut rng, 1).is_err());
    }
}
