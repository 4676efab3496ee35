//! Overlapping patch extraction and the two reconstruction schemes.
//!
//! A patch at top-left `(r, c)` is vectorized column-major: entry
//! `dc * s + dr` holds pixel `(r + dr, c + dc)`.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::GrayImage;
use crate::error::{Error, Result};
use crate::model::SignalBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// Top-left corners in row-major order.
    pub positions: Vec<(usize, usize)>,
    pub patches: SignalBatch,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Grid restricted to the given patch indices (same image geometry).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            patch_size: self.patch_size,
            stride: self.stride,
            height: self.height,
            width: self.width,
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            patches: self.patches.select(indices),
        }
    }
}

/// Pixels no patch covers, reported by the reconstructions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Coverage {
    pub uncovered: Vec<(usize, usize)>,
}

fn axis_starts(len: usize, size: usize, stride: usize) -> Vec<usize> {
    (0..=(len - size)).step_by(stride).collect()
}

/// Extracts every `s x s` patch whose top-left corner lies on the stride grid.
pub fn extract_patches(img: &GrayImage, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    if img.height() < patch_size || img.width() < patch_size {
        return Err(Error::Image(format!(
            "{}x{} image is smaller than a {patch_size}x{patch_size} patch",
            img.height(),
            img.width()
        )));
    }
    let rows = axis_starts(img.height(), patch_size, stride);
    let cols = axis_starts(img.width(), patch_size, stride);
    let mut positions = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            positions.push((r, c));
        }
    }
    let n = patch_size * patch_size;
    let mut data = DMatrix::zeros(n, positions.len());
    for (k, &(r, c)) in positions.iter().enumerate() {
        let mut col = data.column_mut(k);
        for dc in 0..patch_size {
            for dr in 0..patch_size {
                col[dc * patch_size + dr] = img.get(r + dr, c + dc);
            }
        }
    }
    Ok(PatchGrid {
        patch_size,
        stride,
        height: img.height(),
        width: img.width(),
        positions,
        patches: SignalBatch::new(data)?,
    })
}

/// Sums of patch contributions and cover counts per pixel.
fn accumulate(grid: &PatchGrid, coded: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<u32>)> {
    let s = grid.patch_size;
    if coded.ncols() != grid.len() || coded.nrows() != s * s {
        return Err(Error::DimensionMismatch(format!(
            "coded patches are {}x{}, grid expects {}x{}",
            coded.nrows(),
            coded.ncols(),
            s * s,
            grid.len()
        )));
    }
    let w = grid.width;
    let mut sum = vec![0.0; grid.height * w];
    let mut count = vec![0u32; grid.height * w];
    for (k, &(r, c)) in grid.positions.iter().enumerate() {
        let col = coded.column(k);
        for dc in 0..s {
            for dr in 0..s {
                let idx = (r + dr) * w + c + dc;
                sum[idx] += col[dc * s + dr];
                count[idx] += 1;
            }
        }
    }
    Ok((sum, count))
}

/// Averages overlapping patch estimates. Uncovered pixels copy the nearest
/// covered pixel (city-block distance, scan order on ties).
pub fn reconstruct_average(grid: &PatchGrid, coded: &DMatrix<f64>) -> Result<(GrayImage, Coverage)> {
    let (sum, count) = accumulate(grid, coded)?;
    let (h, w) = (grid.height, grid.width);
    let mut pixels: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let uncovered: Vec<usize> = (0..h * w).filter(|&i| count[i] == 0).collect();
    if uncovered.len() == h * w {
        return Err(Error::Image("no pixel is covered by any patch".into()));
    }
    if !uncovered.is_empty() {
        // Multi-source BFS from covered pixels.
        let mut source: Vec<Option<usize>> = (0..h * w).map(|i| (count[i] > 0).then_some(i)).collect();
        let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| count[i] > 0).collect();
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if source[j].is_none() {
                    source[j] = source[i];
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        for &i in &uncovered {
            pixels[i] = pixels[source[i].expect("BFS reaches every pixel")];
        }
    }
    let coverage = Coverage {
        uncovered: uncovered.iter().map(|&i| (i / w, i % w)).collect(),
    };
    Ok((GrayImage::new(h, w, pixels)?, coverage))
}

/// Pixelwise minimizer of `λ‖x − y‖² + Σᵢ ‖Rᵢx − D xᵢ‖²`:
/// `(λ·noisy + Σ contributions) / (λ + cover count)`.
pub fn reconstruct_weighted(
    noisy: &GrayImage,
    grid: &PatchGrid,
    coded: &DMatrix<f64>,
    lambda: f64,
) -> Result<(GrayImage, Coverage)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if noisy.height() != grid.height || noisy.width() != grid.width {
        return Err(Error::DimensionMismatch("noisy image and patch grid differ in size".into()));
    }
    if lambda == 0.0 {
        return reconstruct_average(grid, coded);
    }
    let (sum, count) = accumulate(grid, coded)?;
    let pixels = sum
        .iter()
        .zip(&count)
        .zip(noisy.pixels())
        .map(|((s, &c), y)| (lambda * y + s) / (lambda + c as f64))
        .collect();
    let w = grid.width;
    let coverage = Coverage {
        uncovered: (0..count.len()).filter(|&i| count[i] == 0).map(|i| (i / w, i % w)).collect(),
    };
    Ok((GrayImage::new(grid.height, grid.width, pixels)?, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{add_gaussian_noise, test_card};
    use proptest::prelude::*;

    #[test]
    fn patch_counts() {
        let img = GrayImage::filled(8, 8, 1.0).unwrap();
        assert_eq!(extract_patches(&img, 8, 1).unwrap().len(), 1);
        let img = GrayImage::filled(16, 16, 1.0).unwrap();
        assert_eq!(extract_patches(&img, 8, 1).unwrap().len(), 81);
        let img = GrayImage::filled(512, 512, 0.0).unwrap();
        assert_eq!(extract_patches(&img, 8, 1).unwrap().len(), 255_025);
        assert!(extract_patches(&GrayImage::filled(7, 9, 0.0).unwrap(), 8, 1).is_err());
    }

    #[test]
    fn column_major_vectorization() {
        let img = GrayImage::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = extract_patches(&img, 2, 1).unwrap();
        assert_eq!(g.positions, vec![(0, 0), (0, 1)]);
        assert_eq!(g.patches.signals().column(0).as_slice(), &[1.0, 4.0, 2.0, 5.0]);
        assert_eq!(g.patches.signals().column(1).as_slice(), &[2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn average_roundtrip_is_exact() {
        let img = test_card(24, 20);
        for stride in [1, 2, 3] {
            let g = extract_patches(&img, 8, stride).unwrap();
            let (rec, cov) = reconstruct_average(&g, g.patches.signals()).unwrap();
            if cov.uncovered.is_empty() {
                for (a, b) in rec.pixels().iter().zip(img.pixels()) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
        let g = extract_patches(&img, 8, 1).unwrap();
        let (rec, cov) = reconstruct_average(&g, g.patches.signals()).unwrap();
        assert!(cov.uncovered.is_empty());
        assert!(rec.pixels().iter().zip(img.pixels()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn single_patch_and_constant_images() {
        let img = test_card(8, 8);
        let g = extract_patches(&img, 8, 1).unwrap();
        let coded = g.patches.signals() * 0.5;
        let (rec, _) = reconstruct_average(&g, &coded).unwrap();
        assert!(rec.pixels().iter().zip(img.pixels()).all(|(a, b)| (a - 0.5 * b).abs() < 1e-12));

        let c = GrayImage::filled(13, 11, 42.0).unwrap();
        let g = extract_patches(&c, 4, 2).unwrap();
        let (rec, _) = reconstruct_average(&g, g.patches.signals()).unwrap();
        assert!(rec.pixels().iter().all(|v| (v - 42.0).abs() < 1e-12));
    }

    #[test]
    fn uncovered_pixels_are_filled_and_reported() {
        // 10 wide, patch 4, stride 3 → columns 0..=6 start at 0,3,6 → covers 0..10.
        // 11 wide → last column 10 uncovered.
        let img = test_card(11, 11);
        let g = extract_patches(&img, 4, 3).unwrap();
        let (rec, cov) = reconstruct_average(&g, g.patches.signals()).unwrap();
        assert_eq!(cov.uncovered.len(), 11 + 11 - 1);
        assert_eq!(rec.get(10, 10), img.get(9, 9));
        assert_eq!(rec.get(3, 10), img.get(3, 9));
    }

    #[test]
    fn weighted_limits() {
        let clean = test_card(16, 16);
        let noisy = add_gaussian_noise(&clean, 20.0, 3).unwrap();
        let g = extract_patches(&noisy, 8, 1).unwrap();
        let coded = extract_patches(&clean, 8, 1).unwrap().patches.signals().clone();

        let (avg, _) = reconstruct_average(&g, &coded).unwrap();
        let (w0, _) = reconstruct_weighted(&noisy, &g, &coded, 0.0).unwrap();
        assert_eq!(avg, w0);

        let (big, _) = reconstruct_weighted(&noisy, &g, &coded, 1e9).unwrap();
        assert!(big.pixels().iter().zip(noisy.pixels()).all(|(a, b)| (a - b).abs() <= 1e-3));

        for lambda in [0.1, 1.0, 30.0] {
            let (fixed, _) = reconstruct_weighted(&noisy, &g, g.patches.signals(), lambda).unwrap();
            assert!(fixed.pixels().iter().zip(noisy.pixels()).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
        assert!(reconstruct_weighted(&noisy, &g, &coded, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn patch_count_matches_enumeration(h in 1usize..=32, w in 1usize..=32, s in 1usize..=8, stride in 1usize..=5) {
            prop_assume!(h >= s && w >= s);
            let img = GrayImage::filled(h, w, 0.0).unwrap();
            let g = extract_patches(&img, s, stride).unwrap();
            let mut brute = 0;
            for r in 0..h {
                for c in 0..w {
                    if r % stride == 0 && c % stride == 0 && r + s <= h && c + s <= w {
                        brute += 1;
                    }
                }
            }
            prop_assert_eq!(g.len(), brute);
            prop_assert_eq!(g.len(), ((h - s) / stride + 1) * ((w - s) / stride + 1));
        }

        #[test]
        fn weighted_zero_lambda_equals_average(seed in 0u64..1000, stride in 1usize..4) {
            let clean = test_card(14, 15);
            let noisy = add_gaussian_noise(&clean, 10.0, seed).unwrap();
            let g = extract_patches(&noisy, 5, stride).unwrap();
            let coded = g.patches.signals() * 0.9;
            let (a, _) = reconstruct_average(&g, &coded).unwrap();
            let (b, _) = reconstruct_weighted(&noisy, &g, &coded, 0.0).unwrap();
            for (x, y) in a.pixels().iter().zip(b.pixels()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
