//! Patch-based denoising harness: grayscale images, Gaussian noise, overlapping
//! patch extraction, the two reconstruction schemes, PSNR and PGM I/O.

mod patches;
mod pgm;
mod synthetic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use patches::{extract_patches, reconstruct_average, reconstruct_weighted, Coverage, PatchGrid};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm, PgmEncoding};
pub use synthetic::test_card;

/// Grayscale image on the 0–255 scale, stored row-major as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Image("image dimensions must be positive".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::Image(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Top-left `height x width` window starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::Image(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(height * width);
        for r in row..row + height {
            pixels.extend_from_slice(&self.pixels[r * self.width + col..r * self.width + col + width]);
        }
        Self::new(height, width, pixels)
    }

    /// Centered crop, clamped to the image size.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        let h = size.min(self.height);
        let w = size.min(self.width);
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }
}

/// Adds `sigma · g` to every pixel, `g` standard normal.
///
/// The generator is ChaCha8 (`rand_chacha`) seeded with `seed_from_u64(seed)`,
/// and normals come from `rand_distr::StandardNormal`, drawn in row-major
/// pixel order. Values are not clipped.
pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = img
        .pixels
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    GrayImage::new(img.height, img.width, pixels)
}

/// `10 log₁₀(255² / MSE)` in dB; identical images give `+∞`.
pub fn psnr(reference: &GrayImage, test: &GrayImage) -> Result<f64> {
    if reference.height != test.height || reference.width != test.width {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            reference.height, reference.width, test.height, test.width
        )));
    }
    let mse = reference
        .pixels
        .iter()
        .zip(&test.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}
