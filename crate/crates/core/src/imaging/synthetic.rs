//! Deterministic grayscale test scene for runs without external images.

use super::GrayImage;

/// Piecewise-smooth scene with a shaded background, a disc, a bright bar,
/// oriented stripes, and a checker patch. Values lie in [0, 255].
pub fn test_card(height: usize, width: usize) -> GrayImage {
    let (h, w) = (height as f64, width as f64);
    let mut pixels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / h, c as f64 / w);
            let mut v = 60.0 + 90.0 * x + 40.0 * y;
            let (dy, dx) = (y - 0.35, x - 0.3);
            if dx * dx + dy * dy < 0.04 {
                v = 210.0 - 60.0 * y;
            }
            if (0.62..0.7).contains(&y) && x > 0.15 && x < 0.85 {
                v = 235.0;
            }
            if x > 0.55 && y < 0.5 {
                // Stripes at a slant, period about 6 pixels at 128 px.
                let phase = (x * w * 0.9 + y * h * 0.5) * std::f64::consts::TAU / 6.0;
                v = 128.0 + 70.0 * phase.sin();
            }
            if x < 0.35 && y > 0.75 {
                let cell = ((r / 4) + (c / 4)) % 2;
                v = if cell == 0 { 40.0 } else { 170.0 };
            }
            pixels.push(v.clamp(0.0, 255.0));
        }
    }
    GrayImage::new(height, width, pixels).expect("generated pixels are finite")
}
