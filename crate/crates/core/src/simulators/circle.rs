//! Case study 2: a one-pixel-wide ring over frozen background noise.

use super::image::{Image, SIDE};
use super::truth::NoiseField;

/// Renders the circle for physical parameters (x0, y0, r, n, b).
///
/// A pixel whose center lies within half a pixel of the radius gets raw
/// brightness b; every other pixel gets n times the frozen noise field. Raw
/// values are clamped to [0, 1] and then mapped to [-1, 1] via 2v - 1, so
/// out-of-range n or b degrade gracefully instead of failing.
pub fn simulate_circle(p: &[f32], field: &NoiseField) -> Image {
    debug_assert_eq!(p.len(), 5);
    let (x0, y0, r, n, b) =
        (p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64, p[4] as f64);
    let mut img = Image::background();
    for y in 0..SIDE {
        for x in 0..SIDE {
            let dx = x as f64 - x0;
            let dy = y as f64 - y0;
            let dist = (dx * dx + dy * dy).sqrt();
            let raw = if (dist - r).abs() < 0.5 { b } else { n * field.at(x, y) as f64 };
            img.set(x, y, (2.0 * raw.clamp(0.0, 1.0) - 1.0) as f32);
        }
    }
    img
}
