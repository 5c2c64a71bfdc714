//! Case study 1: a straight-line segment y = m*x + c.

use super::image::{Image, SIDE};

/// Renders the line for physical parameters (m, x0, c, x_steps).
///
/// Columns round(x0) .. round(x0)+round(x_steps)-1 each light the single
/// pixel (x, round(m*x + c)) at +1; everything else is background -1.
/// Rounding is half-away-from-zero and pixels falling outside the frame are
/// skipped. Arithmetic runs in f64 so the rounding decisions are stable.
pub fn simulate_line(p: &[f32]) -> Image {
    debug_assert_eq!(p.len(), 4);
    let (m, x0, c, x_steps) = (p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64);
    let mut img = Image::background();
    let first = x0.round() as i64;
    let count = x_steps.round() as i64;
    for x in first..first.saturating_add(count) {
        if !(0..SIDE as i64).contains(&x) {
            continue;
        }
        let y = (m * x as f64 + c).round() as i64;
        if (0..SIDE as i64).contains(&y) {
            img.set(x as usize, y as usize, 1.0);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizontal_line_lights_exactly_its_columns() {
        let img = simulate_line(&[0.0, 10.0, 14.0, 9.0]);
        assert_eq!(img.count_above(0.0), 9);
        for x in 10..=18 {
            assert_eq!(img.at(x, 14), 1.0);
        }
        assert_eq!(img.at(9, 14), Image::BACKGROUND);
        assert_eq!(img.at(19, 14), Image::BACKGROUND);
    }

    #[test]
    fn sloped_line_matches_hand_rasterization() {
        let img = simulate_line(&[1.5, 10.0, 0.5, 9.0]);
        let lit = [
            (10, 16),
            (11, 17),
            (12, 19),
            (13, 20),
            (14, 22),
            (15, 23),
            (16, 25),
            (17, 26),
        ];
        for &(x, y) in &lit {
            assert_eq!(img.at(x, y), 1.0, "expected lit pixel at ({x},{y})");
        }
        // Column 18 maps to row 28, which is off-frame.
        assert_eq!(img.count_above(0.0), lit.len());
    }

    #[test]
    fn zero_extent_gives_pure_background() {
        let img = simulate_line(&[1.0, 10.0, 0.5, 0.0]);
        assert_eq!(img.count_above(-1.0), 0);
        assert!(img.in_range());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // x0 = 9.5 rounds to 10, c = 13.5 rounds up to 14 at m = 0.
        let img = simulate_line(&[0.0, 9.5, 13.5, 1.0]);
        assert_eq!(img.at(10, 14), 1.0);
        assert_eq!(img.count_above(0.0), 1);
    }
}
