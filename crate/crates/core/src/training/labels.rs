//! Smoothed adversarial labels: positive targets land in one band, negative
//! targets in a lower band, and a small fraction of labels is flipped to a
//! draw from the opposite band.

use rand::{Rng, RngExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Positive,
    Negative,
}

impl LabelKind {
    pub fn opposite(self) -> Self {
        match self {
            LabelKind::Positive => LabelKind::Negative,
            LabelKind::Negative => LabelKind::Positive,
        }
    }
}

/// The two smoothing bands; invalid bands are rejected at config time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelBands {
    pub pos_lo: f32,
    pub pos_hi: f32,
    pub neg_lo: f32,
    pub neg_hi: f32,
}

impl LabelBands {
    pub fn smooth_label(&self, kind: LabelKind, rng: &mut impl Rng) -> f32 {
        let (lo, hi) = match kind {
            LabelKind::Positive => (self.pos_lo, self.pos_hi),
            LabelKind::Negative => (self.neg_lo, self.neg_hi),
        };
        lo + rng.random::<f32>() * (hi - lo)
    }

    /// Independently swaps each label to a fresh draw from the opposite
    /// band with probability `fraction`.
    pub fn flip_labels(
        &self,
        labels: &mut [f32],
        kind: LabelKind,
        fraction: f32,
        rng: &mut impl Rng,
    ) {
        debug_assert!((0.0..0.5).contains(&fraction));
        for l in labels.iter_mut() {
            if rng.random::<f32>() < fraction {
                *l = self.smooth_label(kind.opposite(), rng);
            }
        }
    }

    /// One training batch worth of labels: smoothed draws, then flips.
    pub fn batch(
        &self,
        kind: LabelKind,
        n: usize,
        fraction: f32,
        rng: &mut impl Rng,
    ) -> Vec<f32> {
        let mut out: Vec<f32> = (0..n).map(|_| self.smooth_label(kind, rng)).collect();
        if fraction > 0.0 {
            self.flip_labels(&mut out, kind, fraction, rng);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const BANDS: LabelBands =
        LabelBands { pos_lo: 0.7, pos_hi: 1.2, neg_lo: 0.0, neg_hi: 0.3 };

    #[test]
    fn smoothed_draws_stay_inside_their_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let p = BANDS.smooth_label(LabelKind::Positive, &mut rng);
            assert!((0.7..=1.2).contains(&p), "positive {p}");
            let n = BANDS.smooth_label(LabelKind::Negative, &mut rng);
            assert!((0.0..=0.3).contains(&n), "negative {n}");
        }
    }

    #[test]
    fn zero_fraction_flips_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut labels = BANDS.batch(LabelKind::Positive, 1000, 0.0, &mut rng);
        let before = labels.clone();
        BANDS.flip_labels(&mut labels, LabelKind::Positive, 0.0, &mut rng);
        assert_eq!(labels, before);
    }

    #[test]
    fn flip_count_matches_the_binomial_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let fraction = 0.05f64;
        let mut labels = vec![1.0f32; n];
        BANDS.flip_labels(&mut labels, LabelKind::Positive, fraction as f32, &mut rng);
        // A flipped positive lands in the negative band, well below 0.7.
        let flipped = labels.iter().filter(|&&l| l <= 0.3).count() as f64;
        let mean = n as f64 * fraction;
        let sigma = (n as f64 * fraction * (1.0 - fraction)).sqrt();
        assert!(
            (flipped - mean).abs() < 3.0 * sigma,
            "flipped {flipped}, expected {mean} +- {:.1}",
            3.0 * sigma
        );
    }

    #[test]
    fn same_seed_same_labels() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            BANDS.batch(LabelKind::Negative, 64, 0.05, &mut rng)
        };
        assert_eq!(mk(), mk());
    }
}
