//! Fabrication of the "true" dataset: Gaussian parameter draws and the
//! frozen noise field used by the circle simulator.

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;

use super::image::{PIXELS, SIDE};
use super::space::ParamSpace;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Independent per-component Gaussians the true parameters are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthDistribution {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl TruthDistribution {
    pub fn new(mu: Vec<f32>, sigma: Vec<f32>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(Error::Param("truth mean/std length mismatch".into()));
        }
        if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Param("truth std-devs must be positive".into()));
        }
        Ok(TruthDistribution { mu, sigma })
    }

    /// Draws must stay inside the parameter space even after the 4-sigma
    /// clip, so the clipped support must fit the ranges.
    pub fn validate_within(&self, space: &ParamSpace) -> Result<()> {
        if self.mu.len() != space.len() {
            return Err(Error::Param(format!(
                "truth has {} components, space has {}",
                self.mu.len(),
                space.len()
            )));
        }
        for (i, d) in space.defs().iter().enumerate() {
            let (lo, hi) = (self.mu[i] - 4.0 * self.sigma[i], self.mu[i] + 4.0 * self.sigma[i]);
            if lo < d.lo || hi > d.hi {
                return Err(Error::Param(format!(
                    "truth for `{}` spans [{lo}, {hi}], outside its range [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
        }
        Ok(())
    }

    /// One draw per component, clipped to mu +- 4 sigma.
    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.mu.len());
        for i in 0..self.mu.len() {
            let z: f64 = rng.sample(StandardNormal);
            let v = self.mu[i] as f64 + self.sigma[i] as f64 * z;
            let lo = (self.mu[i] - 4.0 * self.sigma[i]) as f64;
            let hi = (self.mu[i] + 4.0 * self.sigma[i]) as f64;
            out[i] = v.clamp(lo, hi) as f32;
        }
    }
}

/// `count` draws flattened row-major, deterministic in `seed`.
pub fn sample_truth(dist: &TruthDistribution, seed: u64, count: usize) -> Vec<f32> {
    let mut rng = stream_rng(seed, Stream::Truth);
    let n = dist.mu.len();
    let mut out = vec![0.0; count * n];
    for row in out.chunks_mut(n) {
        dist.sample_into(&mut rng, row);
    }
    out
}

/// Frozen 28x28 field of uniforms in [0, 1), drawn once per run. The circle
/// simulator scales it by the noise parameter, which keeps the simulator a
/// deterministic function of its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    data: [f32; PIXELS],
    seed: u64,
}

impl NoiseField {
    pub fn generate(seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::NoiseField);
        let mut data = [0.0f32; PIXELS];
        for v in data.iter_mut() {
            *v = rng.random();
        }
        NoiseField { data, seed }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * SIDE + x]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> f32 {
        self.data.iter().sum::<f32>() / PIXELS as f32
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::space::ParamDef;

    #[test]
    fn same_seed_same_draws() {
        let d = TruthDistribution::new(vec![1.5, 10.0], vec![0.3, 0.5]).unwrap();
        let a = sample_truth(&d, 99, 32);
        let b = sample_truth(&d, 99, 32);
        assert_eq!(a, b);
        assert_ne!(a, sample_truth(&d, 100, 32));
    }

    #[test]
    fn draws_respect_the_four_sigma_clip() {
        let d = TruthDistribution::new(vec![0.0], vec![1.0]).unwrap();
        let xs = sample_truth(&d, 5, 20000);
        assert!(xs.iter().all(|&v| (-4.0..=4.0).contains(&v)));
        // At 20k draws the sample mean of a unit Gaussian sits near zero.
        let mean = xs.iter().sum::<f32>() / xs.len() as f32;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn truth_must_fit_the_space() {
        let space = ParamSpace::new(vec![ParamDef::new("n", 0.0, 0.5)]).unwrap();
        let tight = TruthDistribution::new(vec![0.25], vec![0.05]).unwrap();
        assert!(tight.validate_within(&space).is_ok());
        let wide = TruthDistribution::new(vec![0.15], vec![0.05]).unwrap();
        assert!(wide.validate_within(&space).is_err(), "0.15 - 4*0.05 < 0");
    }

    #[test]
    fn noise_field_is_frozen_and_seeded() {
        let a = NoiseField::generate(7);
        let b = NoiseField::generate(7);
        assert_eq!(a, b);
        assert_ne!(a, NoiseField::generate(8));
        assert!(a.data.iter().all(|&v| (0.0..1.0).contains(&v)));
        assert_eq!(a.seed(), 7);
    }
}
