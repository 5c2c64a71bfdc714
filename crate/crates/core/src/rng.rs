//! Seed plumbing. Every random consumer gets its own counter-mode stream
//! derived from the master seed, so reordering work in one consumer (say,
//! drawing labels) never shifts what another consumer (truth data) sees.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream ids, one per random consumer. The numeric values are part of the
/// checkpoint contract; never renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Network weight initialization.
    Init = 0,
    /// Truth parameter draws.
    Truth = 1,
    /// Generator noise z.
    Noise = 2,
    /// Uniform random normalized parameters r for pretraining.
    RandomParams = 3,
    /// Label smoothing and flipping.
    Labels = 4,
    /// The frozen per-run noise field.
    NoiseField = 5,
    /// Periodic metric sampling during training.
    Metrics = 6,
    /// Evaluation reports (own explicit seed).
    Eval = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

/// Streams whose positions travel with a checkpoint.
pub const STREAM_COUNT: usize = 5;

/// The mutable random state a training run carries between iterations and
/// into checkpoints.
#[derive(Debug, Clone)]
pub struct RngSet {
    pub truth: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub rparams: ChaCha8Rng,
    pub labels: ChaCha8Rng,
    pub metrics: ChaCha8Rng,
}

impl RngSet {
    pub fn new(master_seed: u64) -> Self {
        RngSet {
            truth: stream_rng(master_seed, Stream::Truth),
            noise: stream_rng(master_seed, Stream::Noise),
            rparams: stream_rng(master_seed, Stream::RandomParams),
            labels: stream_rng(master_seed, Stream::Labels),
            metrics: stream_rng(master_seed, Stream::Metrics),
        }
    }

    /// Word positions in stream order, for checkpointing.
    pub fn positions(&self) -> [u128; STREAM_COUNT] {
        [
            self.truth.get_word_pos(),
            self.noise.get_word_pos(),
            self.rparams.get_word_pos(),
            self.labels.get_word_pos(),
            self.metrics.get_word_pos(),
        ]
    }

    pub fn restore_positions(&mut self, pos: &[u128; STREAM_COUNT]) {
        self.truth.set_word_pos(pos[0]);
        self.noise.set_word_pos(pos[1]);
        self.rparams.set_word_pos(pos[2]);
        self.labels.set_word_pos(pos[3]);
        self.metrics.set_word_pos(pos[4]);
    }
}

/// Standard-normal fill, used for generator noise z.
pub fn fill_standard_normal(rng: &mut impl Rng, out: &mut [f32]) {
    for v in out.iter_mut() {
        *v = rng.sample::<f32, _>(StandardNormal);
    }
}

/// Uniform fill over [-1, 1), used for pretraining's random parameters.
pub fn fill_uniform_pm1(rng: &mut impl Rng, out: &mut [f32]) {
    for v in out.iter_mut() {
        *v = rng.random::<f32>() * 2.0 - 1.0;
    }
}
