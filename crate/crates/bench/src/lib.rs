//! Wall-clock comparison between the parametric simulators and the neural
//! emulator.
//!
//! The simulators here are cheap stand-ins for expensive scientific codes,
//! so the harness supports an explicit cost multiplier: each image is
//! rendered `multiplier` times inside the timed region. The multiplier is
//! calibrated against a target per-image cost on the current machine and is
//! always part of the reported output, never applied silently.
//!
//! Timed regions cover only simulation or network forward passes. Parameter
//! sampling, normalization, session setup, and IO happen outside the timer.
//! Everything runs single-threaded; the thread count is reported so results
//! from a parallel variant could never be confused with these.

use std::hint::black_box;
use std::time::Instant;

use magan_core::error::Result;
use magan_core::nets::{InferSession, Network, IMG_PIXELS};
use magan_core::simulators::SimCase;

/// Mean wall-clock time of one timed source over `reps` repetitions.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub source: String,
    pub images: usize,
    pub reps: usize,
    pub threads: usize,
    pub mean_s: f64,
}

impl BenchResult {
    pub fn per_image_us(&self) -> f64 {
        self.mean_s / self.images as f64 * 1e6
    }

    pub fn csv_header() -> &'static str {
        "source,images,reps,threads,mean_s,per_image_us"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.source,
            self.images,
            self.reps,
            self.threads,
            self.mean_s,
            self.per_image_us()
        )
    }
}

/// Times `multiplier` renders of every physical parameter row.
pub fn measure_simulator(
    sim: &SimCase,
    rows: &[f32],
    multiplier: u32,
    reps: usize,
) -> BenchResult {
    let n = sim.n_params();
    assert!(reps > 0 && multiplier > 0 && !rows.is_empty() && rows.len() % n == 0);
    let images = rows.len() / n;
    let mut total = 0.0f64;
    let mut sink = 0.0f32;
    for _ in 0..reps {
        let start = Instant::now();
        for row in rows.chunks(n) {
            for _ in 0..multiplier {
                let img = sim.simulate(black_box(row));
                sink += img.data()[0];
            }
        }
        total += start.elapsed().as_secs_f64();
    }
    black_box(sink);
    // `images` counts distinct outputs; the multiplier inflates the cost of
    // each one, standing in for a simulator that expensive.
    BenchResult {
        source: format!("simulator_case{}_x{multiplier}", sim.case),
        images,
        reps,
        threads: 1,
        mean_s: total / reps as f64,
    }
}

/// Times emulator forward passes over normalized parameter rows. The row
/// count must be a batch multiple; see [`round_to_batch`].
pub fn measure_emulator(
    enet: &Network,
    rows: &[f32],
    n_params: usize,
    batch: usize,
    reps: usize,
) -> Result<BenchResult> {
    assert!(reps > 0 && !rows.is_empty() && rows.len() % n_params == 0);
    let images = rows.len() / n_params;
    assert!(images % batch == 0, "row count must be a whole number of batches");
    let mut session = InferSession::emulator(enet, batch)?;
    let mut total = 0.0f64;
    let mut sink = 0.0f32;
    for _ in 0..reps {
        let start = Instant::now();
        for chunk in rows.chunks(batch * n_params) {
            let out = session.forward(enet, black_box(chunk))?;
            sink += out[0];
        }
        total += start.elapsed().as_secs_f64();
    }
    black_box(sink);
    Ok(BenchResult {
        source: format!("emulator_batch{batch}"),
        images,
        reps,
        threads: rayon::current_num_threads(),
        mean_s: total / reps as f64,
    })
}

pub fn round_to_batch(count: usize, batch: usize) -> usize {
    count.div_ceil(batch) * batch
}

/// Measures the simulator's raw per-image cost and returns the smallest
/// multiplier that lifts it to at least `target_us` microseconds per image.
pub fn calibrate_multiplier(sim: &SimCase, seed: u64, target_us: f64) -> (u32, f64) {
    let probe = 2000;
    let rows = sim.truth_params(seed, probe);
    let base = measure_simulator(sim, &rows, 1, 3);
    let base_us = base.per_image_us();
    let mult = (target_us / base_us).ceil().max(1.0) as u32;
    (mult, base_us)
}

/// Side-by-side timing of the simulator (with cost multiplier) and the
/// emulator on the same truth parameter draws.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub sim: BenchResult,
    pub emu: BenchResult,
    pub multiplier: u32,
    pub base_sim_us: f64,
    pub target_us: f64,
}

impl Comparison {
    /// How many times faster the emulator produces one image than the
    /// multiplied simulator.
    pub fn speedup(&self) -> f64 {
        self.sim.per_image_us() / self.emu.per_image_us()
    }

    pub fn csv(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            BenchResult::csv_header(),
            self.sim.csv_row(),
            self.emu.csv_row()
        )
    }

    pub fn summary(&self) -> String {
        format!(
            "cost multiplier: x{} (raw simulator {:.2} us/image, target {:.0} us/image)\n\
             {:<24} {:>12} {:>8} {:>12}\n\
             {:<24} {:>12} {:>8} {:>12.2}\n\
             {:<24} {:>12} {:>8} {:>12.2}\n\
             emulator speedup: {:.2}x",
            self.multiplier,
            self.base_sim_us,
            self.target_us,
            "source",
            "images",
            "reps",
            "us/image",
            self.sim.source,
            self.sim.images,
            self.sim.reps,
            self.sim.per_image_us(),
            self.emu.source,
            self.emu.images,
            self.emu.reps,
            self.emu.per_image_us(),
            self.speedup()
        )
    }
}

/// Full harness: calibrate the multiplier, then time both sources.
///
/// `sim_count` controls how many distinct parameter rows feed the simulator
/// timing (each rendered `multiplier` times); `emu_count` is rounded up to a
/// whole number of batches.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    sim: &SimCase,
    enet: &Network,
    seed: u64,
    sim_count: usize,
    emu_count: usize,
    batch: usize,
    reps: usize,
    target_us: f64,
) -> Result<Comparison> {
    let n = sim.n_params();
    let (multiplier, base_sim_us) = calibrate_multiplier(sim, seed, target_us);

    let sim_rows = sim.truth_params(seed, sim_count);
    let sim_res = measure_simulator(sim, &sim_rows, multiplier, reps);

    let emu_images = round_to_batch(emu_count, batch);
    let phys = sim.truth_params(seed.wrapping_add(1), emu_images);
    let mut norm = vec![0.0f32; phys.len()];
    for (p, q) in phys.chunks(n).zip(norm.chunks_mut(n)) {
        sim.space.normalize_slice(p, q)?;
    }
    let emu_res = measure_emulator(enet, &norm, n, batch, reps)?;

    Ok(Comparison {
        sim: sim_res,
        emu: emu_res,
        multiplier,
        base_sim_us,
        target_us,
    })
}

/// Emulator timing on uniform normalized draws, used to show the cost does
/// not depend on which case the network was built for.
pub fn emulator_us_per_image(
    enet: &Network,
    n_params: usize,
    count: usize,
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    use magan_core::rng::{fill_uniform_pm1, stream_rng, Stream};
    let images = round_to_batch(count, batch);
    let mut rows = vec![0.0f32; images * n_params];
    fill_uniform_pm1(&mut stream_rng(seed, Stream::Eval), &mut rows);
    Ok(measure_emulator(enet, &rows, n_params, batch, reps)?.per_image_us())
}

// Sanity guard: IMG_PIXELS is what a forward pass yields per image; keep the
// constant wired in so a shape change shows up here too.
const _: [(); 784] = [(); IMG_PIXELS];

#[cfg(test)]
mod tests {
    use super::*;
    use magan_core::nets::{init_emulator, NetConfig};
    use magan_core::rng::{stream_rng, Stream};
    use magan_core::simulators::CaseId;

    #[test]
    fn multiplier_inflates_cost_not_image_count() {
        let sim = SimCase::with_defaults(CaseId::Line, 1);
        let rows = sim.truth_params(3, 200);
        let base = measure_simulator(&sim, &rows, 1, 3);
        let multiplied = measure_simulator(&sim, &rows, 8, 3);
        assert_eq!(base.images, 200);
        assert_eq!(multiplied.images, 200, "image count stays at distinct outputs");
        assert_eq!(multiplied.reps, 3);
        assert_eq!(multiplied.threads, 1);
        // Eight renders per image should cost clearly more than one; allow
        // generous slack for timer noise.
        assert!(
            multiplied.mean_s > base.mean_s * 3.0,
            "x8 mean {} vs x1 mean {}",
            multiplied.mean_s,
            base.mean_s
        );
    }

    #[test]
    fn calibration_reaches_the_target_cost() {
        let sim = SimCase::with_defaults(CaseId::Circle, 1);
        let (mult, base_us) = calibrate_multiplier(&sim, 7, 50.0);
        assert!(mult >= 1);
        assert!(base_us > 0.0);
        // The multiplied cost must clear the target.
        assert!(f64::from(mult) * base_us >= 50.0);
    }

    #[test]
    fn emulator_measurement_counts_whole_batches() {
        let cfg = NetConfig { noise_dim: 8, ..NetConfig::default() };
        let enet = init_emulator(&cfg, 4, &mut stream_rng(0, Stream::Init));
        let rows = vec![0.1f32; 32 * 4];
        let res = measure_emulator(&enet, &rows, 4, 16, 2).unwrap();
        assert_eq!(res.images, 32);
        assert!(res.mean_s > 0.0);
        assert_eq!(round_to_batch(100_000, 256), 100_096);
    }

    #[test]
    fn comparison_reports_multiplier_and_speedup() {
        let sim = SimCase::with_defaults(CaseId::Line, 1);
        let cfg = NetConfig { noise_dim: 8, ..NetConfig::default() };
        let enet = init_emulator(&cfg, 4, &mut stream_rng(0, Stream::Init));
        let cmp = compare(&sim, &enet, 5, 64, 64, 32, 2, 20.0).unwrap();
        assert!(cmp.summary().contains(&format!("x{}", cmp.multiplier)));
        assert!(cmp.csv().starts_with(BenchResult::csv_header()));
        assert_eq!(cmp.csv().lines().count(), 3);
        assert!(cmp.speedup() > 0.0);
        assert!(cmp.sim.per_image_us() >= 20.0 * 0.5, "multiplied cost should approach target");
    }
}
