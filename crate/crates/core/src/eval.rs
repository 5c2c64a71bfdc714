//! Reporting utilities: generator best-match statistics against the truth
//! distribution, emulator fidelity against the simulator, and PGM image
//! grids for visual inspection.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{InferSession, Network, IMG_SIDE};
use crate::rng::{fill_standard_normal, fill_uniform_pm1, stream_rng, Stream};
use crate::simulators::space::ParamSpace;
use crate::simulators::{Image, SimCase};

/// Per-parameter comparison between the truth distribution and the
/// distribution of generator outputs. `bm_sigma` is the population spread
/// over exactly `samples` draws; the half-split means expose sampling
/// stability.
#[derive(Debug, Clone)]
pub struct BestMatchReport {
    pub names: Vec<String>,
    pub true_mu: Vec<f32>,
    pub true_sigma: Vec<f32>,
    pub bm_mu: Vec<f32>,
    pub bm_sigma: Vec<f32>,
    pub first_half_mu: Vec<f32>,
    pub second_half_mu: Vec<f32>,
    pub samples: usize,
}

impl BestMatchReport {
    /// True when the two half-sample means agree to within three standard
    /// errors for every parameter, i.e. the sample was large enough for the
    /// reported means to be trusted.
    pub fn half_split_ok(&self) -> bool {
        let half = (self.samples / 2) as f32;
        self.first_half_mu
            .iter()
            .zip(&self.second_half_mu)
            .zip(&self.bm_sigma)
            .all(|((&a, &b), &s)| (a - b).abs() <= 3.0 * s / half.sqrt())
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("param,true_mu,true_sigma,bm_mu,bm_sigma\n");
        for i in 0..self.names.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.names[i], self.true_mu[i], self.true_sigma[i], self.bm_mu[i], self.bm_sigma[i]
            ));
        }
        out
    }

    /// Fixed-width table for terminal output.
    pub fn table(&self) -> String {
        let name_w = self
            .names
            .iter()
            .map(String::len)
            .chain(std::iter::once("param".len()))
            .max()
            .unwrap_or(5);
        let mut out = format!(
            "{:name_w$}  {:>10}  {:>10}  {:>10}  {:>10}\n",
            "param", "true_mu", "true_sigma", "bm_mu", "bm_sigma"
        );
        for i in 0..self.names.len() {
            out.push_str(&format!(
                "{:name_w$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}\n",
                self.names[i], self.true_mu[i], self.true_sigma[i], self.bm_mu[i], self.bm_sigma[i]
            ));
        }
        out
    }
}

/// Draws `k` generator outputs and returns them as physical parameter rows,
/// `k * space.len()` long. Reproducible for a given seed.
pub fn generator_draws(
    gnet: &Network,
    space: &ParamSpace,
    noise_dim: usize,
    seed: u64,
    k: usize,
    batch: usize,
) -> Result<Vec<f32>> {
    let n = space.len();
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut session = InferSession::generator(gnet, batch)?;
    let mut z = vec![0.0f32; batch * noise_dim];
    let mut phys = vec![0.0f32; n];
    let mut out = Vec::with_capacity(k * n);
    let mut remaining = k;
    while remaining > 0 {
        fill_standard_normal(&mut rng, &mut z);
        let norm = session.forward(gnet, &z)?;
        for row in norm.chunks(n).take(remaining.min(batch)) {
            space.denormalize_slice(row, &mut phys)?;
            out.extend_from_slice(&phys);
        }
        remaining = remaining.saturating_sub(batch);
    }
    Ok(out)
}

/// Reduces physical parameter rows to a best-match report against the case's
/// truth distribution.
pub fn best_match_from_draws(sim: &SimCase, draws: &[f32]) -> Result<BestMatchReport> {
    let n = sim.n_params();
    if n == 0 || draws.is_empty() || draws.len() % n != 0 {
        return Err(Error::Param(format!(
            "draw buffer of {} values does not hold whole {n}-parameter rows",
            draws.len()
        )));
    }
    let k = draws.len() / n;
    let half = k / 2;
    let mut sum = vec![0.0f64; n];
    let mut sum_sq = vec![0.0f64; n];
    let mut half_sum = vec![0.0f64; n];
    for (r, row) in draws.chunks(n).enumerate() {
        for (i, &v) in row.iter().enumerate() {
            let v = f64::from(v);
            sum[i] += v;
            sum_sq[i] += v * v;
            if r < half {
                half_sum[i] += v;
            }
        }
    }
    let mu: Vec<f32> = sum.iter().map(|s| (s / k as f64) as f32).collect();
    let sigma: Vec<f32> = sum_sq
        .iter()
        .zip(&sum)
        .map(|(&sq, &s)| {
            let m = s / k as f64;
            ((sq / k as f64 - m * m).max(0.0)).sqrt() as f32
        })
        .collect();
    let first_half_mu: Vec<f32> = half_sum.iter().map(|s| (s / half.max(1) as f64) as f32).collect();
    let second_half_mu: Vec<f32> = sum
        .iter()
        .zip(&half_sum)
        .map(|(&s, &h)| ((s - h) / (k - half).max(1) as f64) as f32)
        .collect();
    Ok(BestMatchReport {
        names: sim.space.names().iter().map(|s| s.to_string()).collect(),
        true_mu: sim.truth.mu.clone(),
        true_sigma: sim.truth.sigma.clone(),
        bm_mu: mu,
        bm_sigma: sigma,
        first_half_mu,
        second_half_mu,
        samples: k,
    })
}

/// Draws `k` samples from the generator and reports how their per-parameter
/// mean and spread compare to the truth distribution.
pub fn best_match_stats(
    gnet: &Network,
    sim: &SimCase,
    noise_dim: usize,
    seed: u64,
    k: usize,
    batch: usize,
) -> Result<BestMatchReport> {
    let draws = generator_draws(gnet, &sim.space, noise_dim, seed, k, batch)?;
    best_match_from_draws(sim, &draws)
}

/// Mean per-pixel |E(r) - T(r)| over `samples` uniform draws of normalized
/// parameters. Both images live in [-1, 1], so the result sits in [0, 2].
pub fn emulator_fidelity(
    enet: &Network,
    sim: &SimCase,
    seed: u64,
    samples: usize,
    batch: usize,
) -> Result<f32> {
    let n = sim.n_params();
    let mut rng = stream_rng(seed, Stream::Eval);
    let mut session = InferSession::emulator(enet, batch)?;
    let mut r = vec![0.0f32; batch * n];
    let mut total = 0.0f64;
    let mut counted = 0usize;
    let mut remaining = samples;
    while remaining > 0 {
        fill_uniform_pm1(&mut rng, &mut r);
        let emu = session.forward(enet, &r)?.to_vec();
        for (row, e_img) in r.chunks(n).zip(emu.chunks(sim_pixels())).take(remaining.min(batch)) {
            let t_img = sim.simulate_normalized(row)?;
            total += e_img
                .iter()
                .zip(t_img.data())
                .map(|(&a, &b)| f64::from((a - b).abs()))
                .sum::<f64>();
            counted += e_img.len();
        }
        remaining = remaining.saturating_sub(batch);
    }
    Ok((total / counted as f64) as f32)
}

fn sim_pixels() -> usize {
    IMG_SIDE * IMG_SIDE
}

/// Maps [-1, 1] to a display byte, rounding half away from zero.
fn pixel_byte(v: f32) -> u8 {
    let scaled = ((v + 1.0) / 2.0 * 255.0).round();
    scaled.clamp(0.0, 255.0) as u8
}

/// Tiles images left to right, top to bottom into one binary PGM (P5)
/// buffer. The last row is padded with background tiles.
pub fn image_grid_pgm(images: &[Image], cols: usize) -> Vec<u8> {
    assert!(cols > 0 && !images.is_empty(), "grid needs at least one tile");
    let rows = images.len().div_ceil(cols);
    let (w, h) = (cols * IMG_SIDE, rows * IMG_SIDE);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let bg = pixel_byte(Image::BACKGROUND);
    for gy in 0..h {
        for gx in 0..w {
            let tile = (gy / IMG_SIDE) * cols + gx / IMG_SIDE;
            out.push(match images.get(tile) {
                Some(img) => pixel_byte(img.at(gx % IMG_SIDE, gy % IMG_SIDE)),
                None => bg,
            });
        }
    }
    out
}

pub fn dump_image_grid(images: &[Image], cols: usize, path: &Path) -> Result<()> {
    std::fs::write(path, image_grid_pgm(images, cols)).map_err(|e| Error::io(path, e))
}

/// Renders the emulator's output for each normalized parameter row into
/// images, for side-by-side grids with the simulator's.
pub fn emulate_images(enet: &Network, rows: &[f32], n_params: usize) -> Result<Vec<Image>> {
    if rows.is_empty() || rows.len() % n_params != 0 {
        return Err(Error::Param(format!(
            "row buffer of {} values does not hold whole {n_params}-parameter rows",
            rows.len()
        )));
    }
    let count = rows.len() / n_params;
    let batch = count.min(64);
    let mut session = InferSession::emulator(enet, batch)?;
    let mut padded = vec![0.0f32; batch * n_params];
    let mut out = Vec::with_capacity(count);
    let mut done = 0usize;
    while done < count {
        let take = batch.min(count - done);
        padded[..take * n_params]
            .copy_from_slice(&rows[done * n_params..(done + take) * n_params]);
        let imgs = session.forward(enet, &padded)?;
        for img in imgs.chunks(sim_pixels()).take(take) {
            out.push(Image::from_slice(img));
        }
        done += take;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_emulator, init_generator, NetConfig};
    use crate::rng::stream_rng;
    use crate::simulators::CaseId;

    fn line_sim() -> SimCase {
        SimCase::with_defaults(CaseId::Line, 1)
    }

    #[test]
    fn constant_generator_reports_zero_spread_at_midrange() {
        let cfg = NetConfig { noise_dim: 8, ..NetConfig::default() };
        let mut gnet = init_generator(&cfg, 4, &mut stream_rng(0, Stream::Init));
        for i in 0..gnet.len() {
            gnet.param_mut(i).data_mut().fill(0.0);
        }
        let sim = line_sim();
        let report = best_match_stats(&gnet, &sim, 8, 3, 100, 16).unwrap();
        assert_eq!(report.samples, 100);
        for i in 0..4 {
            let (lo, hi) = {
                let d = &sim.space.defs()[i];
                (d.lo, d.hi)
            };
            let mid = (lo + hi) / 2.0;
            assert!(
                (report.bm_mu[i] - mid).abs() < 1e-5,
                "param {i}: mu {} vs midrange {mid}",
                report.bm_mu[i]
            );
            assert_eq!(report.bm_sigma[i], 0.0);
        }
        assert!(report.half_split_ok(), "zero spread must trivially pass the split check");
    }

    #[test]
    fn best_match_reduction_matches_hand_computation() {
        let sim = line_sim();
        // Four rows of four parameters; parameter 0 takes 1,2,3,4.
        let mut draws = vec![0.0f32; 16];
        for (r, v) in [1.0f32, 2.0, 3.0, 4.0].into_iter().enumerate() {
            draws[r * 4] = v;
        }
        let rep = best_match_from_draws(&sim, &draws).unwrap();
        assert_eq!(rep.samples, 4);
        assert!((rep.bm_mu[0] - 2.5).abs() < 1e-6);
        // Population spread of {1,2,3,4} is sqrt(1.25).
        assert!((rep.bm_sigma[0] - 1.25f32.sqrt()).abs() < 1e-6);
        assert!((rep.first_half_mu[0] - 1.5).abs() < 1e-6);
        assert!((rep.second_half_mu[0] - 3.5).abs() < 1e-6);
        assert_eq!(rep.bm_mu[1], 0.0);
    }

    #[test]
    fn draws_are_reproducible_and_sized() {
        let cfg = NetConfig { noise_dim: 8, ..NetConfig::default() };
        let gnet = init_generator(&cfg, 4, &mut stream_rng(5, Stream::Init));
        let sim = line_sim();
        let a = generator_draws(&gnet, &sim.space, 8, 11, 37, 16).unwrap();
        let b = generator_draws(&gnet, &sim.space, 8, 11, 37, 16).unwrap();
        assert_eq!(a.len(), 37 * 4);
        assert_eq!(a, b);
        let c = generator_draws(&gnet, &sim.space, 8, 12, 37, 16).unwrap();
        assert_ne!(a, c, "different eval seeds should draw different noise");
    }

    #[test]
    fn untrained_emulator_fidelity_is_finite_and_bounded() {
        let cfg = NetConfig { noise_dim: 8, ..NetConfig::default() };
        let enet = init_emulator(&cfg, 4, &mut stream_rng(2, Stream::Init));
        let sim = line_sim();
        let f = emulator_fidelity(&enet, &sim, 9, 20, 8).unwrap();
        assert!(f.is_finite());
        assert!((0.0..=2.0).contains(&f), "per-pixel gap must sit in [0, 2], got {f}");
        // Fresh random weights cannot have learned the simulator.
        assert!(f > 0.01, "untrained emulator is suspiciously faithful: {f}");
    }

    #[test]
    fn grid_encoding_maps_range_endpoints_to_bytes() {
        let mut img = Image::background();
        img.set(0, 0, 1.0);
        img.set(1, 0, 0.0);
        let pgm = image_grid_pgm(&[img.clone(), img], 2);
        let header = b"P5\n56 28\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let body = &pgm[header.len()..];
        assert_eq!(body.len(), 56 * 28);
        assert_eq!(body[0], 255, "value 1.0 maps to white");
        assert_eq!(body[1], 128, "value 0.0 rounds up to 128");
        assert_eq!(body[2], 0, "background maps to black");
        assert_eq!(body[28], 255, "second tile starts at column 28");
    }

    #[test]
    fn odd_grid_pads_with_background() {
        let img = Image::background();
        let pgm = image_grid_pgm(&[img.clone(), img.clone(), img], 2);
        // Three tiles in two columns: two rows, fourth tile padded.
        let header = b"P5\n56 56\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert!(pgm[header.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn report_csv_and_table_cover_all_params() {
        let sim = line_sim();
        let draws = vec![0.5f32; 8 * 4];
        let rep = best_match_from_draws(&sim, &draws).unwrap();
        let csv = rep.csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("param,true_mu,true_sigma,bm_mu,bm_sigma"));
        for name in sim.space.names() {
            assert!(csv.contains(name));
            assert!(rep.table().contains(name));
        }
    }
}
