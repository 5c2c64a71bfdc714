//! The two-stage adversarial procedure. Stage one teaches the emulator to
//! mimic the simulator through a Siamese judge; stage two teaches the
//! generator to cover the truth parameter distribution through a
//! discriminator, with gradients flowing through the frozen emulator.

pub mod labels;

use std::io::Write;

use rand::RngExt;

use crate::checkpoint::{Checkpoint, CheckpointHeader, Section};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::exec::{Binding, Executor};
use crate::graph::{GraphBuilder, NodeId};
use crate::nets::{
    build_discriminator, build_emulator, build_generator, build_siamese, init_discriminator,
    init_emulator, init_generator, init_siamese, InferSession, NetConfig, Network, IMG_PIXELS,
    IMG_SIDE,
};
use crate::optim::{AdamState, NetAdam, NetSgd};
use crate::rng::{fill_standard_normal, fill_uniform_pm1, stream_rng, RngSet, Stream};
use crate::simulators::SimCase;
use crate::tensor::Tensor;
use labels::{LabelBands, LabelKind};

/// Best-match statistics shown in metrics rows use this many generator
/// draws; full reports use the configured count instead.
const METRIC_BM_DRAWS: usize = 2048;

#[derive(Debug, Clone, Copy)]
pub struct PretrainLosses {
    /// Judge loss, positive and negative passes summed; chance level for
    /// indistinguishable pairs with hard labels is ln 4.
    pub siamese: f32,
    pub emulator: f32,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainLosses {
    pub disc: f32,
    pub gen: f32,
}

/// Physical truth parameter rows the training stage draws batches from.
#[derive(Debug, Clone)]
pub struct TruthSet {
    params: Vec<f32>,
    n_params: usize,
}

impl TruthSet {
    pub fn generate(sim: &SimCase, seed: u64, count: usize) -> Self {
        TruthSet { params: sim.truth_params(seed, count), n_params: sim.n_params() }
    }

    pub fn count(&self) -> usize {
        self.params.len() / self.n_params
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.params[i * self.n_params..(i + 1) * self.n_params]
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }
}

/// Optional per-run outputs: a metrics CSV sink and a callback fired at the
/// configured snapshot iterations.
#[derive(Default)]
pub struct RunHooks<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    #[allow(clippy::type_complexity)]
    pub on_snapshot: Option<&'a mut (dyn FnMut(&TrainState) -> Result<()> + 'a)>,
}

impl<'a> RunHooks<'a> {
    pub fn none() -> Self {
        Self::default()
    }
}

struct StepGraph {
    exec: Executor<f32>,
    loss: NodeId,
}

/// Prebuilt executors for every training sub-step, sized to the configured
/// batch. Parameters are copied in before each use, so the same executors
/// serve the whole run.
struct StepExecs {
    emu_infer: InferSession,
    gen_infer: InferSession,
    s_step: StepGraph,
    e_step: StepGraph,
    d_step: StepGraph,
    g_step: StepGraph,
}

pub struct TrainState {
    pub cfg: RunConfig,
    pub sim: SimCase,
    pub gnet: Network,
    pub enet: Network,
    pub dnet: Network,
    pub snet: Network,
    pub adam_g: NetAdam,
    pub adam_e: NetAdam,
    pub sgd: NetSgd,
    pub rngs: RngSet,
    pub pretrain_done: u64,
    pub train_done: u64,
    bands: LabelBands,
    execs: StepExecs,
}

impl TrainState {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sim = SimCase::new(
            cfg.case,
            cfg.space.clone(),
            cfg.truth.clone(),
            cfg.effective_field_seed(),
        )?;
        let net_cfg = NetConfig { noise_dim: cfg.noise_dim, ..NetConfig::default() };
        let n = sim.n_params();

        // One init stream, nets drawn in fixed order; reordering would
        // silently change every seeded run.
        let mut init_rng = stream_rng(cfg.seed, Stream::Init);
        let gnet = init_generator(&net_cfg, n, &mut init_rng);
        let enet = init_emulator(&net_cfg, n, &mut init_rng);
        let dnet = init_discriminator(&net_cfg, &mut init_rng);
        let snet = init_siamese(&net_cfg, &mut init_rng);

        let adam_g = NetAdam::new(&gnet, cfg.adam);
        let adam_e = NetAdam::new(&enet, cfg.adam);
        let sgd = NetSgd { lr: cfg.sgd_lr };
        let rngs = RngSet::new(cfg.seed);
        let bands = LabelBands {
            pos_lo: cfg.pos_label_lo,
            pos_hi: cfg.pos_label_hi,
            neg_lo: cfg.neg_label_lo,
            neg_hi: cfg.neg_label_hi,
        };
        let execs = StepExecs::build(cfg.batch, &gnet, &enet, &dnet, &snet)?;

        Ok(TrainState {
            cfg,
            sim,
            gnet,
            enet,
            dnet,
            snet,
            adam_g,
            adam_e,
            sgd,
            rngs,
            pretrain_done: 0,
            train_done: 0,
            bands,
            execs,
        })
    }

    // -----------------------------------------------------------------
    // Checkpoint round trip
    // -----------------------------------------------------------------

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                case: self.cfg.case,
                master_seed: self.cfg.seed,
                noise_dim: self.cfg.noise_dim,
                field_seed: self.cfg.effective_field_seed(),
                pretrain_done: self.pretrain_done,
                train_done: self.train_done,
                space: self.cfg.space.clone(),
                rng_positions: self.rngs.positions(),
            },
            sections: vec![
                net_section(&self.gnet),
                net_section(&self.enet),
                net_section(&self.dnet),
                net_section(&self.snet),
                adam_section("adam_G", &self.adam_g),
                adam_section("adam_E", &self.adam_e),
            ],
        }
    }

    pub fn from_checkpoint(cfg: RunConfig, ck: &Checkpoint) -> Result<Self> {
        let h = &ck.header;
        if h.case != cfg.case {
            return Err(Error::Checkpoint(format!(
                "checkpoint is case {}, config says case {}",
                h.case, cfg.case
            )));
        }
        if h.master_seed != cfg.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was produced with seed {}, config says {}",
                h.master_seed, cfg.seed
            )));
        }
        if h.noise_dim != cfg.noise_dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint noise_dim {} vs config {}",
                h.noise_dim, cfg.noise_dim
            )));
        }
        if h.field_seed != cfg.effective_field_seed() {
            return Err(Error::Checkpoint(format!(
                "checkpoint noise-field seed {} vs config {}",
                h.field_seed,
                cfg.effective_field_seed()
            )));
        }
        if h.space != cfg.space {
            return Err(Error::Checkpoint(
                "checkpoint parameter space differs from config".into(),
            ));
        }
        let mut state = TrainState::new(cfg)?;
        load_net(&mut state.gnet, ck.require_section("G")?)?;
        load_net(&mut state.enet, ck.require_section("E")?)?;
        load_net(&mut state.dnet, ck.require_section("D")?)?;
        load_net(&mut state.snet, ck.require_section("S")?)?;
        load_adam(&mut state.adam_g, ck.require_section("adam_G")?)?;
        load_adam(&mut state.adam_e, ck.require_section("adam_E")?)?;
        state.rngs.restore_positions(&h.rng_positions);
        state.pretrain_done = h.pretrain_done;
        state.train_done = h.train_done;
        Ok(state)
    }

    // -----------------------------------------------------------------
    // Steps
    // -----------------------------------------------------------------

    /// Renders T for each normalized parameter row.
    fn images_from_normalized(&self, rows: &[f32]) -> Result<Vec<f32>> {
        let n = self.sim.n_params();
        let mut out = Vec::with_capacity(rows.len() / n * IMG_PIXELS);
        for row in rows.chunks(n) {
            out.extend_from_slice(self.sim.simulate_normalized(row)?.data());
        }
        Ok(out)
    }

    fn images_from_physical(&self, truth: &TruthSet, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * IMG_PIXELS);
        for &i in indices {
            out.extend_from_slice(self.sim.simulate(truth.row(i)).data());
        }
        out
    }

    /// One iteration of the emulator stage: judge ascent, then emulator
    /// descent on fresh draws.
    pub fn pretrain_step(&mut self) -> Result<PretrainLosses> {
        let b = self.cfg.batch;
        let n = self.sim.n_params();
        let flip = self.cfg.flip_fraction;
        let iter = self.pretrain_done + 1;

        // Draw order is part of the reproducibility contract.
        let mut r_pos = vec![0.0f32; b * n];
        fill_uniform_pm1(&mut self.rngs.rparams, &mut r_pos);
        let mut r_neg = vec![0.0f32; b * n];
        fill_uniform_pm1(&mut self.rngs.rparams, &mut r_neg);
        let labels_pos = self.bands.batch(LabelKind::Positive, b, flip, &mut self.rngs.labels);
        let labels_neg = self.bands.batch(LabelKind::Negative, b, flip, &mut self.rngs.labels);

        let sim_pos = self.images_from_normalized(&r_pos)?;
        let sim_neg = self.images_from_normalized(&r_neg)?;
        let emu_neg = self.execs.emu_infer.forward(&self.enet, &r_neg)?.to_vec();
        check_image_batch(&sim_pos);
        check_image_batch(&sim_neg);
        check_image_batch(&emu_neg);

        // (a) Judge: positive pairs are the same simulated image on both
        // branches; negatives pair simulation with emulation. Gradients from
        // both passes accumulate into one SGD step.
        self.snet.reset_grads();
        let s = &mut self.execs.s_step;
        s.exec.load_params(&[&self.snet])?;
        s.exec.forward(&[("a", &sim_pos), ("b", &sim_pos), ("labels", &labels_pos)])?;
        let loss_pos = s.exec.value(s.loss)[0];
        ensure_finite(loss_pos, "pretrain", iter, "siamese positive pass")?;
        s.exec.backward(s.loss)?;
        s.exec.apply_param_grads(&mut [&mut self.snet])?;
        s.exec.forward(&[("a", &sim_neg), ("b", &emu_neg), ("labels", &labels_neg)])?;
        let loss_neg = s.exec.value(s.loss)[0];
        ensure_finite(loss_neg, "pretrain", iter, "siamese negative pass")?;
        s.exec.backward(s.loss)?;
        s.exec.apply_param_grads(&mut [&mut self.snet])?;
        self.sgd.step(&mut self.snet);

        // (b) Emulator: fresh draws, pushed toward "indistinguishable"
        // through the frozen judge.
        let mut r_emu = vec![0.0f32; b * n];
        fill_uniform_pm1(&mut self.rngs.rparams, &mut r_emu);
        let sim_emu = self.images_from_normalized(&r_emu)?;
        check_image_batch(&sim_emu);
        let ones = vec![1.0f32; b];

        self.enet.reset_grads();
        let e = &mut self.execs.e_step;
        e.exec.load_params(&[&self.enet, &self.snet])?;
        e.exec.forward(&[("r", &r_emu), ("sim", &sim_emu), ("target", &ones)])?;
        let loss_emu = e.exec.value(e.loss)[0];
        ensure_finite(loss_emu, "pretrain", iter, "emulator pass")?;
        e.exec.backward(e.loss)?;
        e.exec.apply_param_grads(&mut [&mut self.enet])?;
        self.adam_e.step(&mut self.enet);

        self.pretrain_done = iter;
        Ok(PretrainLosses { siamese: loss_pos + loss_neg, emulator: loss_emu })
    }

    /// One iteration of the generator stage: discriminator ascent on truth
    /// vs. generated images, then generator descent through frozen E and D.
    pub fn train_step(&mut self, truth: &TruthSet) -> Result<TrainLosses> {
        let b = self.cfg.batch;
        let flip = self.cfg.flip_fraction;
        let iter = self.train_done + 1;

        let indices: Vec<usize> =
            (0..b).map(|_| self.rngs.truth.random_range(0..truth.count())).collect();
        let mut z = vec![0.0f32; b * self.cfg.noise_dim];
        fill_standard_normal(&mut self.rngs.noise, &mut z);
        let labels_pos = self.bands.batch(LabelKind::Positive, b, flip, &mut self.rngs.labels);
        let labels_neg = self.bands.batch(LabelKind::Negative, b, flip, &mut self.rngs.labels);

        let truth_imgs = self.images_from_physical(truth, &indices);
        let gen_params = self.execs.gen_infer.forward(&self.gnet, &z)?.to_vec();
        let fake_imgs = if self.cfg.use_emulator_for_d {
            self.execs.emu_infer.forward(&self.enet, &gen_params)?.to_vec()
        } else {
            self.images_from_normalized(&gen_params)?
        };
        check_image_batch(&truth_imgs);
        check_image_batch(&fake_imgs);

        self.dnet.reset_grads();
        let d = &mut self.execs.d_step;
        d.exec.load_params(&[&self.dnet])?;
        d.exec.forward(&[("x", &truth_imgs), ("labels", &labels_pos)])?;
        let loss_pos = d.exec.value(d.loss)[0];
        ensure_finite(loss_pos, "train", iter, "discriminator truth pass")?;
        d.exec.backward(d.loss)?;
        d.exec.apply_param_grads(&mut [&mut self.dnet])?;
        d.exec.forward(&[("x", &fake_imgs), ("labels", &labels_neg)])?;
        let loss_neg = d.exec.value(d.loss)[0];
        ensure_finite(loss_neg, "train", iter, "discriminator generated pass")?;
        d.exec.backward(d.loss)?;
        d.exec.apply_param_grads(&mut [&mut self.dnet])?;
        self.sgd.step(&mut self.dnet);

        let mut z2 = vec![0.0f32; b * self.cfg.noise_dim];
        fill_standard_normal(&mut self.rngs.noise, &mut z2);
        let ones = vec![1.0f32; b];

        self.gnet.reset_grads();
        let g = &mut self.execs.g_step;
        g.exec.load_params(&[&self.gnet, &self.enet, &self.dnet])?;
        g.exec.forward(&[("z", &z2), ("target", &ones)])?;
        let loss_gen = g.exec.value(g.loss)[0];
        ensure_finite(loss_gen, "train", iter, "generator pass")?;
        g.exec.backward(g.loss)?;
        g.exec.apply_param_grads(&mut [&mut self.gnet])?;
        self.adam_g.step(&mut self.gnet);

        self.train_done = iter;
        Ok(TrainLosses { disc: loss_pos + loss_neg, gen: loss_gen })
    }

    // -----------------------------------------------------------------
    // Metrics
    // -----------------------------------------------------------------

    /// Mean per-pixel |E(r) - T(r)| over one batch of fresh uniform draws
    /// from the metrics stream.
    pub fn metric_fidelity(&mut self) -> Result<f32> {
        let b = self.cfg.batch;
        let n = self.sim.n_params();
        let mut r = vec![0.0f32; b * n];
        fill_uniform_pm1(&mut self.rngs.metrics, &mut r);
        let emu = self.execs.emu_infer.forward(&self.enet, &r)?.to_vec();
        let sim = self.images_from_normalized(&r)?;
        let total: f64 = emu
            .iter()
            .zip(&sim)
            .map(|(&a, &b)| f64::from((a - b).abs()))
            .sum();
        Ok((total / emu.len() as f64) as f32)
    }

    /// Quick best-match mean and population spread of the generator's
    /// denormalized outputs, for metrics rows.
    pub fn metric_best_match(&mut self) -> Result<(Vec<f32>, Vec<f32>)> {
        let b = self.cfg.batch;
        let n = self.sim.n_params();
        let batches = METRIC_BM_DRAWS.div_ceil(b);
        let count = batches * b;
        let mut sum = vec![0.0f64; n];
        let mut sum_sq = vec![0.0f64; n];
        let mut phys = vec![0.0f32; n];
        let mut z = vec![0.0f32; b * self.cfg.noise_dim];
        for _ in 0..batches {
            fill_standard_normal(&mut self.rngs.metrics, &mut z);
            let out = self.execs.gen_infer.forward(&self.gnet, &z)?.to_vec();
            for row in out.chunks(n) {
                self.sim.space.denormalize_slice(row, &mut phys)?;
                for (i, &v) in phys.iter().enumerate() {
                    sum[i] += f64::from(v);
                    sum_sq[i] += f64::from(v) * f64::from(v);
                }
            }
        }
        let mu: Vec<f32> = sum.iter().map(|s| (s / count as f64) as f32).collect();
        let sigma: Vec<f32> = sum_sq
            .iter()
            .zip(&mu)
            .map(|(&sq, &m)| {
                let var = sq / count as f64 - f64::from(m) * f64::from(m);
                var.max(0.0).sqrt() as f32
            })
            .collect();
        Ok((mu, sigma))
    }
}

// ---------------------------------------------------------------------
// Full runs
// ---------------------------------------------------------------------

fn metrics_header(space_names: &[&str]) -> String {
    let mut cols = vec![
        "iteration".to_string(),
        "stage".to_string(),
        "siamese_loss".to_string(),
        "emulator_loss".to_string(),
        "disc_loss".to_string(),
        "gen_loss".to_string(),
        "emu_pixel_mae".to_string(),
    ];
    for n in space_names {
        cols.push(format!("bm_mu_{n}"));
    }
    for n in space_names {
        cols.push(format!("bm_sigma_{n}"));
    }
    cols.join(",")
}

fn fmt_opt(v: Option<f32>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn emit_metrics(
    state: &mut TrainState,
    sink: &mut dyn Write,
    iteration: u64,
    stage: &str,
    siamese: Option<f32>,
    emulator: Option<f32>,
    disc: Option<f32>,
    gen: Option<f32>,
) -> Result<()> {
    let mae = state.metric_fidelity()?;
    let (mu, sigma) = state.metric_best_match()?;
    let mut row = vec![
        iteration.to_string(),
        stage.to_string(),
        fmt_opt(siamese),
        fmt_opt(emulator),
        fmt_opt(disc),
        fmt_opt(gen),
        format!("{mae}"),
    ];
    row.extend(mu.iter().map(|v| format!("{v}")));
    row.extend(sigma.iter().map(|v| format!("{v}")));
    writeln!(sink, "{}", row.join(","))
        .map_err(|e| Error::Checkpoint(format!("metrics sink: {e}")))?;
    Ok(())
}

/// Runs the emulator stage up to the configured iteration count, emitting
/// metrics rows and snapshot callbacks along the way.
pub fn run_pretraining(state: &mut TrainState, hooks: &mut RunHooks) -> Result<()> {
    let target = state.cfg.pretrain_iters;
    if let (Some(sink), 0) = (hooks.metrics.as_deref_mut(), state.pretrain_done) {
        let names = state.sim.space.names();
        writeln!(sink, "{}", metrics_header(&names))
            .map_err(|e| Error::Checkpoint(format!("metrics sink: {e}")))?;
    }
    while state.pretrain_done < target {
        let losses = state.pretrain_step()?;
        let it = state.pretrain_done;
        if it % state.cfg.metrics_every == 0 || it == target {
            if let Some(sink) = hooks.metrics.as_deref_mut() {
                emit_metrics(
                    state,
                    sink,
                    it,
                    "pretrain",
                    Some(losses.siamese),
                    Some(losses.emulator),
                    None,
                    None,
                )?;
            }
        }
        if state.cfg.snapshot_iters.contains(&it) {
            if let Some(cb) = hooks.on_snapshot.as_deref_mut() {
                cb(state)?;
            }
        }
    }
    Ok(())
}

/// Runs the generator stage against a fabricated truth set.
pub fn run_training(state: &mut TrainState, truth: &TruthSet, hooks: &mut RunHooks) -> Result<()> {
    if truth.n_params != state.sim.n_params() {
        return Err(Error::Param(format!(
            "truth set has {} parameters per row, case needs {}",
            truth.n_params,
            state.sim.n_params()
        )));
    }
    let target = state.cfg.train_iters;
    if let (Some(sink), 0) = (hooks.metrics.as_deref_mut(), state.train_done) {
        let names = state.sim.space.names();
        writeln!(sink, "{}", metrics_header(&names))
            .map_err(|e| Error::Checkpoint(format!("metrics sink: {e}")))?;
    }
    while state.train_done < target {
        let losses = state.train_step(truth)?;
        let it = state.train_done;
        if it % state.cfg.metrics_every == 0 || it == target {
            if let Some(sink) = hooks.metrics.as_deref_mut() {
                emit_metrics(
                    state,
                    sink,
                    it,
                    "train",
                    None,
                    None,
                    Some(losses.disc),
                    Some(losses.gen),
                )?;
            }
        }
        if state.cfg.snapshot_iters.contains(&it) {
            if let Some(cb) = hooks.on_snapshot.as_deref_mut() {
                cb(state)?;
            }
        }
    }
    Ok(())
}

/// The four networks of a run, as stored in a checkpoint.
pub struct Nets {
    pub gnet: Network,
    pub enet: Network,
    pub dnet: Network,
    pub snet: Network,
}

/// Rebuilds just the networks from a checkpoint, without optimizer state or
/// step executors. Enough for evaluation, image dumps, and benchmarks.
pub fn nets_from_checkpoint(ck: &Checkpoint) -> Result<Nets> {
    let net_cfg = NetConfig { noise_dim: ck.header.noise_dim, ..NetConfig::default() };
    let n = ck.header.space.len();
    // Shapes come from the init helpers; the weights below overwrite every
    // tensor, so the init draw itself is irrelevant.
    let mut rng = stream_rng(0, Stream::Init);
    let mut nets = Nets {
        gnet: init_generator(&net_cfg, n, &mut rng),
        enet: init_emulator(&net_cfg, n, &mut rng),
        dnet: init_discriminator(&net_cfg, &mut rng),
        snet: init_siamese(&net_cfg, &mut rng),
    };
    load_net(&mut nets.gnet, ck.require_section("G")?)?;
    load_net(&mut nets.enet, ck.require_section("E")?)?;
    load_net(&mut nets.dnet, ck.require_section("D")?)?;
    load_net(&mut nets.snet, ck.require_section("S")?)?;
    Ok(nets)
}

// ---------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------

impl StepExecs {
    fn build(
        batch: usize,
        gnet: &Network,
        enet: &Network,
        dnet: &Network,
        snet: &Network,
    ) -> Result<Self> {
        let n = enet.get("fc.w").map(|t| t.shape()[0]).unwrap_or(0);
        let noise_dim = gnet.get("fc1.w").map(|t| t.shape()[0]).unwrap_or(0);

        let s_step = {
            let mut b = GraphBuilder::new();
            let a = b.input("a", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
            let bb = b.input("b", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
            let score = build_siamese(&mut b, snet, a, bb)?;
            let t = b.input("labels", &[batch, 1])?;
            let loss = b.bce(score, t)?;
            StepGraph {
                exec: Executor::new(b.build(), &[snet], &[Binding::trainable("S")])?,
                loss,
            }
        };
        let e_step = {
            let mut b = GraphBuilder::new();
            let r = b.input("r", &[batch, n])?;
            let sim = b.input("sim", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
            let emu = build_emulator(&mut b, enet, r)?;
            let score = build_siamese(&mut b, snet, sim, emu)?;
            let t = b.input("target", &[batch, 1])?;
            let loss = b.bce(score, t)?;
            StepGraph {
                exec: Executor::new(
                    b.build(),
                    &[enet, snet],
                    &[Binding::trainable("E"), Binding::frozen("S")],
                )?,
                loss,
            }
        };
        let d_step = {
            let mut b = GraphBuilder::new();
            let x = b.input("x", &[batch, 1, IMG_SIDE, IMG_SIDE])?;
            let score = build_discriminator(&mut b, dnet, x)?;
            let t = b.input("labels", &[batch, 1])?;
            let loss = b.bce(score, t)?;
            StepGraph {
                exec: Executor::new(b.build(), &[dnet], &[Binding::trainable("D")])?,
                loss,
            }
        };
        let g_step = {
            let mut b = GraphBuilder::new();
            let z = b.input("z", &[batch, noise_dim])?;
            let params = build_generator(&mut b, gnet, z)?;
            let img = build_emulator(&mut b, enet, params)?;
            let score = build_discriminator(&mut b, dnet, img)?;
            let t = b.input("target", &[batch, 1])?;
            let loss = b.bce(score, t)?;
            StepGraph {
                exec: Executor::new(
                    b.build(),
                    &[gnet, enet, dnet],
                    &[
                        Binding::trainable("G"),
                        Binding::frozen("E"),
                        Binding::frozen("D"),
                    ],
                )?,
                loss,
            }
        };
        Ok(StepExecs {
            emu_infer: InferSession::emulator(enet, batch)?,
            gen_infer: InferSession::generator(gnet, batch)?,
            s_step,
            e_step,
            d_step,
            g_step,
        })
    }
}

/// Every image fed to a network as data must sit in the signed unit range.
fn check_image_batch(batch: &[f32]) {
    assert!(
        batch.iter().all(|v| (-1.0..=1.0).contains(v)),
        "image batch escaped [-1, 1]"
    );
}

fn ensure_finite(v: f32, stage: &str, iteration: u64, sub_step: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{stage} iteration {iteration}, {sub_step}: loss {v}"
        )))
    }
}

fn net_section(net: &Network) -> Section {
    Section {
        name: net.name().to_string(),
        tensors: net
            .tensors()
            .map(|(_, t)| Tensor::from_vec(t.shape(), t.data().to_vec()).expect("valid tensor"))
            .collect(),
    }
}

fn adam_section(name: &str, adam: &NetAdam) -> Section {
    let mut tensors = Vec::new();
    for st in adam.states() {
        tensors.push(Tensor::from_vec(&[st.m.len()], st.m.clone()).expect("valid tensor"));
        tensors.push(Tensor::from_vec(&[st.v.len()], st.v.clone()).expect("valid tensor"));
        tensors.push(Tensor::from_vec(&[1], vec![st.t as f32]).expect("valid tensor"));
    }
    Section { name: name.to_string(), tensors }
}

fn load_net(net: &mut Network, sec: &Section) -> Result<()> {
    if sec.tensors.len() != net.len() {
        return Err(Error::Checkpoint(format!(
            "section `{}` has {} tensors, network expects {}",
            sec.name,
            sec.tensors.len(),
            net.len()
        )));
    }
    for (i, t) in sec.tensors.iter().enumerate() {
        if t.shape() != net.param(i).shape() {
            return Err(Error::Checkpoint(format!(
                "section `{}` tensor {i} has shape {:?}, network expects {:?}",
                sec.name,
                t.shape(),
                net.param(i).shape()
            )));
        }
        net.param_mut(i).data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

fn load_adam(adam: &mut NetAdam, sec: &Section) -> Result<()> {
    if sec.tensors.len() % 3 != 0 {
        return Err(Error::Checkpoint(format!(
            "optimizer section `{}` has {} tensors, expected triples",
            sec.name,
            sec.tensors.len()
        )));
    }
    let states: Vec<AdamState> = sec
        .tensors
        .chunks(3)
        .map(|c| AdamState {
            m: c[0].data().to_vec(),
            v: c[1].data().to_vec(),
            t: c[2].data()[0] as u64,
        })
        .collect();
    adam.restore(states)
}
