//! Command line driver: truth-set export, the two training stages,
//! evaluation reports, the simulator-vs-emulator timing harness, and a
//! gradient self-check.
//!
//! Exit codes: 0 success, 2 configuration problem, 3 checkpoint problem,
//! 4 io failure, 5 non-finite numerics, 1 anything else.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use magan_core::checkpoint::Checkpoint;
use magan_core::config::RunConfig;
use magan_core::error::{Error, Result};
use magan_core::eval::{
    best_match_stats, dump_image_grid, emulate_images, emulator_fidelity, generator_draws,
    image_grid_pgm,
};
use magan_core::gradsuite::full_suite;
use magan_core::nets::{init_emulator, NetConfig};
use magan_core::rng::{fill_uniform_pm1, stream_rng, Stream};
use magan_core::simulators::{params_to_csv, Image, SimCase};
use magan_core::training::{
    nets_from_checkpoint, run_pretraining, run_training, RunHooks, TrainState, TruthSet,
};

#[derive(Parser)]
#[command(name = "magan", version, about = "Adversarial emulator and parameter-distribution trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key=value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. -s batch=64. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        let cfg = RunConfig::from_file(&self.config, &overrides)?;
        // Every run states the configuration it actually used.
        println!("# effective configuration\n{}", cfg.dump());
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw truth parameters and export them with a sample image grid.
    GenTruth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Row count; defaults to the config's truth_count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Stage one: train the emulator against the simulator.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a saved checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Stage two: train the generator against the truth set.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from; defaults to OUT/checkpoint.bin.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Best-match report, fidelity, and image grids for a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Generator draws for the report; defaults to the config's
        /// eval_samples.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Time the simulator (with cost multiplier) against the emulator.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Use the emulator weights from this checkpoint; fresh weights
        /// otherwise (timing does not depend on training state).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        sim_count: usize,
        #[arg(long, default_value_t = 100_000)]
        emu_count: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Per-image simulator cost the multiplier must reach, in
        /// microseconds. 0 picks a target from the measured emulator cost.
        #[arg(long, default_value_t = 0.0)]
        target_us: f64,
        /// Write the two timing rows as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Probed coordinates per tensor; 0 checks every coordinate.
        #[arg(long, default_value_t = 6)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Param(_) => 2,
        Error::Checkpoint(_) | Error::MissingCheckpoint(_) => 3,
        Error::Io { .. } => 4,
        Error::NonFinite(_) => 5,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::GenTruth { cfg, out, count } => gen_truth(&cfg, &out, count),
        Cmd::Pretrain { cfg, out, resume } => pretrain(&cfg, &out, resume.as_deref()),
        Cmd::Train { cfg, out, resume } => train(&cfg, &out, resume.as_deref()),
        Cmd::Eval { cfg, checkpoint, out, samples } => eval(&cfg, &checkpoint, &out, samples),
        Cmd::Bench { cfg, checkpoint, sim_count, emu_count, reps, target_us, out } => {
            bench(&cfg, checkpoint.as_deref(), sim_count, emu_count, reps, target_us, out.as_deref())
        }
        Cmd::Gradcheck { eps, probes, seed, tol } => gradcheck(eps, probes, seed, tol),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn make_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

const GRID_COLS: usize = 8;
const GRID_TILES: usize = 64;

fn gen_truth(cfg: &ConfigArgs, out: &Path, count: Option<usize>) -> Result<i32> {
    let cfg = cfg.load()?;
    let sim = SimCase::new(cfg.case, cfg.space.clone(), cfg.truth.clone(), cfg.effective_field_seed())?;
    make_dir(out)?;
    let count = count.unwrap_or(cfg.truth_count);
    let rows = sim.truth_params(cfg.seed, count);
    write_file(&out.join("truth_params.csv"), params_to_csv(&sim.space, &rows).as_bytes())?;
    let n = sim.n_params();
    let tiles: Vec<Image> = rows
        .chunks(n)
        .take(GRID_TILES.min(count))
        .map(|r| sim.simulate(r))
        .collect();
    write_file(&out.join("truth_grid.pgm"), &image_grid_pgm(&tiles, GRID_COLS))?;
    println!("{count} truth rows for case {}", cfg.case);
    Ok(0)
}

/// Copies metrics rows to stderr so long runs show progress while the CSV
/// file stays machine-readable.
struct Tee(File);

impl std::io::Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.0.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.flush()
    }
}

fn open_metrics(path: &Path, append: bool) -> Result<Tee> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(Tee(file))
}

fn load_state(cfg: RunConfig, resume: Option<&Path>) -> Result<TrainState> {
    match resume {
        Some(path) => TrainState::from_checkpoint(cfg, &Checkpoint::load(path)?),
        None => TrainState::new(cfg),
    }
}

fn pretrain(cfg: &ConfigArgs, out: &Path, resume: Option<&Path>) -> Result<i32> {
    let cfg = cfg.load()?;
    make_dir(out)?;
    let mut state = load_state(cfg, resume)?;
    let mut sink = open_metrics(&out.join("metrics_pretrain.csv"), state.pretrain_done > 0)?;
    let mut snap = |s: &TrainState| {
        s.to_checkpoint().save(&out.join(format!("snap_pretrain_{:07}.bin", s.pretrain_done)))
    };
    let started = Instant::now();
    let mut hooks = RunHooks { metrics: Some(&mut sink), on_snapshot: Some(&mut snap) };
    run_pretraining(&mut state, &mut hooks)?;
    drop(hooks);
    let ck_path = out.join("checkpoint.bin");
    state.to_checkpoint().save(&ck_path)?;
    println!(
        "pretraining at {} iterations after {:.1}s; checkpoint {}",
        state.pretrain_done,
        started.elapsed().as_secs_f64(),
        ck_path.display()
    );
    Ok(0)
}

fn train(cfg: &ConfigArgs, out: &Path, resume: Option<&Path>) -> Result<i32> {
    let cfg = cfg.load()?;
    make_dir(out)?;
    let default_ck = out.join("checkpoint.bin");
    let ck_path = resume.unwrap_or(&default_ck);
    let mut state = load_state(cfg, Some(ck_path))?;
    if state.pretrain_done == 0 {
        return Err(Error::Checkpoint(format!(
            "{} holds no pretraining; the generator stage needs a trained emulator",
            ck_path.display()
        )));
    }
    let truth = TruthSet::generate(&state.sim, state.cfg.seed, state.cfg.truth_count);
    let mut sink = open_metrics(&out.join("metrics_train.csv"), state.train_done > 0)?;
    let mut snap = |s: &TrainState| {
        s.to_checkpoint().save(&out.join(format!("snap_train_{:07}.bin", s.train_done)))
    };
    let started = Instant::now();
    let mut hooks = RunHooks { metrics: Some(&mut sink), on_snapshot: Some(&mut snap) };
    run_training(&mut state, &truth, &mut hooks)?;
    drop(hooks);
    state.to_checkpoint().save(&default_ck)?;
    println!(
        "training at {} iterations after {:.1}s; checkpoint {}",
        state.train_done,
        started.elapsed().as_secs_f64(),
        default_ck.display()
    );
    Ok(0)
}

fn eval(cfg: &ConfigArgs, ck_path: &Path, out: &Path, samples: Option<usize>) -> Result<i32> {
    let cfg = cfg.load()?;
    let ck = Checkpoint::load(ck_path)?;
    let h = &ck.header;
    if h.case != cfg.case || h.noise_dim != cfg.noise_dim || h.space != cfg.space {
        return Err(Error::Checkpoint(format!(
            "checkpoint {} belongs to a different run setup than the config",
            ck_path.display()
        )));
    }
    // Render with the noise field the emulator was trained against.
    let sim = SimCase::new(cfg.case, cfg.space.clone(), cfg.truth.clone(), h.field_seed)?;
    let nets = nets_from_checkpoint(&ck)?;
    make_dir(out)?;
    let n = sim.n_params();
    let k = samples.unwrap_or(cfg.eval_samples);

    let report = best_match_stats(&nets.gnet, &sim, cfg.noise_dim, cfg.seed, k, cfg.batch)?;
    println!(
        "best match over {k} generator draws (pretrain {}, train {} iterations):",
        h.pretrain_done, h.train_done
    );
    print!("{}", report.table());
    if !report.half_split_ok() {
        println!("warning: half-sample means disagree; treat the report as noisy");
    }
    let fidelity = emulator_fidelity(&nets.enet, &sim, cfg.seed, cfg.fidelity_samples, cfg.batch)?;
    println!("emulator fidelity (mean per-pixel |E - T|): {fidelity:.4}");
    write_file(&out.join("best_match.csv"), report.csv().as_bytes())?;

    let draws = generator_draws(&nets.gnet, &sim.space, cfg.noise_dim, cfg.seed, k, cfg.batch)?;
    write_file(&out.join("draws.csv"), params_to_csv(&sim.space, &draws).as_bytes())?;

    let truth_rows = sim.truth_params(cfg.seed, GRID_TILES);
    let truth_tiles: Vec<Image> = truth_rows.chunks(n).map(|r| sim.simulate(r)).collect();
    dump_image_grid(&truth_tiles, GRID_COLS, &out.join("truth_grid.pgm"))?;

    let gen_rows = &draws[..GRID_TILES.min(k) * n];
    let gen_sim: Vec<Image> = gen_rows.chunks(n).map(|r| sim.simulate(r)).collect();
    dump_image_grid(&gen_sim, GRID_COLS, &out.join("gen_sim_grid.pgm"))?;
    let mut gen_norm = vec![0.0f32; gen_rows.len()];
    for (p, q) in gen_rows.chunks(n).zip(gen_norm.chunks_mut(n)) {
        sim.space.normalize_slice(p, q)?;
    }
    let gen_emu = emulate_images(&nets.enet, &gen_norm, n)?;
    dump_image_grid(&gen_emu, GRID_COLS, &out.join("gen_emu_grid.pgm"))?;

    // Alternating simulator/emulator tiles for the same uniform draws.
    let mut r = vec![0.0f32; (GRID_TILES / 2) * n];
    fill_uniform_pm1(&mut stream_rng(cfg.seed, Stream::Eval), &mut r);
    let emu_tiles = emulate_images(&nets.enet, &r, n)?;
    let mut pairs = Vec::with_capacity(GRID_TILES);
    for (row, e) in r.chunks(n).zip(emu_tiles) {
        pairs.push(sim.simulate_normalized(row)?);
        pairs.push(e);
    }
    dump_image_grid(&pairs, GRID_COLS, &out.join("emu_pairs_grid.pgm"))?;
    for f in ["truth_grid.pgm", "gen_sim_grid.pgm", "gen_emu_grid.pgm", "emu_pairs_grid.pgm"] {
        println!("wrote {}", out.join(f).display());
    }
    Ok(0)
}

fn bench(
    cfg: &ConfigArgs,
    ck_path: Option<&Path>,
    sim_count: usize,
    emu_count: usize,
    reps: usize,
    target_us: f64,
    out: Option<&Path>,
) -> Result<i32> {
    let cfg = cfg.load()?;
    let sim = SimCase::new(cfg.case, cfg.space.clone(), cfg.truth.clone(), cfg.effective_field_seed())?;
    let enet = match ck_path {
        Some(p) => nets_from_checkpoint(&Checkpoint::load(p)?)?.enet,
        None => {
            let net_cfg = NetConfig { noise_dim: cfg.noise_dim, ..NetConfig::default() };
            init_emulator(&net_cfg, sim.n_params(), &mut stream_rng(cfg.seed, Stream::Init))
        }
    };
    let target = if target_us > 0.0 {
        target_us
    } else {
        // Aim the simulator's multiplied cost comfortably above the
        // emulator's measured cost so the comparison is meaningful.
        let probe =
            magan_bench::emulator_us_per_image(&enet, sim.n_params(), 4096, cfg.batch, 3, cfg.seed)?;
        (probe * 2.5).max(100.0)
    };
    let cmp = magan_bench::compare(
        &sim,
        &enet,
        cfg.seed,
        sim_count,
        emu_count,
        cfg.batch,
        reps,
        target,
    )?;
    println!("{}", cmp.summary());
    if let Some(path) = out {
        write_file(path, cmp.csv().as_bytes())?;
    }
    Ok(0)
}

fn gradcheck(eps: f64, probes: usize, seed: u64, tol: f64) -> Result<i32> {
    let entries = full_suite(eps, probes, seed)?;
    let mut all_ok = true;
    println!("{:<32} {:>12} {:>8} {:>8}", "check", "max_rel_err", "probed", "skipped");
    for e in &entries {
        let ok = e.report.passes(tol);
        all_ok &= ok;
        println!(
            "{:<32} {:>12.3e} {:>8} {:>8}  {}",
            e.name,
            e.report.max_rel_err,
            e.report.probes,
            e.report.skipped,
            if ok { "ok" } else { "FAIL" }
        );
        if let (false, Some(w)) = (ok, &e.report.worst) {
            println!(
                "    worst: {}/{}[{}] analytic {:.6e} numeric {:.6e}",
                w.net, w.param, w.index, w.analytic, w.numeric
            );
        }
    }
    if all_ok {
        println!("all gradients within {tol:.1e}");
        Ok(0)
    } else {
        eprintln!("gradient check failed at tolerance {tol:.1e}");
        Ok(1)
    }
}
