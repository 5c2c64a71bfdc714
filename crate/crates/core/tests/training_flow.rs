//! End-to-end checks of the two training stages: which networks each stage
//! is allowed to touch, bitwise determinism, checkpoint resume, and the
//! failure paths.

use magan_core::config::RunConfig;
use magan_core::error::Error;
use magan_core::nets::Network;
use magan_core::simulators::CaseId;
use magan_core::training::{run_pretraining, run_training, RunHooks, TrainState, TruthSet};

fn tiny_cfg() -> RunConfig {
    let mut cfg = RunConfig::defaults(CaseId::Line);
    cfg.seed = 7;
    cfg.batch = 8;
    cfg.noise_dim = 16;
    cfg.pretrain_iters = 4;
    cfg.train_iters = 2;
    cfg.truth_count = 64;
    cfg.metrics_every = 2;
    cfg.snapshot_iters = vec![];
    cfg
}

fn net_hash(net: &Network) -> u64 {
    net.tensors()
        .flat_map(|(_, t)| t.data().iter())
        .fold(0u64, |h, v| h.wrapping_mul(31).wrapping_add(u64::from(v.to_bits())))
}

fn ck_bytes(state: &TrainState) -> Vec<u8> {
    let mut buf = Vec::new();
    state.to_checkpoint().write_to(&mut buf).unwrap();
    buf
}

#[test]
fn pretrain_step_updates_judge_and_emulator_only() {
    let mut state = TrainState::new(tiny_cfg()).unwrap();
    let (g0, e0, d0, s0) = (
        net_hash(&state.gnet),
        net_hash(&state.enet),
        net_hash(&state.dnet),
        net_hash(&state.snet),
    );
    let losses = state.pretrain_step().unwrap();
    assert!(losses.siamese.is_finite() && losses.emulator.is_finite());
    assert_eq!(net_hash(&state.gnet), g0, "generator must not move in stage one");
    assert_eq!(net_hash(&state.dnet), d0, "discriminator must not move in stage one");
    assert_ne!(net_hash(&state.enet), e0, "emulator should have taken a step");
    assert_ne!(net_hash(&state.snet), s0, "judge should have taken a step");
    assert_eq!(state.pretrain_done, 1);
}

#[test]
fn train_step_updates_generator_and_discriminator_only() {
    let mut state = TrainState::new(tiny_cfg()).unwrap();
    state.pretrain_step().unwrap();
    let truth = TruthSet::generate(&state.sim, state.cfg.seed, state.cfg.truth_count);
    let (g0, e0, d0, s0) = (
        net_hash(&state.gnet),
        net_hash(&state.enet),
        net_hash(&state.dnet),
        net_hash(&state.snet),
    );
    let losses = state.train_step(&truth).unwrap();
    assert!(losses.disc.is_finite() && losses.gen.is_finite());
    assert_eq!(net_hash(&state.enet), e0, "emulator is frozen in stage two");
    assert_eq!(net_hash(&state.snet), s0, "judge is unused in stage two");
    assert_ne!(net_hash(&state.gnet), g0);
    assert_ne!(net_hash(&state.dnet), d0);
    assert_eq!(state.train_done, 1);
}

#[test]
fn same_seed_runs_produce_identical_checkpoints() {
    let run = || {
        let mut state = TrainState::new(tiny_cfg()).unwrap();
        let truth = TruthSet::generate(&state.sim, state.cfg.seed, state.cfg.truth_count);
        for _ in 0..3 {
            state.pretrain_step().unwrap();
        }
        for _ in 0..2 {
            state.train_step(&truth).unwrap();
        }
        ck_bytes(&state)
    };
    assert_eq!(run(), run(), "same config and seed must be bit-reproducible");
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let cfg = tiny_cfg();
    let mut straight = TrainState::new(cfg.clone()).unwrap();
    for _ in 0..4 {
        straight.pretrain_step().unwrap();
    }

    let mut first = TrainState::new(cfg.clone()).unwrap();
    first.pretrain_step().unwrap();
    first.pretrain_step().unwrap();
    let ck = first.to_checkpoint();
    let mut resumed = TrainState::from_checkpoint(cfg, &ck).unwrap();
    assert_eq!(resumed.pretrain_done, 2);
    resumed.pretrain_step().unwrap();
    resumed.pretrain_step().unwrap();

    assert_eq!(
        ck_bytes(&straight),
        ck_bytes(&resumed),
        "save/restore must not perturb the trajectory"
    );
}

#[test]
fn checkpoint_header_mismatches_are_rejected() {
    let state = TrainState::new(tiny_cfg()).unwrap();
    let ck = state.to_checkpoint();

    let mut other = tiny_cfg();
    other.seed = 8;
    match TrainState::from_checkpoint(other, &ck) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("seed"), "got: {msg}"),
        Err(other) => panic!("expected checkpoint error, got {other:?}"),
        Ok(_) => panic!("seed mismatch was accepted"),
    }

    let mut other = tiny_cfg();
    other.noise_dim = 32;
    assert!(matches!(
        TrainState::from_checkpoint(other, &ck),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn nan_weight_aborts_with_nonfinite_error() {
    let mut state = TrainState::new(tiny_cfg()).unwrap();
    state.snet.param_mut(0).data_mut()[0] = f32::NAN;
    match state.pretrain_step() {
        Err(Error::NonFinite(msg)) => {
            assert!(msg.contains("pretrain iteration 1"), "got: {msg}");
        }
        other => panic!("expected non-finite abort, got {other:?}"),
    }
}

#[test]
fn metrics_rows_have_stage_dependent_columns() {
    let mut state = TrainState::new(tiny_cfg()).unwrap();
    let mut sink = Vec::new();
    let mut hooks = RunHooks { metrics: Some(&mut sink), on_snapshot: None };
    run_pretraining(&mut state, &mut hooks).unwrap();
    drop(hooks);

    let text = String::from_utf8(sink).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // Header plus rows at iterations 2 and 4.
    assert_eq!(lines.len(), 3, "unexpected metrics output: {text}");
    let header: Vec<&str> = lines[0].split(',').collect();
    let n = 4; // line case parameter count
    assert_eq!(header.len(), 7 + 2 * n);
    assert_eq!(&header[..7], &[
        "iteration",
        "stage",
        "siamese_loss",
        "emulator_loss",
        "disc_loss",
        "gen_loss",
        "emu_pixel_mae"
    ]);
    assert!(header[7].starts_with("bm_mu_"));
    assert!(header[7 + n].starts_with("bm_sigma_"));
    for (line, iter) in lines[1..].iter().zip(["2", "4"]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), header.len());
        assert_eq!(cells[0], iter);
        assert_eq!(cells[1], "pretrain");
        assert!(!cells[2].is_empty() && !cells[3].is_empty());
        assert!(cells[4].is_empty() && cells[5].is_empty(), "stage-two losses must be blank");
        for cell in &cells[6..] {
            assert!(cell.parse::<f32>().unwrap().is_finite());
        }
    }

    // Stage two fills the other pair of loss columns.
    let truth = TruthSet::generate(&state.sim, state.cfg.seed, state.cfg.truth_count);
    let mut sink = Vec::new();
    let mut hooks = RunHooks { metrics: Some(&mut sink), on_snapshot: None };
    run_training(&mut state, &truth, &mut hooks).unwrap();
    drop(hooks);
    let text = String::from_utf8(sink).unwrap();
    let row = text.lines().last().unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells[1], "train");
    assert!(cells[2].is_empty() && cells[3].is_empty());
    assert!(!cells[4].is_empty() && !cells[5].is_empty());
}

#[test]
fn snapshot_callback_fires_at_configured_iterations() {
    let mut cfg = tiny_cfg();
    cfg.snapshot_iters = vec![1, 3];
    let mut state = TrainState::new(cfg).unwrap();
    let mut seen = Vec::new();
    let mut cb = |s: &TrainState| {
        seen.push(s.pretrain_done);
        Ok(())
    };
    let mut hooks = RunHooks { metrics: None, on_snapshot: Some(&mut cb) };
    run_pretraining(&mut state, &mut hooks).unwrap();
    drop(hooks);
    assert_eq!(seen, vec![1, 3]);
}

#[test]
fn truth_set_rows_match_case_arity() {
    let state = TrainState::new(tiny_cfg()).unwrap();
    let truth = TruthSet::generate(&state.sim, 7, 64);
    assert_eq!(truth.count(), 64);
    assert_eq!(truth.row(0).len(), 4);
    assert_eq!(truth.params().len(), 64 * 4);
    // First row must be the same draw every time.
    let again = TruthSet::generate(&state.sim, 7, 64);
    assert_eq!(truth.row(5), again.row(5));
}
