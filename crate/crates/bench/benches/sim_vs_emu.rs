//! Criterion microbenchmarks for one simulated image and one emulator batch.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use magan_core::nets::{init_emulator, InferSession, NetConfig};
use magan_core::rng::{stream_rng, Stream};
use magan_core::simulators::{CaseId, SimCase};
use std::hint::black_box;

fn simulate_one(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_one_image");
    for case in [CaseId::Line, CaseId::Circle] {
        let sim = SimCase::with_defaults(case, 1);
        let rows = sim.truth_params(3, 1);
        group.bench_with_input(BenchmarkId::from_parameter(case), &rows, |b, rows| {
            b.iter(|| sim.simulate(black_box(rows)))
        });
    }
    group.finish();
}

fn emulate_batch(c: &mut Criterion) {
    let cfg = NetConfig::default();
    let enet = init_emulator(&cfg, 5, &mut stream_rng(0, Stream::Init));
    let batch = 256;
    let mut session = InferSession::emulator(&enet, batch).unwrap();
    let rows = vec![0.25f32; batch * 5];
    let mut group = c.benchmark_group("emulate_batch256");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| session.forward(&enet, black_box(&rows)).unwrap().len())
    });
    group.finish();
}

criterion_group!(benches, simulate_one, emulate_batch);
criterion_main!(benches);
