use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rsm_bench::{model, sudoku_batch};
use rsm_core::model::BlockVariant;
use rsm_core::trainer::{TrainConfig, Trainer};

fn transition(c: &mut Criterion) {
    let batch = sudoku_batch(32);
    let mut group = c.benchmark_group("transition");
    for variant in [BlockVariant::MlpT, BlockVariant::Attention] {
        let m = model(variant);
        let bound = m.bind(None).unwrap();
        let e = bound.embed_input(batch.input()).unwrap();
        let z = bound.init_latents(batch.size);
        group.bench_function(BenchmarkId::from_parameter(variant), |b| {
            b.iter(|| black_box(bound.transition(&z.z_l, &e).unwrap()))
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let batch = sudoku_batch(32);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for h in [2usize, 8] {
        let mut m = model(BlockVariant::MlpT);
        m.set_depths(h, 4);
        let cfg = TrainConfig {
            total_steps: 1_000_000,
            warmup_steps: 1,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(m, cfg).unwrap();
        group.bench_function(BenchmarkId::new("mlp_t_H", h), |b| {
            b.iter(|| black_box(trainer.train_step(&batch).unwrap()))
        });
    }
    group.finish();
}

fn rollout(c: &mut Criterion) {
    let batch = sudoku_batch(32);
    let m = model(BlockVariant::MlpT);
    let mut group = c.benchmark_group("infer");
    group.sample_size(10);
    for h in [2usize, 16] {
        group.bench_function(BenchmarkId::new("mlp_t_H", h), |b| {
            b.iter(|| black_box(m.forward_infer(batch.input(), h, 4, false).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, transition, train_step, rollout);
criterion_main!(benches);
