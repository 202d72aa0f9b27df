use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use m3i_bench::{logits, oracle_joint, shapes, trainer, TRAIN_STEP_METHODS};
use m3i_core::heads::softmax_cross_entropy;
use m3i_core::oracle::exact_mi;
use m3i_core::transforms::generate_blockwise_mask;
use std::hint::black_box;

fn oracle(c: &mut Criterion) {
    let joint = oracle_joint(8);
    c.bench_function("exact_mi support<=8", |b| {
        b.iter(|| exact_mi(black_box(&joint), &[3], &[4], &[1, 2]))
    });
}

fn losses(c: &mut Criterion) {
    let logits = logits(256);
    c.bench_function("softmax_cross_entropy 256", |b| {
        b.iter(|| softmax_cross_entropy(black_box(&logits)))
    });
}

fn masks(c: &mut Criterion) {
    let mut seed = 0u64;
    c.bench_function("blockwise mask 8x8 r=0.5", |b| {
        b.iter(|| {
            seed += 1;
            generate_blockwise_mask(8, 8, 0.5, 4, seed)
        })
    });
}

fn train_steps(c: &mut Criterion) {
    let ds = shapes(64);
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for method in TRAIN_STEP_METHODS {
        group.bench_function(method, |b| {
            b.iter_batched(|| trainer(method, 16, &ds), |mut t| t.train_step().expect("step"), BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, oracle, losses, masks, train_steps);
criterion_main!(benches);
