//! Partitioned vs naive pixel-loss evaluation on a 64x64 image with a
//! dense multi-scale proposal set.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use regseg_bench::loss_fixture;
use regseg_core::losses::{pixel_loss, pixel_loss_partitioned};
use regseg_core::r2p::{r2p_backward, r2p_forward};

fn bench_loss_paths(c: &mut Criterion) {
    let fx = loss_fixture(7);
    let mut group = c.benchmark_group("pixel_loss_64x64");

    group.bench_function("naive_per_pixel", |b| {
        b.iter(|| {
            let pix = r2p_forward(black_box(&fx.scores), &fx.regions).unwrap();
            let loss = pixel_loss(&pix, &fx.gt, &fx.weights).unwrap();
            let grads = r2p_backward(&loss.grad, &pix.winner, fx.regions.len()).unwrap();
            black_box((loss.value, grads))
        })
    });

    group.bench_function("partitioned", |b| {
        b.iter(|| {
            let loss =
                pixel_loss_partitioned(black_box(&fx.scores), &fx.regions, &fx.partition, &fx.weights)
                    .unwrap();
            black_box((loss.value, loss.grad))
        })
    });

    group.finish();
}

criterion_group!(benches, bench_loss_paths);
criterion_main!(benches);
