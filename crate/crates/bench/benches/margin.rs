//! Margin scoring and selection hot paths: these run once per training step
//! on the full candidate pool, so their cost is the selective-sampling
//! overhead over plain SGD.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use marginlab_core::margin::score_batch;
use marginlab_core::model::LinearHead;
use marginlab_core::numeric::{Matrix, Rng};
use marginlab_core::selection::{select_entropy, select_mms};

fn pool(rng: &mut Rng, rows: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    for v in m.data_mut() {
        *v = rng.uniform_in(-3.0, 3.0);
    }
    m
}

fn head(rng: &mut Rng, classes: usize, dim: usize) -> LinearHead {
    let mut w = Matrix::zeros(classes, dim);
    for v in w.data_mut() {
        *v = rng.uniform_in(-1.0, 1.0);
    }
    LinearHead::new(w, vec![0.0; classes]).unwrap()
}

fn bench_score_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_batch");
    let mut rng = Rng::new(1);
    for &(pool_size, classes, dim) in &[(320usize, 10usize, 20usize), (640, 100, 64)] {
        let features = pool(&mut rng, pool_size, dim);
        let h = head(&mut rng, classes, dim);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("B{pool_size}_n{classes}_d{dim}")),
            &(h, features),
            |b, (h, features)| b.iter(|| score_batch(black_box(h), black_box(features), None)),
        );
    }
    group.finish();
}

fn bench_selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("selection");
    let mut rng = Rng::new(2);
    let features = pool(&mut rng, 640, 20);
    let h = head(&mut rng, 10, 20);
    let scores = score_batch(&h, &features, None).unwrap();
    group.bench_function("select_mms_640_to_64", |b| {
        b.iter(|| select_mms(black_box(&scores), 64))
    });
    let raw = h.scores(&features).unwrap();
    group.bench_function("select_entropy_640_to_64", |b| {
        b.iter(|| select_entropy(black_box(&raw), 64))
    });
    group.finish();
}

criterion_group!(benches, bench_score_batch, bench_selection);
criterion_main!(benches);
