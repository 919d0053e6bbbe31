//! Whole-step cost of the selective-sampling loop versus the random
//! baseline: the gap is the price of the pool forward pass plus scoring.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use marginlab_core::data::{gen_blobs, split_shuffle, Split};
use marginlab_core::model::{init_model, Model};
use marginlab_core::objective::{AlphaSchedule, LossMode};
use marginlab_core::selection::{PolicyKind, SelectionPolicy};
use marginlab_core::trainer::{train, LrSchedule, TrainConfig};

fn config(kind: PolicyKind, steps: u64) -> TrainConfig {
    TrainConfig {
        policy: SelectionPolicy { kind, big_batch: 320, small_batch: 32 },
        lr: LrSchedule::constant(0.1),
        alpha: AlphaSchedule::Constant { value: 1e-5 },
        mmr_enabled: true,
        mmr_feature_path: false,
        loss_mode: LossMode::Ce,
        total_steps: steps,
        eval_interval: steps,
        seed: 3,
        momentum: 0.0,
        target_accuracy: None,
        stop_at_target: false,
        checkpoint_interval: None,
    }
}

fn fixture() -> (Split, Model) {
    let data = gen_blobs(10, 20, 200, 4.0, 0.8, 9).unwrap();
    let split = split_shuffle(&data, (1.0, 0.0, 0.0), 4).unwrap();
    let model = init_model(&[20, 32], 10, 5).unwrap();
    (split, model)
}

fn bench_train_steps(c: &mut Criterion) {
    let (split, model) = fixture();
    let mut group = c.benchmark_group("train_50_steps");
    group.sample_size(20);
    for kind in [PolicyKind::Random, PolicyKind::Mms, PolicyKind::HardNegative] {
        group.bench_function(format!("{kind}"), |b| {
            b.iter(|| {
                train(black_box(&config(kind, 50)), black_box(&split), model.clone()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_train_steps);
criterion_main!(benches);
