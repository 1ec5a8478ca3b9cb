use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use smoothattn::model::{forward_teacher_forced, predict, AttentionMode};
use smoothattn::training::loss_gradient;
use smoothattn::{ModelParams, TrainConfig, Variant};
use smoothattn_bench::{double_merge, widths};

fn forward(c: &mut Criterion) {
    let sample = double_merge(3);
    let scene = &sample.scene;
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for (name, config) in widths() {
        let params = ModelParams::init(&config, 1);
        group.bench_function(BenchmarkId::new("teacher_forced", name), |b| {
            b.iter(|| forward_teacher_forced(scene, &params, &config).unwrap())
        });
        group.bench_function(BenchmarkId::new("predict", name), |b| {
            b.iter(|| predict(scene, scene.horizon(), &params, &config, AttentionMode::Learned).unwrap())
        });
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let sample = double_merge(3);
    let mut group = c.benchmark_group("loss_gradient");
    group.sample_size(10);
    for (name, config) in widths() {
        let params = ModelParams::init(&config, 1);
        for variant in [Variant::Ours, Variant::SAttn] {
            let cfg = TrainConfig {
                variant,
                ..TrainConfig::default()
            };
            group.bench_function(BenchmarkId::new(variant.as_str(), name), |b| {
                b.iter(|| loss_gradient(&sample, &params, &config, &cfg, 0).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, forward, gradient);
criterion_main!(benches);
