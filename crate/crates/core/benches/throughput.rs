//! Parallel vs sequential throughput of the hot paths.
//!
//! Each group runs the same workload with `par::set_enabled(true)` and
//! `par::set_enabled(false)`. Build with `--no-default-features` to measure
//! the binary without rayon at all.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asrf::metrics::F1Averaging;
use asrf::par;
use asrf::refine::RefineConfig;
use asrf::synth::{generate_synthetic_dataset, SynthConfig};
use asrf::tcn::{conv1d_forward, ConvSpec};
use asrf::train::{evaluate_dataset, EvalMode};
use asrf::{AsrfModel, Matrix, ModelConfig, VideoSample};

const PATHS: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("dilated_conv");
    let spec = ConvSpec::new(64, 64, 3, 4).unwrap();
    let w = random_matrix(1, spec.weight_len(), 1).into_vec();
    let b = vec![0.0f32; 64];
    for t in [512, 4096] {
        let x = random_matrix(t, 64, 2);
        group.throughput(Throughput::Elements(t as u64));
        for (name, on) in PATHS {
            par::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(name, t), &x, |bench, x| {
                bench.iter(|| conv1d_forward(black_box(x), &spec, &w, &b).unwrap())
            });
        }
    }
    par::set_enabled(true);
    group.finish();
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("model_forward");
    group.sample_size(20);
    let model = AsrfModel::<f32>::new(ModelConfig::new(32, 10), 3).unwrap();
    let x = random_matrix(1024, 32, 4);
    group.throughput(Throughput::Elements(1024));
    for (name, on) in PATHS {
        par::set_enabled(on);
        group.bench_function(name, |bench| {
            bench.iter(|| model.predict(black_box(&x)).unwrap())
        });
    }
    par::set_enabled(true);
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("dataset_eval");
    group.sample_size(10);
    let synth = SynthConfig {
        num_videos: 16,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic_dataset(&synth).unwrap().dataset;
    let videos: Vec<&VideoSample> = ds.videos.iter().collect();
    let cfg = ModelConfig {
        channels: 32,
        layers: 6,
        ..ModelConfig::new(ds.feature_dim(), ds.num_classes())
    };
    let model = AsrfModel::<f32>::new(cfg, 5).unwrap();
    let refine = RefineConfig::default();
    for (name, on) in PATHS {
        par::set_enabled(on);
        group.bench_function(name, |bench| {
            bench.iter(|| {
                evaluate_dataset(
                    &model,
                    &videos,
                    &refine,
                    EvalMode::Refined,
                    F1Averaging::Global,
                )
                .unwrap()
            })
        });
    }
    par::set_enabled(true);
    group.finish();
}

criterion_group!(benches, conv, forward, evaluation);
criterion_main!(benches);
