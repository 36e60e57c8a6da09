use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use ionreadout::baselines::{ml_classify, HmmModel};
use ionreadout::nn::{backward, build_cnn, one_hot, Parameters};
use ionreadout::physics::generate_range;
use ionreadout::{Execution, PhysicsParams};

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn generation(c: &mut Criterion) {
    let params = PhysicsParams::software_preset();
    let mut g = c.benchmark_group("generate_4k_shots");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_range(&params, 0, 4_000, 0.5, black_box(3), exec).unwrap())
        });
    }
    g.finish();
}

fn ml_scoring(c: &mut Criterion) {
    let params = PhysicsParams::software_preset();
    let data = generate_range(&params, 0, 2_000, 0.5, 3, Execution::default()).unwrap();
    let model = HmmModel::from_params(&params).unwrap();
    let mut g = c.benchmark_group("ml_score_2k_shots");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                exec.map_slice(&data.trajectories, |t| ml_classify(&t.counts, &model).state)
            })
        });
    }
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let params = PhysicsParams::software_preset();
    let data = generate_range(&params, 0, 64, 0.5, 3, Execution::default()).unwrap();
    let spec = build_cnn(100).unwrap();
    let weights = Parameters::glorot(&spec, 1);
    let x: Vec<f64> = data
        .trajectories
        .iter()
        .flat_map(|t| t.counts.iter().map(|&k| f64::from(k)))
        .collect();
    let targets: Vec<[f64; 2]> = data.labels().map(one_hot).collect();
    let mut g = c.benchmark_group("cnn_batch64_gradient");
    g.sample_size(20);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| backward(&spec, &weights, black_box(&x), &targets, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, generation, ml_scoring, gradients);
criterion_main!(benches);
