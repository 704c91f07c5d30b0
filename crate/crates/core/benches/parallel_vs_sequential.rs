//! The same workloads on a one-thread pool and on the default pool.
//!
//! Results are bit-identical either way; only the wall time differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};
use std::hint::black_box;

use structkan::data::SampleMatrix;
use structkan::experiments::{decomposability_score, parse_expr, ExperimentSpec, Partition, Z_MATCHED, Z_MISMATCHED};
use structkan::nodefuncs::{fit_ensemble, BoostParams};
use structkan::topology::generate::random_smooth;
use structkan::training::{backward, forward, init_smooth_params, mse_gradient, train_boosted, EngineConfig, Parameters};

fn pools() -> Vec<(&'static str, ThreadPool)> {
    vec![
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn columns(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cols).map(|_| (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn ensemble_predict(c: &mut Criterion) {
    let cols = columns(10_000, 2, 1);
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let y: Vec<f64> = (0..10_000).map(|r| cols[0][r] * cols[0][r] * cols[1][r]).collect();
    let params = BoostParams {
        rounds: 200,
        ..BoostParams::default()
    };
    let (ensemble, _) = fit_ensemble(&refs, &y, params).unwrap();
    let mut group = c.benchmark_group("ensemble_predict_10k");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| black_box(ensemble.predict(&refs).unwrap())))
        });
    }
    group.finish();
}

fn smooth_gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let topology = random_smooth(4, 24, &mut rng).into_valid().unwrap();
    let params = init_smooth_params(&topology, Parameters::empty(24), 2).unwrap();
    let x = SampleMatrix::from_columns(columns(8192, 4, 3)).unwrap();
    let y: Vec<f64> = (0..8192).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut group = c.benchmark_group("smooth_forward_backward_8k");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| {
                b.iter(|| {
                    let cache = forward(&topology, &params, &x).unwrap();
                    let (_, dl) = mse_gradient(cache.predictions(), &y);
                    black_box(backward(&topology, &params, &cache, &dl).unwrap())
                })
            })
        });
    }
    group.finish();
}

fn boosted_rounds(c: &mut Criterion) {
    let mut spec = ExperimentSpec::fig1_default(Z_MATCHED, 0).unwrap();
    spec.train_samples = 2000;
    spec.val_samples = 500;
    let (train, val) = spec.datasets().unwrap();
    let topology = spec.topology.clone().into_valid().unwrap();
    let config = EngineConfig {
        rounds: 10,
        ..EngineConfig::boosted()
    };
    let mut group = c.benchmark_group("boosted_10_rounds_2k");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| black_box(train_boosted(&topology, &train, &val, &config).unwrap())))
        });
    }
    group.finish();
}

fn decomposability(c: &mut Criterion) {
    let expr = parse_expr(Z_MISMATCHED).unwrap();
    let partition = Partition::parse("x1,x2|y1,y2", &expr).unwrap();
    let mut group = c.benchmark_group("decomposability_256_probes");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| black_box(decomposability_score(&expr, &partition, 256, 0).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, ensemble_predict, smooth_gradient, boosted_rounds, decomposability);
criterion_main!(benches);
