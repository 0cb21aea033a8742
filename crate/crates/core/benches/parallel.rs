//! Sequential vs. rayon execution of the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pulsestream::certificates::{build_certificate_1d, equispaced_nodes, minimal_separation_search, verify_certificate_1d, SearchOptions};
use pulsestream::experiments::{run_sweep, ExperimentConfig};
use pulsestream::kernels::Kernel;
use pulsestream::par::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, execution) in MODES {
        let cfg = ExperimentConfig {
            n: 50,
            window: [-0.5, 0.5],
            deltas: vec![0.0, 10.0],
            trials: 4,
            spikes: 4,
            execution,
            ..ExperimentConfig::sweep()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| b.iter(|| run_sweep(black_box(cfg)).unwrap()));
    }
    group.finish();
}

fn certificate_verification(c: &mut Criterion) {
    let kernel = Kernel::cauchy(0.1).unwrap();
    let cert = build_certificate_1d(&kernel, &equispaced_nodes(10, 2.0, 0.1)).unwrap();
    let mut group = c.benchmark_group("verify_certificate_1d");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| verify_certificate_1d(black_box(&cert), 200, 10.0, exec).unwrap())
        });
    }
    group.finish();
}

fn separation_search(c: &mut Criterion) {
    let kernel = Kernel::gaussian(0.1).unwrap();
    let opts = SearchOptions { counts: (2, 6), ..SearchOptions::default() };
    let mut group = c.benchmark_group("minimal_separation_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| minimal_separation_search(black_box(&kernel), &opts, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, certificate_verification, separation_search);
criterion_main!(benches);
