//! Sequential versus rayon execution of the Monte-Carlo hot paths.
//!
//! Without the `parallel` feature both variants run sequentially, which
//! gives the dispatch overhead as a baseline.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lcrl::control::optimal_policy;
use lcrl::learn::run_ensemble_with;
use lcrl::sde::batch_stats;
use lcrl::stats::mc_cost_with;
use lcrl::{presets, Execution};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn batch_statistics(c: &mut Criterion) {
    let inst = presets::paper_lq3d().instance();
    let dt = inst.horizon / 100.0;
    let policy = optimal_policy(&inst, dt).unwrap();
    let mut group = c.benchmark_group("batch_stats");
    for m in [64, 1024] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, m), &m, |b, &m| {
                b.iter(|| batch_stats(&inst, &policy, dt, black_box(m), 1, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn monte_carlo_cost(c: &mut Criterion) {
    let inst = presets::paper_lq3d().instance();
    let dt = inst.horizon / 100.0;
    let policy = optimal_policy(&inst, dt).unwrap();
    let mut group = c.benchmark_group("mc_cost");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| mc_cost_with(&inst, &policy, dt, black_box(2000), 2, exec).unwrap())
        });
    }
    group.finish();
}

fn learning_ensemble(c: &mut Criterion) {
    let mut config = presets::paper_lq3d().gls_config(3).unwrap();
    config.num_updates = 6;
    let mut group = c.benchmark_group("gls_ensemble");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| run_ensemble_with(&config, black_box(4), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_statistics, monte_carlo_cost, learning_ensemble);
criterion_main!(benches);
