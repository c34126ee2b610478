use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ipde_core::forward::{simulate, TimeGrid};
use ipde_core::par;
use ipde_core::pide::{self, SpatialGrid};
use ipde_core::problem::catalog;
use ipde_core::rbsde::solve_reflected;
use ipde_core::regression::BasisFamily;

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn paths_and_regression(c: &mut Criterion) {
    let spec = catalog("INFINITE_ACTIVITY_PUT", &BTreeMap::new()).unwrap();
    let m = spec.levy.truncate(32).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let basis = BasisFamily::default();

    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for (name, seq) in MODES {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::new(name, 20_000), |b| {
            b.iter(|| simulate(&spec, &m, &grid, &[1.0], 20_000, 1).unwrap())
        });
    }
    g.finish();

    par::set_sequential(false);
    let bundle = simulate(&spec, &m, &grid, &[1.0], 20_000, 1).unwrap();
    let mut g = c.benchmark_group("solve_reflected");
    g.sample_size(10);
    for (name, seq) in MODES {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::new(name, 20_000), |b| {
            b.iter(|| solve_reflected(&spec, &bundle, &m, &basis).unwrap())
        });
    }
    g.finish();
    par::set_sequential(false);
}

fn grid_oracle(c: &mut Criterion) {
    let spec = catalog("INFINITE_ACTIVITY_PUT", &BTreeMap::new()).unwrap();
    let m = spec.levy.truncate(32).unwrap();
    let x = SpatialGrid::new(0.0, 3.0, 600).unwrap();
    let t = TimeGrid::new(0.0, 1.0, 600).unwrap();
    let mut g = c.benchmark_group("pide_solve");
    g.sample_size(10);
    for (name, seq) in MODES {
        par::set_sequential(seq);
        g.bench_function(BenchmarkId::new(name, 600), |b| {
            b.iter(|| pide::solve(&spec, &m, &x, &t).unwrap())
        });
    }
    g.finish();
    par::set_sequential(false);
}

criterion_group!(benches, paths_and_regression, grid_oracle);
criterion_main!(benches);
