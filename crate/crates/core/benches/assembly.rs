//! One worker against the full pool for the element loops. Build with
//! `--no-default-features` to time the plain iterator fallback instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nlcd::estimator::{Estimator, FriedrichsChoice};
use nlcd::fem::{energy_matrix, FeSpace};
use nlcd::mesh::TriMesh;
use nlcd::par::{is_parallel, with_threads};
use nlcd::stepper::{run, TimePartition};
use nlcd::verification::ManufacturedCase;

fn pools() -> Vec<(&'static str, usize)> {
    if is_parallel() {
        vec![("sequential", 1), ("parallel", 0)]
    } else {
        vec![("fallback", 1)]
    }
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("energy_matrix");
    for degree in [1, 2] {
        let space = FeSpace::new(TriMesh::unit_square(64).unwrap(), degree).unwrap();
        for (name, threads) in pools() {
            g.bench_with_input(BenchmarkId::new(name, format!("P{degree}")), &space, |b, s| {
                b.iter(|| with_threads(threads, || black_box(energy_matrix(s, 0.1, 1.0))))
            });
        }
    }
    g.finish();
}

fn time_step(c: &mut Criterion) {
    let case = ManufacturedCase::nonlinear();
    let scheme = case.scheme();
    let mesh = TriMesh::unit_square(32).unwrap();
    let times = TimePartition::uniform(0.01, 1).unwrap();
    let mut g = c.benchmark_group("nonlinear_step");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_function(name, |b| {
            b.iter(|| with_threads(threads, || black_box(run(&scheme, &mesh, &times).unwrap())))
        });
    }
    g.finish();
}

fn estimator(c: &mut Criterion) {
    let case = ManufacturedCase::robustness(1e-2);
    let scheme = case.scheme();
    let mesh = TriMesh::unit_square(32).unwrap();
    let traj = run(&scheme, &mesh, &TimePartition::uniform(0.01, 2).unwrap()).unwrap();
    let mut g = c.benchmark_group("estimator");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_function(name, |b| {
            b.iter(|| {
                with_threads(threads, || {
                    black_box(Estimator::new(&scheme, &traj, FriedrichsChoice::Diameter).estimate(&traj).unwrap())
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, assembly, time_step, estimator);
criterion_main!(benches);
