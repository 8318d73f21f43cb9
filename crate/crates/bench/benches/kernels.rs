use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use kslayers_bench::{bench_ansatz, bench_lambda};
use kslayers_core::analysis::{self, FixedPointOptions};
use kslayers_core::bvp::{self, ContinuationOptions};
use kslayers_core::greens::solve_layers;
use kslayers_core::nondegen::sweep_point;
use kslayers_core::specfun::xi_zeta;
use kslayers_core::OuterMode;

fn bessel(c: &mut Criterion) {
    let radii: Vec<f64> = (0..1000).map(|j| 1e-8 * 1e8f64.powf(j as f64 / 999.0)).collect();
    c.bench_function("xi_zeta/1000 radii", |b| b.iter(|| radii.iter().map(|r| xi_zeta(*r).unwrap().wronskian()).sum::<f64>()));
}

fn layers(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_layers");
    for k in [1, 3, 6] {
        g.bench_with_input(BenchmarkId::new("neumann", k), &k, |b, &k| b.iter(|| solve_layers(k, black_box(1e-3), OuterMode::Neumann).unwrap()));
    }
    g.finish();
    c.bench_function("sweep_point/k=4", |b| b.iter(|| sweep_point(4, black_box(1e-3)).unwrap()));
}

fn ansatz(c: &mut Criterion) {
    c.bench_function("build_ansatz/4000", |b| b.iter(|| bench_ansatz(4000)));
}

fn solvers(c: &mut Criterion) {
    let a = bench_ansatz(4000);
    let lambda = bench_lambda();
    let mut g = c.benchmark_group("solvers");
    g.sample_size(20);
    g.bench_function("newton/4000", |b| b.iter(|| bvp::solve_bvp(lambda, &a.profile).unwrap()));
    g.bench_function("fixed_point/4000", |b| b.iter(|| analysis::fixed_point(&a.profile, lambda, FixedPointOptions::default()).unwrap()));
    g.bench_function("branch/20 steps", |b| b.iter(|| bvp::bifurcation_branch(2, 1, 20, &ContinuationOptions::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, bessel, layers, ansatz, solvers);
criterion_main!(benches);
