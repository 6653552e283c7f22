use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cityeq::{SolverConfig, WageVector};
use cityeq_bench::{line_city, tele_line, tele_square};

fn residual(c: &mut Criterion) {
    let mut g = c.benchmark_group("residual");
    for nodes in [401, 1601, 6401] {
        let eco = line_city(0.6, nodes);
        let w = WageVector::new(vec![15.7, 15.9, 15.2]).unwrap();
        g.bench_with_input(BenchmarkId::new("line", nodes), &w, |b, w| {
            b.iter(|| eco.assemble_residual(black_box(w)).unwrap())
        });
    }
    let eco = tele_square(0.5, 101);
    let w = vec![15.0, 14.0, 15.5, 14.0, 14.8, 14.0];
    g.bench_function("tele_square_101", |b| b.iter(|| eco.assemble_residual(black_box(&w)).unwrap()));
    g.finish();
}

fn solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    for theta in [0.0, 0.6, 0.99] {
        let eco = line_city(theta, 401);
        g.bench_with_input(BenchmarkId::new("line_401", theta), &eco, |b, eco| {
            b.iter(|| eco.solve(&SolverConfig::default()).unwrap())
        });
    }
    let eco = tele_line(0.6, 401);
    g.bench_function("tele_line_401", |b| b.iter(|| eco.solve(&SolverConfig::default()).unwrap()));
    g.sample_size(10);
    let eco = tele_square(0.66, 101);
    g.bench_function("tele_square_101", |b| b.iter(|| eco.solve(&SolverConfig::default()).unwrap()));
    g.finish();
}

fn fixed_point(c: &mut Criterion) {
    let eco = line_city(0.004, 401);
    c.bench_function("fixed_point/line_401", |b| {
        b.iter(|| eco.solve_by_fixed_point(&Default::default()).unwrap())
    });
}

criterion_group!(benches, residual, solve, fixed_point);
criterion_main!(benches);
