use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scaleshape::linalg::BunchKaufman;
use scaleshape::{eval_df, eval_f, lse_softmax_w, solve, DualPoint, SolverConfig};
use scaleshape_bench::{dual_y, exponent_vector, small_random, ueg};

fn log_sum_exp(c: &mut Criterion) {
    let mut group = c.benchmark_group("lse_softmax");
    for n in [64, 500, 4096] {
        let (u, r) = exponent_vector(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| lse_softmax_w(black_box(&u), black_box(&r)).unwrap())
        });
    }
    group.finish();
}

fn newton_system(c: &mut Criterion) {
    let problem = ueg(201, 500, 10.0);
    let z = DualPoint::new(dual_y(problem.m(), 2), 10.0).unwrap();
    c.bench_function("eval_f/ueg_201x500", |b| b.iter(|| eval_f(black_box(&z), &problem).unwrap()));
    c.bench_function("eval_df/ueg_201x500", |b| b.iter(|| eval_df(black_box(&z), &problem).unwrap()));
    let df = eval_df(&z, &problem).unwrap().df;
    let rhs = eval_f(&z, &problem).unwrap().stacked();
    c.bench_function("bunch_kaufman/factor_solve_202", |b| {
        b.iter(|| BunchKaufman::factor(black_box(&df)).unwrap().solve(&rhs))
    });
}

fn full_solves(c: &mut Criterion) {
    let cfg = SolverConfig::default();
    let small = small_random(3);
    c.bench_function("solve/random_5x8", |b| b.iter(|| solve(black_box(&small), &cfg, &DualPoint::origin(5)).unwrap()));
    let mut group = c.benchmark_group("solve/ueg_41x80");
    group.sample_size(20);
    for z in [1.0, 100.0] {
        let problem = ueg(41, 80, z);
        group.bench_with_input(BenchmarkId::from_parameter(z), &problem, |b, p| {
            b.iter(|| solve(black_box(p), &cfg, &DualPoint::origin(p.m())).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, log_sum_exp, newton_system, full_solves);
criterion_main!(benches);
