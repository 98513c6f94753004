use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ltcmh::hashlearn::{grad_meta_x, loss2, update_b};
use ltcmh::hsic::hsic_grad;
use ltcmh::retrieval::mean_average_precision;
use ltcmh_bench::{codes, labels, rng, similarity, uniform};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 128, 256] {
        let mut r = rng(1);
        let a = uniform(n, n, &mut r);
        let b = uniform(n, n, &mut r);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn hsic(c: &mut Criterion) {
    let mut group = c.benchmark_group("hsic_grad");
    for n in [32, 128] {
        let mut r = rng(2);
        let px = uniform(16, n, &mut r);
        let py = uniform(16, n, &mut r);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| hsic_grad(black_box(&px), black_box(&py)).unwrap())
        });
    }
    group.finish();
}

fn hash_objective(c: &mut Criterion) {
    let n = 512;
    let mut r = rng(3);
    let mx = uniform(16, n, &mut r);
    let my = uniform(16, n, &mut r);
    let l = labels(n, 12, &mut r);
    let s = similarity(&l, &l);
    let b = update_b(&mx, &my).unwrap().to_matrix();
    c.bench_function("loss2 n=512 k=16", |bench| {
        bench.iter(|| loss2(black_box(&mx), black_box(&my), &s, &b, 1.0, 1.0).unwrap())
    });
    c.bench_function("grad_meta_x n=512 k=16", |bench| {
        bench.iter(|| grad_meta_x(black_box(&mx), black_box(&my), &s, &b, 1.0, 1.0).unwrap())
    });
    c.bench_function("update_b n=512 k=16", |bench| bench.iter(|| update_b(black_box(&mx), black_box(&my)).unwrap()));
}

fn map(c: &mut Criterion) {
    let mut r = rng(4);
    let base = codes(16, 2000, &mut r);
    let query = codes(16, 100, &mut r);
    let bl = labels(2000, 12, &mut r);
    let ql = labels(100, 12, &mut r);
    c.bench_function("map 100x2000 k=16", |bench| {
        bench.iter(|| mean_average_precision(black_box(&query), &ql, black_box(&base), &bl, None).unwrap())
    });
}

criterion_group!(benches, matmul, hsic, hash_objective, map);
criterion_main!(benches);
