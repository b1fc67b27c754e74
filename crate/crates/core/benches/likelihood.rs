//! Likelihood and E-step throughput on the global pool versus a single
//! worker. Build with `--no-default-features` to time the sequential
//! fallback instead; both arms then run the same code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mlar::em::e_step;
use mlar::likelihood::loglik_at;
use mlar::{simulate_dataset, ModelSpec, Parameters, QuadratureGrid, ResponseFamily, SimControl};

fn setup(n: usize) -> (ModelSpec, Parameters, mlar::Dataset) {
    let spec = ModelSpec::new(ResponseFamily::OrdinalLogit { categories: 5 }, 2, 2, 21).unwrap();
    let p = Parameters {
        cut: vec![2.0, 0.7, -0.7, -2.0],
        beta: vec![0.5, -0.3],
        sigma: 1.5,
        sigma_eps2: None,
        xi: vec![0.0, 2.0],
        rho: vec![0.8, 0.3],
        pi: vec![0.7, 0.3],
    };
    let data = simulate_dataset(&spec, &p, &SimControl::new(n, 8, 1)).unwrap().data;
    (spec, p, data)
}

fn bench(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let mut g = c.benchmark_group("loglik");
    for n in [500, 2000] {
        let (spec, p, data) = setup(n);
        g.bench_with_input(BenchmarkId::new("global_pool", n), &n, |b, _| {
            b.iter(|| loglik_at(&spec, &data, &p).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("one_thread", n), &n, |b, _| {
            b.iter(|| single.install(|| loglik_at(&spec, &data, &p).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("e_step");
    let (spec, p, data) = setup(2000);
    let grid = QuadratureGrid::new(spec.q, spec.knot_bound, &p.rho).unwrap();
    g.bench_function("global_pool", |b| b.iter(|| e_step(&spec, &data, &p, &grid).unwrap()));
    g.bench_function("one_thread", |b| b.iter(|| single.install(|| e_step(&spec, &data, &p, &grid).unwrap())));
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench
}
criterion_main!(benches);
