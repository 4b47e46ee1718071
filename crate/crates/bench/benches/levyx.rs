use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use levyx_core::limit_model::{perturbation_residual, Quadratic, SigmaVariant};
use levyx_core::limit_sim::{simulate_limit_ensemble, LimitScheme};
use levyx_core::prelimit::{simulate_prelimit_ensemble, uniform_grid};
use levyx_core::scenario::{builtin, Lab};
use levyx_core::stats::ks_two_sample;
use levyx_core::switching::{potential, stationary, SwitchingModel};
use levyx_core::{SimOptions, StreamDomain};

fn lab(name: &str) -> Lab {
    builtin(name).unwrap().lab().unwrap()
}

fn ring(n: usize) -> SwitchingModel {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            row[(i + 1) % n] = 0.7;
            row[(i + n - 1) % n] += 0.3;
            row
        })
        .collect();
    let q = (0..n).map(|i| 1.0 + (i % 5) as f64 * 0.5).collect();
    SwitchingModel::from_rows(q, &rows).unwrap()
}

fn switching(c: &mut Criterion) {
    let mut g = c.benchmark_group("stationary_potential");
    for n in [2, 10, 50] {
        let model = ring(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &model, |b, m| {
            b.iter(|| {
                let sp = stationary(m).unwrap();
                potential(m, &sp).unwrap()
            })
        });
    }
    g.finish();
}

fn prelimit(c: &mut Criterion) {
    let mut g = c.benchmark_group("prelimit_ensemble_1000");
    g.sample_size(10);
    let grid = uniform_grid(1.0, 20);
    for name in ["iid2", "poisson2"] {
        let lab = lab(name);
        for eps in [0.2, 0.1] {
            g.bench_function(BenchmarkId::new(name, eps), |b| {
                b.iter(|| {
                    simulate_prelimit_ensemble(
                        lab.prelimit_setup(),
                        eps,
                        1.0,
                        &grid,
                        &SimOptions::default(),
                        1000,
                        1,
                        StreamDomain::new("bench", 0),
                    )
                    .unwrap()
                })
            });
        }
    }
    g.finish();
}

fn limit(c: &mut Criterion) {
    let lab = lab("poisson2");
    let model = lab.limit(SigmaVariant::FullSource);
    let grid = uniform_grid(1.0, 20);
    c.bench_function("limit_exact_10000", |b| {
        b.iter(|| {
            simulate_limit_ensemble(&model, &LimitScheme::Exact, lab.xi0(), 1.0, &grid, 10_000, 1, StreamDomain::new("bench", 1))
                .unwrap()
        })
    });
}

fn ks(c: &mut Criterion) {
    let lab = lab("driftonly");
    let model = lab.limit(SigmaVariant::FullSource);
    let grid = [1.0];
    let sample = |domain: u64| -> Vec<f64> {
        simulate_limit_ensemble(&model, &LimitScheme::Exact, lab.xi0(), 1.0, &grid, 10_000, 1, StreamDomain::new("bench", domain))
            .unwrap()
            .iter()
            .map(|p| p.grid.coord(0, 0))
            .collect()
    };
    let (a, b) = (sample(2), sample(3));
    c.bench_function("ks_two_sample_10000", |bench| bench.iter(|| ks_two_sample(black_box(&a), black_box(&b)).unwrap()));
}

fn residual(c: &mut Criterion) {
    let lab = lab("iid2");
    let model = lab.limit(SigmaVariant::FullSource);
    let u_grid: Vec<Vec<f64>> = (0..=20).map(|i| vec![-1.0 + 0.1 * i as f64]).collect();
    let eps = [0.4, 0.2, 0.1, 0.05];
    c.bench_function("residual_curve", |b| {
        b.iter(|| perturbation_residual(&model, &Quadratic::square(1), &eps, &u_grid).unwrap())
    });
}

criterion_group!(benches, switching, prelimit, limit, ks, residual);
criterion_main!(benches);
