use std::hint::black_box;

use ace_lab::analysis::{enumerate_invariant_projectors, gamma_bound, EnumerationOptions};
use ace_lab::exec::{map_indexed, Mode};
use ace_lab::iteration::{estimate_rate, run, Init, RunConfig};
use ace_lab::problems::{random_problem, EnsembleSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Mode); 2] = [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)];

fn tau_enumeration(c: &mut Criterion) {
    let mut g = c.benchmark_group("tau_enumeration");
    g.sample_size(10);
    for (dim, n) in [(12, 3), (16, 4)] {
        let p = random_problem::<f64>(&EnsembleSpec::new(dim, n, 0.2, 3.0, 1)).unwrap();
        for (name, mode) in MODES {
            g.bench_with_input(BenchmarkId::new(name, format!("N{dim}_n{n}")), &p, |b, p| {
                b.iter(|| enumerate_invariant_projectors(p, EnumerationOptions { mode, ..Default::default() }).unwrap())
            });
        }
    }
    g.finish();
}

fn multi_start_census(c: &mut Criterion) {
    let mut g = c.benchmark_group("multi_start_census");
    g.sample_size(10);
    let p = random_problem::<f64>(&EnsembleSpec::new(16, 3, 0.5, 1.0, 2024)).unwrap();
    let seeds: Vec<u64> = (0..64).collect();
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                map_indexed(mode, &seeds, |_, &s| {
                    run(&p, &RunConfig { init: Init::Random(s), ..Default::default() }).map(|t| t.status).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    let grid: Vec<(f64, u64)> = [0.3, 1.0, 3.0].into_iter().flat_map(|gap| (0..8).map(move |s| (gap, s))).collect();
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                map_indexed(mode, &grid, |_, &(gap, seed)| {
                    let p = random_problem::<f64>(&EnsembleSpec::new(32, 4, gap, 1.0, seed)).unwrap();
                    let tr = run(&p, &RunConfig::default()).unwrap();
                    (estimate_rate(&tr).map(|f| f.rate).ok(), gamma_bound(&p).unwrap().gamma_exact)
                })
            })
        });
    }
    g.finish();
}

fn seed_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("seed_batch");
    let seeds: Vec<u64> = (0..32).collect();
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                map_indexed(mode, &seeds, |_, &s| {
                    black_box(random_problem::<f64>(&EnsembleSpec::new(48, 6, 0.5, 1.0, s)).unwrap().h_norm())
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, tau_enumeration, multi_start_census, sweep, seed_batch);
criterion_main!(benches);
