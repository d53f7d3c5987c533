//! Default rayon pool against a one-thread pool on the data-parallel loops:
//! Monte Carlo replicates, bootstrap replicates, restarts, the score step and
//! the tau levels of a chart. Build with `--no-default-features` to time the
//! sequential fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use growthpath::contour::{build_chart, default_tau_grid};
use growthpath::covariate::{bootstrap_test, MuSpec, TestTarget};
use growthpath::rpca::{fit_component, score_step};
use growthpath::simharness::{generate, run_estimation, GeneratorSpec, StudyOptions};
use growthpath::{build_basis, BasisSystem, FitConfig, SparseDataset, Subject};
use nalgebra::DMatrix;
use rayon::ThreadPool;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn setting(n: usize) -> (SparseDataset, BasisSystem) {
    let spec = GeneratorSpec { n_subjects: n, ..GeneratorSpec::empirical_setting().unwrap() };
    let (data, _) = generate(&spec).unwrap();
    let basis = build_basis(data.domain(), 2, 2, &data.pooled_times()).unwrap();
    (data, basis)
}

fn replicates(c: &mut Criterion) {
    let spec = GeneratorSpec { n_subjects: 200, ..GeneratorSpec::normal_setting().unwrap() };
    let mut group = c.benchmark_group("monte_carlo_replicates");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, 8), |b| {
            b.iter(|| pool.install(|| run_estimation(&spec, &StudyOptions::default(), 8, "bench").unwrap()))
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let (data, basis) = setting(150);
    let with_x = SparseDataset::new(
        data.subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| Subject { covariate: Some((i % 11) as f64), ..s.clone() })
            .collect(),
        Some(data.domain()),
    )
    .unwrap();
    let cfg = FitConfig { max_components: 2, ..FitConfig::default() };
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, 100), |b| {
            b.iter(|| {
                pool.install(|| {
                    bootstrap_test(&with_x, &basis, MuSpec::Polynomial { degree: 1 }, &cfg, TestTarget::Mean, 100)
                        .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn restarts(c: &mut Criterion) {
    let (data, basis) = setting(500);
    let centered = growthpath::center(&data, &growthpath::fit_mean(&data, &basis).unwrap()).unwrap();
    let cfg = FitConfig { restarts: 8, ..FitConfig::default() };
    let mut group = c.benchmark_group("restarts");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, 8), |b| {
            b.iter(|| pool.install(|| fit_component(&centered, &basis, &[], &cfg).unwrap()))
        });
    }
    group.finish();
}

fn score_steps(c: &mut Criterion) {
    let (data, basis) = setting(20_000);
    let alpha = basis.metric().standardize(&nalgebra::DVector::from_element(basis.dim(), 1.0)).unwrap();
    let mut group = c.benchmark_group("score_step");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, data.len()), |b| {
            b.iter(|| pool.install(|| score_step(&data, &basis, &alpha).unwrap()))
        });
    }
    group.finish();
}

fn tau_levels(c: &mut Criterion) {
    let (data, basis) = setting(2000);
    let cfg = FitConfig { max_components: 2, r2_target: 1.0, ..FitConfig::default() };
    let model = growthpath::fit(&data, &basis, &cfg).unwrap();
    let scores: DMatrix<f64> = model.scores.columns(0, 2).into_owned();
    let grid = default_tau_grid();
    let mut group = c.benchmark_group("tau_levels");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new(name, grid.len()), |b| {
            b.iter(|| pool.install(|| build_chart(&scores, &grid, 3).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, replicates, bootstrap, restarts, score_steps, tau_levels);
criterion_main!(benches);
