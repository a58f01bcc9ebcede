//! Criterion benches for the data-parallel hot paths. Build once with the
//! default `parallel` feature and once with `--no-default-features`; the
//! benchmark names carry the mode so both runs land side by side under
//! target/criterion for comparison.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use cim_core::catalog::{catalog_entry, forward_sample, reference_params};
use cim_core::dimension::{regular_dimension, DimensionOptions};
use cim_core::em::{e_step, em_fit, EmOptions, FitMode, Init};
use cim_core::model::DirichletPrior;
use cim_core::study::{run_study, StudyConfig};

const MODE: &str = if cfg!(feature = "parallel") {
    "parallel"
} else {
    "sequential"
};

fn bench_e_step(c: &mut Criterion) {
    let entry = catalog_entry("F4").unwrap();
    let params = reference_params(&entry, 7);
    let data = forward_sample(&entry.structure, &params, 20_000, 11).unwrap();
    c.bench_function(&format!("e_step/{}/f4_n20000", MODE), |b| {
        b.iter(|| e_step(&entry.structure, &params, &data).unwrap())
    });
}

fn bench_em_fit(c: &mut Criterion) {
    let entry = catalog_entry("F3").unwrap();
    let gen = reference_params(&entry, 3);
    let data = forward_sample(&entry.structure, &gen, 1600, 5).unwrap();
    let prior = DirichletPrior::unit(&entry.structure);
    let opts = EmOptions {
        mode: FitMode::Map,
        tol: 1e-6,
        max_iter: 500,
        restarts: 8,
        seed: 21,
        init: Init::Random,
    };
    c.bench_function(&format!("em_fit/{}/f3_n1600_r8", MODE), |b| {
        b.iter_batched(
            || data.clone(),
            |d| em_fit(&entry.structure, &d, &prior, &opts).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn bench_dimension(c: &mut Criterion) {
    let entry = catalog_entry("F4").unwrap();
    let opts = DimensionOptions {
        n_points: 10,
        seed: 1,
        ..Default::default()
    };
    c.bench_function(&format!("regular_dimension/{}/f4_10pts", MODE), |b| {
        b.iter(|| regular_dimension("F4", &entry.structure, None, &opts).unwrap())
    });
}

fn bench_study(c: &mut Criterion) {
    let config = StudyConfig {
        generating: vec!["F1".into(), "F3".into()],
        candidates: vec!["F1".into(), "F3".into(), "F5".into()],
        segment_sizes: vec![100, 200],
        total_n: 200,
        seed: 17,
        em_restarts: 3,
        dim_points: 3,
        ..StudyConfig::default()
    };
    let mut group = c.benchmark_group("study");
    group.sample_size(10);
    group.bench_function(&format!("{}/2gen_2seg_3cand", MODE), |b| {
        b.iter(|| run_study(&config).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_e_step,
    bench_em_fit,
    bench_dimension,
    bench_study
);
criterion_main!(benches);
