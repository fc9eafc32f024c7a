use criterion::{criterion_group, criterion_main, Criterion};
use shmm::rng::stream_rng;
use shmm::spectral::{population_moments, recover, FeatureMap};
use shmm::{em_iterate, forward_backward, InitialMode};
use shmm_bench::study_fixture;

fn smoothing(c: &mut Criterion) {
    let (model, obs) = study_fixture(20_000);
    c.bench_function("forward_backward n=20000 K=2", |b| {
        b.iter(|| forward_backward(&model, &obs).unwrap())
    });
    c.bench_function("em_iterate n=20000 K=2", |b| {
        b.iter(|| em_iterate(&model, &obs, InitialMode::Free).unwrap())
    });
}

fn spectral(c: &mut Criterion) {
    let (model, _) = study_fixture(1);
    let features = FeatureMap::exponential(vec![0.1, 0.3, 0.6, 1.0]).unwrap();
    let sets: Vec<_> = (1..=model.dims.period)
        .map(|t| population_moments(&model, t, &features).unwrap())
        .collect();
    c.bench_function("spectral recover T=365 K=2", |b| {
        b.iter(|| recover(&sets, 2, &mut stream_rng(0, 0)).unwrap())
    });
}

criterion_group!(benches, smoothing, spectral);
criterion_main!(benches);
