use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use windrom::bd::{self, InnerProduct, Truncation};
use windrom::kle::{self, KleConfig};
use windrom::synth;
use windrom::PipelineConfig;
use windrom_bench::ensemble;

fn bd_decomposition(c: &mut Criterion) {
    let ens = ensemble(1, 28, 144, 10, 120);
    let mut group = c.benchmark_group("bd");
    group.sample_size(10);
    for kind in [InnerProduct::MeanProduct, InnerProduct::SecondMoment] {
        group.bench_function(format!("type{}", kind.index()), |b| {
            b.iter_batched(
                || bd::remove_mean(ens.clone()),
                |fluct| bd::decompose(&fluct, kind, Truncation::Energy(0.9)).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn kle_snapshot_solve(c: &mut Criterion) {
    let fluct = bd::remove_mean(ensemble(2, 28, 144, 20, 300));
    let (model, _) =
        bd::decompose(&fluct, InnerProduct::SecondMoment, Truncation::Fixed(3)).unwrap();
    let weights = vec![fluct.grid.cell_weight(); fluct.points()];
    let config = KleConfig::default();
    let mut group = c.benchmark_group("kle");
    group.sample_size(10);
    group.bench_function("snapshot_3_modes_6000_points", |b| {
        b.iter(|| kle::decompose(black_box(&model.modes), &weights, &config).unwrap())
    });
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let cfg = PipelineConfig {
        inner_product: InnerProduct::SecondMoment,
        ..PipelineConfig::default()
    };
    let d = windrom::pipeline::decompose_ensemble(ensemble(3, 28, 144, 10, 120), &cfg).unwrap();
    let mut group = c.benchmark_group("synth");
    group.sample_size(20);
    group.bench_function("ensemble_28", |b| {
        b.iter(|| synth::generate_ensemble(&d.model, 28, black_box(7)))
    });
    group.finish();
}

criterion_group!(benches, bd_decomposition, kle_snapshot_solve, synthesis);
criterion_main!(benches);
