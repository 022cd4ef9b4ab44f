//! Sequential vs parallel execution of the data-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Vector3;
use poss_core::amplifier::{AmplifierParams, NoiseModel};
use poss_core::analysis::SearchSynthesizer;
use poss_core::exotic_field::{pseudo_field_mc_oracle, pseudo_field_point, IntegrationConfig};
use poss_core::limits::{
    log_grid, reference_parameters, sweep_lambda, LockinForward, ReferenceEstimate, SweepSettings,
};
use poss_core::source_model::SourceModel;
use poss_core::{Execution, PhysicalConstants};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn field_cfg(execution: Execution) -> IntegrationConfig {
    IntegrationConfig {
        grid_points_per_axis: 32,
        max_grid_points_per_axis: 64,
        target_rel_error: 1e-2,
        execution,
        ..IntegrationConfig::default()
    }
}

fn field_kernels(c: &mut Criterion) {
    let source = SourceModel::reference();
    let consts = PhysicalConstants::default();
    let mut group = c.benchmark_group("field");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = field_cfg(exec);
        group.bench_with_input(BenchmarkId::new("quadrature", name), &cfg, |b, cfg| {
            b.iter(|| {
                pseudo_field_point(&source, &Vector3::zeros(), 0.1, 1.0, cfg, &consts).unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("monte_carlo", name), &cfg, |b, cfg| {
            b.iter(|| {
                pseudo_field_mc_oracle(&source, &Vector3::zeros(), 0.1, 1.0, cfg, &consts).unwrap()
            })
        });
    }
    group.finish();
}

fn record_synthesis(c: &mut Criterion) {
    let source = SourceModel::reference();
    let syn = SearchSynthesizer::with_unit_field(
        &source,
        &AmplifierParams::default(),
        &NoiseModel::default(),
        1.857e4,
        0.1,
        200.0,
    )
    .unwrap();
    let mut group = c.benchmark_group("records");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("synthesize_8x60s", name), |b| {
            b.iter(|| exec.map(8, |i| syn.record(1e-20, 60.0, Some(i as u64)).unwrap()))
        });
    }
    group.finish();
}

fn limit_sweep(c: &mut Criterion) {
    let source = SourceModel::reference();
    let amp = AmplifierParams::default();
    let consts = PhysicalConstants::default();
    let params = reference_parameters(&source, &amp);
    let estimate = ReferenceEstimate {
        mean: 2.1e-22,
        stat_error: 5.9e-22,
        lambda_m: 0.1,
    };
    let grid = log_grid(0.01, 10.0, 8).unwrap();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        let forward = LockinForward::new(&source, &amp, &consts, &field_cfg(exec));
        let settings = SweepSettings {
            execution: exec,
            ..SweepSettings::default()
        };
        group.bench_function(BenchmarkId::new("lambda_8", name), |b| {
            b.iter(|| {
                sweep_lambda(&grid, &estimate, &params, &forward, &settings, &consts).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, field_kernels, record_synthesis, limit_sweep);
criterion_main!(benches);
