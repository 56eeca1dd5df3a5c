use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use twics_core::estimators::EstimandLabel;
use twics_core::population::{AcceptanceModel, OutcomeModel, PopulationSpec};
use twics_core::scenario::{preset, run_scenario_with, ScenarioConfig};
use twics_core::Execution;

const MODES: [(&str, Execution); 2] = [("serial", Execution::Serial), ("parallel", Execution::Parallel)];

fn scenario_replications(c: &mut Criterion) {
    let pop = PopulationSpec {
        covariates: vec![],
        outcome: OutcomeModel::continuous(0.0, 0.5, 1.0),
        acceptance: AcceptanceModel::constant(0.75),
        biomarker: None,
    };
    let mut cfg = ScenarioConfig::minimal(pop, 400, 300);
    cfg.replications = 64;
    cfg.analyses = vec![EstimandLabel::AceOffered, EstimandLabel::CaceWald, EstimandLabel::Cace2sri];

    let mut group = c.benchmark_group("scenario_64_reps");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| run_scenario_with(&cfg, mode).unwrap())
        });
    }
    group.finish();
}

fn preset_replications(c: &mut Criterion) {
    let mut cfg = preset("vertical").unwrap().config;
    cfg.replications = 16;
    cfg.sweep = None;

    let mut group = c.benchmark_group("vertical_16_reps");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| run_scenario_with(&cfg, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scenario_replications, preset_replications);
criterion_main!(benches);
