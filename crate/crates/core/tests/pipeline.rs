//! End-to-end Monte Carlo checks of single estimators against brute-force truth.

use twics_core::estimators::{estimate_itt, estimate_per_protocol, estimate_wald_cace};
use twics_core::population::{AcceptanceModel, CovariateDistribution, CovariateSpec, OutcomeModel, PopulationSpec};
use twics_core::scenario::{simulate_replication, PreparedScenario, ScenarioConfig};
use twics_core::stats::{mean, sample_sd};
use twics_core::trial::TrialData;
use twics_core::Execution;

fn mc_se(xs: &[f64]) -> f64 {
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

fn replicate<F>(cfg: &ScenarioConfig, reps: usize, f: F) -> Vec<(f64, twics_core::population::TrueEstimands)>
where
    F: Fn(&TrialData) -> f64 + Sync,
{
    let prepared = PreparedScenario::new(cfg).unwrap();
    Execution::Parallel.map_indexed(reps, |r| {
        let rep = simulate_replication(&prepared, r).unwrap();
        (f(&rep.main.data), rep.truth.unwrap())
    })
}

#[test]
fn itt_tracks_the_mixture_mean() {
    let pop = PopulationSpec {
        covariates: vec![],
        outcome: OutcomeModel::continuous(0.0, 1.0, 1.0),
        acceptance: AcceptanceModel::constant(0.7),
        biomarker: None,
    };
    let cfg = ScenarioConfig::minimal(pop, 10_000, 10_000);
    let out = replicate(&cfg, 1000, |d| estimate_itt(d).unwrap().point);
    let points: Vec<f64> = out.iter().map(|o| o.0).collect();
    assert!((mean(&points) - 0.7).abs() < 3.0 * mc_se(&points), "{}", mean(&points));
}

#[test]
fn wald_recovers_cace_with_heterogeneous_effects() {
    let pop = PopulationSpec {
        covariates: vec![CovariateSpec::new("x", CovariateDistribution::Normal { mean: 0.0, sd: 1.0 })],
        outcome: OutcomeModel::continuous(0.0, 1.0, 1.0)
            .with_covariate_coefs(vec![0.5])
            .with_effect_heterogeneity(vec![0.8]),
        acceptance: AcceptanceModel {
            intercept: 0.5,
            covariate_coefs: vec![1.2],
            target_marginal_rate: None,
        },
        biomarker: None,
    };
    let mut cfg = ScenarioConfig::minimal(pop, 600, 600);
    cfg.master_seed = 41;
    let out = replicate(&cfg, 600, |d| estimate_wald_cace(d).unwrap().point);
    let diff: Vec<f64> = out.iter().map(|(p, t)| p - t.cace).collect();
    assert!(mean(&diff).abs() < 3.0 * mc_se(&diff), "{}", mean(&diff));
    // compliers carry larger effects here, so the two truths separate
    let gap: Vec<f64> = out.iter().map(|(_, t)| t.cace - t.ace_received).collect();
    assert!(mean(&gap) > 0.3);
}

#[test]
fn per_protocol_unbiased_under_random_null_refusal() {
    let pop = PopulationSpec {
        covariates: vec![],
        outcome: OutcomeModel::continuous(2.0, 0.0, 1.0),
        acceptance: AcceptanceModel::constant(0.6),
        biomarker: None,
    };
    let mut cfg = ScenarioConfig::minimal(pop, 400, 400);
    cfg.master_seed = 5;
    let out = replicate(&cfg, 800, |d| estimate_per_protocol(d).unwrap().point);
    let points: Vec<f64> = out.iter().map(|o| o.0).collect();
    assert!(mean(&points).abs() < 3.0 * mc_se(&points));
}

#[test]
fn itt_interval_coverage_is_nominal() {
    let pop = PopulationSpec {
        covariates: vec![],
        outcome: OutcomeModel::continuous(0.0, 0.4, 1.0),
        acceptance: AcceptanceModel::constant(0.75),
        biomarker: None,
    };
    let mut cfg = ScenarioConfig::minimal(pop, 300, 300);
    cfg.master_seed = 9;
    cfg.replications = 2000;
    let res = twics_core::scenario::run_scenario(&cfg).unwrap();
    let c = res.estimates[0].coverage;
    assert!((c - 0.95).abs() <= 0.02, "coverage {c}");
}
