//! Design-level templates for seven oncology trials run within cohorts.
//!
//! Presets fix what the trials reported: planned sample size, sampling
//! approach, design variant and, where known, planned and observed refusal.
//! Outcome models are placeholders with a zero effect; set
//! `population.outcome` before reading power or bias off a preset.

use serde::Serialize;

use super::config::{CohortConfig, EnrollmentPattern, ScenarioConfig, Sweep, SweepParameter, SCHEMA_VERSION};
use crate::cohort::Tick;
use crate::estimators::{AnalysisOptions, EstimandLabel};
use crate::population::{AcceptanceModel, BiomarkerModel, CovariateDistribution, CovariateSpec, OutcomeModel, PopulationSpec};
use crate::randomization::SamplingApproach;
use crate::trial::{DesignVariant, TrialDesign};

pub const PRESET_NAMES: [&str; 7] = [
    "tilt",
    "rectal_boost",
    "honey",
    "umbrella_fit",
    "medocc_create",
    "sponge",
    "vertical",
];

const PRESET_SEED: u64 = 20_240_101;
const PRESET_REPLICATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    /// Planned total randomized patients.
    pub planned_n: usize,
    pub planned_refusal: Option<f64>,
    pub actual_refusal: Option<f64>,
    /// Expected marker-positive patients under the gated variant.
    pub expected_positives: Option<f64>,
    pub config: ScenarioConfig,
}

fn population(acceptance: f64) -> PopulationSpec {
    PopulationSpec {
        covariates: vec![CovariateSpec::new("age_z", CovariateDistribution::Normal { mean: 0.0, sd: 1.0 })],
        outcome: OutcomeModel::continuous(0.0, 0.0, 1.0),
        acceptance: AcceptanceModel {
            intercept: 0.0,
            covariate_coefs: vec![],
            target_marginal_rate: Some(acceptance),
        },
        biomarker: None,
    }
}

fn design(id: &str, target_n: usize, approach: SamplingApproach) -> TrialDesign {
    TrialDesign {
        approach,
        ..TrialDesign::standard(id, target_n)
    }
}

fn batches(ticks: &[Tick], cap: usize) -> SamplingApproach {
    SamplingApproach::MultipleBatch {
        batch_ticks: ticks.to_vec(),
        per_batch_cap: Some(cap),
    }
}

fn staggered(size: usize, per_tick: usize) -> CohortConfig {
    CohortConfig {
        enrollment: EnrollmentPattern::Staggered { start: 0, per_tick },
        ..CohortConfig::of_size(size)
    }
}

fn config(name: &str, population: PopulationSpec, cohort: CohortConfig, design: TrialDesign) -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: Some(name.to_string()),
        description: Some("treatment effect is a placeholder (0); set population.outcome for your question".into()),
        population,
        cohort,
        design,
        analyses: vec![
            EstimandLabel::AceOffered,
            EstimandLabel::PerProtocol,
            EstimandLabel::AsTreated,
            EstimandLabel::CaceWald,
            EstimandLabel::Cace2sps,
            EstimandLabel::Cace2sri,
        ],
        analysis_options: AnalysisOptions::default(),
        replications: PRESET_REPLICATIONS,
        master_seed: PRESET_SEED,
        outputs: format!("twics-out/{name}").into(),
        sweep: None,
    }
}

fn refusal_sweep(planned: f64, actual: f64) -> Option<Sweep> {
    Some(Sweep {
        parameter: SweepParameter::RefusalRate,
        values: vec![planned, actual],
    })
}

fn rectal_boost_design() -> TrialDesign {
    design("rectal_boost", 120, SamplingApproach::OnEntry)
}

/// All presets, in a fixed order.
pub fn preset_catalog() -> Vec<Preset> {
    let tilt = Preset {
        name: "tilt",
        summary: "feasibility trial of intrapleural immunotherapy for mesothelioma; acceptance set at the 10% refusal feasibility limit",
        planned_n: 45,
        planned_refusal: None,
        actual_refusal: None,
        expected_positives: None,
        config: config(
            "tilt",
            population(0.9),
            CohortConfig::of_size(90),
            design("tilt", 45, SamplingApproach::SingleBatch),
        ),
    };

    let mut rectal = config(
        "rectal_boost",
        population(0.8),
        staggered(140, 2),
        rectal_boost_design(),
    );
    rectal.sweep = refusal_sweep(0.20, 0.27);
    let rectal_boost = Preset {
        name: "rectal_boost",
        summary: "pre-operative radiation boost in locally advanced rectal cancer, randomized on cohort entry",
        planned_n: 120,
        planned_refusal: Some(0.20),
        actual_refusal: Some(0.27),
        expected_positives: None,
        config: rectal,
    };

    let honey = Preset {
        name: "honey",
        summary: "hyperbaric oxygen for late radiation toxicity after breast cancer, randomized in repeated batches",
        planned_n: 120,
        planned_refusal: None,
        actual_refusal: None,
        expected_positives: None,
        config: config(
            "honey",
            population(1.0),
            staggered(300, 12),
            design("honey", 120, batches(&[5, 11, 17, 23], 30)),
        ),
    };

    let mut umbrella = config(
        "umbrella_fit",
        population(0.7),
        staggered(400, 20),
        design("umbrella_fit", 192, batches(&[4, 9, 14, 19], 48)),
    );
    umbrella.sweep = refusal_sweep(0.30, 0.45);
    let umbrella_fit = Preset {
        name: "umbrella_fit",
        summary: "supervised exercise for breast cancer survivors, randomized in repeated batches",
        planned_n: 192,
        planned_refusal: Some(0.30),
        actual_refusal: Some(0.45),
        expected_positives: None,
        config: umbrella,
    };

    // ctDNA is assessed only in the offered arm: with 1:1 allocation and full
    // testing consent, 660 patients are tested and 60 should be positive.
    let mut medocc_pop = population(1.0);
    medocc_pop.biomarker = Some(BiomarkerModel::with_prevalence(60.0 / 660.0));
    let mut medocc = config(
        "medocc_create",
        medocc_pop,
        CohortConfig::of_size(1320),
        TrialDesign {
            variant: DesignVariant::BiomarkerGated {
                testing_consent_prob: 1.0,
            },
            ..design("medocc_create", 1320, SamplingApproach::SingleBatch)
        },
    );
    medocc.analyses = vec![EstimandLabel::AceOffered, EstimandLabel::PerProtocol, EstimandLabel::CaceWald];
    let medocc_create = Preset {
        name: "medocc_create",
        summary: "ctDNA-guided adjuvant chemotherapy in stage II colon cancer; only offered patients are tested and only positives are offered treatment",
        planned_n: 1320,
        planned_refusal: None,
        actual_refusal: None,
        expected_positives: Some(60.0),
        config: medocc,
    };

    // Follow-up trial in the same cohort; earlier rectal boost participants
    // stay eligible.
    let sponge = Preset {
        name: "sponge",
        summary: "retractor sponge-assisted laparoscopic surgery in colorectal cancer, run after and reusing patients of rectal_boost",
        planned_n: 196,
        planned_refusal: None,
        actual_refusal: None,
        expected_positives: None,
        config: config(
            "sponge",
            population(1.0),
            CohortConfig {
                prior_trials: vec![rectal_boost_design()],
                ..CohortConfig::of_size(400)
            },
            design("sponge", 196, SamplingApproach::SingleBatch),
        ),
    };

    let mut vert = config(
        "vertical",
        population(0.9),
        staggered(130, 2),
        design("vertical", 110, SamplingApproach::OnEntry),
    );
    vert.sweep = refusal_sweep(0.10, 0.27);
    let vertical = Preset {
        name: "vertical",
        summary: "stereotactic versus conventional radiotherapy for spinal metastases, randomized on cohort entry",
        planned_n: 110,
        planned_refusal: Some(0.10),
        actual_refusal: Some(0.27),
        expected_positives: None,
        config: vert,
    };

    vec![tilt, rectal_boost, honey, umbrella_fit, medocc_create, sponge, vertical]
}

pub fn preset(name: &str) -> Option<Preset> {
    preset_catalog().into_iter().find(|p| p.name == name)
}
