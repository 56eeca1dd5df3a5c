use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{MeasurementSchedule, Tick};
use crate::error::{Error, Result};
use crate::estimators::{AnalysisOptions, EstimandLabel};
use crate::population::PopulationSpec;
use crate::trial::TrialDesign;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnrollmentPattern {
    /// Everyone enrolls at `tick`.
    Simultaneous {
        #[serde(default)]
        tick: Tick,
    },
    /// Patients enroll in id order, `per_tick` at a time from `start`.
    Staggered {
        #[serde(default)]
        start: Tick,
        per_tick: usize,
    },
}

impl Default for EnrollmentPattern {
    fn default() -> Self {
        EnrollmentPattern::Simultaneous { tick: 0 }
    }
}

impl EnrollmentPattern {
    pub fn tick_of(&self, index: usize) -> Tick {
        match *self {
            EnrollmentPattern::Simultaneous { tick } => tick,
            EnrollmentPattern::Staggered { start, per_tick } => start + (index / per_tick.max(1)) as Tick,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub size: usize,
    #[serde(default)]
    pub enrollment: EnrollmentPattern,
    #[serde(default = "one")]
    pub broad_consent_rate: f64,
    /// Relative reduction in broad consent for patients who meet the main
    /// trial's eligibility predicates. Off by default.
    #[serde(default)]
    pub eligible_consent_reduction: f64,
    #[serde(default)]
    pub schedule: Option<MeasurementSchedule>,
    /// Trials run on the same cohort before the main trial, in order.
    #[serde(default)]
    pub prior_trials: Vec<TrialDesign>,
}

fn one() -> f64 {
    1.0
}

impl CohortConfig {
    pub fn of_size(size: usize) -> Self {
        Self {
            size,
            enrollment: EnrollmentPattern::default(),
            broad_consent_rate: 1.0,
            eligible_consent_reduction: 0.0,
            schedule: None,
            prior_trials: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Sets the acceptance model's target marginal rate to `1 − value`.
    RefusalRate,
    /// Sets the outcome model's treatment effect.
    Effect,
    /// Sets the main design's target sample size.
    TargetN,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::RefusalRate => "refusal_rate",
            SweepParameter::Effect => "effect",
            SweepParameter::TargetN => "target_n",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub population: PopulationSpec,
    pub cohort: CohortConfig,
    pub design: TrialDesign,
    pub analyses: Vec<EstimandLabel>,
    #[serde(default)]
    pub analysis_options: AnalysisOptions,
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

fn default_outputs() -> PathBuf {
    PathBuf::from("twics-out")
}

impl ScenarioConfig {
    /// A config with one continuous covariate-free population, single-batch
    /// sampling and the ITT analysis. Handy as a starting point.
    pub fn minimal(population: PopulationSpec, cohort_size: usize, target_n: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: None,
            description: None,
            population,
            cohort: CohortConfig::of_size(cohort_size),
            design: TrialDesign::standard("trial", target_n),
            analyses: vec![EstimandLabel::AceOffered],
            analysis_options: AnalysisOptions::default(),
            replications: 1,
            master_seed: 0,
            outputs: default_outputs(),
            sweep: None,
        }
    }

    /// Every invariant violation, with a JSON-path-like location.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        if self.replications == 0 {
            errs.push("replications: must be at least 1".into());
        }
        errs.extend(self.population.validation_errors("population"));
        let names = self.population.covariate_names();
        let has_biomarker = self.population.biomarker.is_some();

        let c = &self.cohort;
        if c.size == 0 {
            errs.push("cohort.size: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&c.broad_consent_rate) {
            errs.push("cohort.broad_consent_rate: must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&c.eligible_consent_reduction) {
            errs.push("cohort.eligible_consent_reduction: must lie in [0, 1]".into());
        }
        if let EnrollmentPattern::Staggered { per_tick: 0, .. } = c.enrollment {
            errs.push("cohort.enrollment.per_tick: must be at least 1".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, prior) in c.prior_trials.iter().enumerate() {
            let path = format!("cohort.prior_trials[{i}]");
            errs.extend(prior.validation_errors(&names, has_biomarker, &path));
            if !ids.insert(prior.trial_id.clone()) {
                errs.push(format!("{path}.trial_id: duplicate trial id '{}'", prior.trial_id.0));
            }
        }
        if ids.contains(&self.design.trial_id) {
            errs.push(format!(
                "design.trial_id: '{}' is also used by a prior trial",
                self.design.trial_id.0
            ));
        }

        errs.extend(self.design.validation_errors(&names, has_biomarker, "design"));
        if self.design.target_n > c.size {
            errs.push(format!(
                "design.target_n: {} exceeds cohort.size {}",
                self.design.target_n, c.size
            ));
        }

        if self.analyses.is_empty() {
            errs.push("analyses: list at least one estimand label".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for label in &self.analyses {
            if !seen.insert(*label) {
                errs.push(format!("analyses: '{label}' listed twice"));
            }
        }
        errs.extend(self.analysis_options.validation_errors("analysis_options"));
        for (i, cov) in self.analysis_options.covariates.iter().enumerate() {
            if !names.contains(cov) {
                errs.push(format!("analysis_options.covariates[{i}]: unknown covariate '{cov}'"));
            }
        }

        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                errs.push("sweep.values: must be non-empty".into());
            }
            for (i, v) in sweep.values.iter().enumerate() {
                let ok = match sweep.parameter {
                    SweepParameter::RefusalRate => (0.0..1.0).contains(v),
                    SweepParameter::Effect => v.is_finite(),
                    SweepParameter::TargetN => *v >= 1.0 && v.fract() == 0.0 && *v <= c.size as f64,
                };
                if !ok {
                    errs.push(format!(
                        "sweep.values[{i}]: {v} is not a valid {}",
                        sweep.parameter.as_str()
                    ));
                }
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// The config with one sweep value applied.
    pub fn with_sweep_value(&self, parameter: SweepParameter, value: f64) -> Self {
        let mut c = self.clone();
        c.sweep = None;
        match parameter {
            SweepParameter::RefusalRate => c.population.acceptance.target_marginal_rate = Some(1.0 - value),
            SweepParameter::Effect => c.population.outcome.treatment_effect = value,
            SweepParameter::TargetN => c.design.target_n = value as usize,
        }
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Parses and validates a config file, reporting every invariant violation
/// at once.
pub fn load_and_validate_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let config = ScenarioConfig::from_json(&text)?;
    config.validate()?;
    Ok(config)
}
