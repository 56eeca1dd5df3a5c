//! Cohort registry with staged informed consent.
//!
//! Stage 1 is cohort participation, stage 2 broad consent to future
//! randomization (fixed at enrollment), and stage 3 trial-specific consent,
//! which is only ever asked of patients randomized to the offered arm.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::PatientRecord;

/// Abstract integer time. Only ordering and offsets matter.
pub type Tick = i64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrialId(pub String);

impl TrialId {
    pub fn new(id: impl Into<String>) -> Self {
        TrialId(id.into())
    }
}

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Offered,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage3 {
    NotOffered,
    Offered,
    Consented,
    Refused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentState {
    pub stage1_cohort: bool,
    pub stage2_broad_randomization: bool,
    stage3: BTreeMap<TrialId, Stage3>,
}

impl ConsentState {
    pub fn stage3(&self, trial: &TrialId) -> Stage3 {
        self.stage3.get(trial).copied().unwrap_or(Stage3::NotOffered)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub record: PatientRecord,
    pub enrollment_time: Tick,
    pub consent: ConsentState,
    pub history: BTreeMap<TrialId, Arm>,
}

#[derive(Debug, Clone, Default)]
pub struct CohortRegistry {
    covariate_names: Vec<String>,
    entries: BTreeMap<u64, CohortEntry>,
}

impl CohortRegistry {
    pub fn new(covariate_names: Vec<String>) -> Self {
        Self {
            covariate_names,
            entries: BTreeMap::new(),
        }
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&CohortEntry> {
        self.entries.get(&id)
    }

    /// Entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = &CohortEntry> {
        self.entries.values()
    }

    pub fn latest_enrollment(&self) -> Option<Tick> {
        self.entries.values().map(|e| e.enrollment_time).max()
    }

    pub fn enroll_patient(&mut self, patient: PatientRecord, broad_consent: bool, time: Tick) -> Result<()> {
        if self.entries.contains_key(&patient.id) {
            return Err(Error::EnrollmentConflict(patient.id));
        }
        if patient.x.len() != self.covariate_names.len() {
            return Err(Error::InvalidInput(format!(
                "patient {} has {} covariates, registry expects {}",
                patient.id,
                patient.x.len(),
                self.covariate_names.len()
            )));
        }
        let id = patient.id;
        self.entries.insert(
            id,
            CohortEntry {
                record: patient,
                enrollment_time: time,
                consent: ConsentState {
                    stage1_cohort: true,
                    stage2_broad_randomization: broad_consent,
                    stage3: BTreeMap::new(),
                },
                history: BTreeMap::new(),
            },
        );
        Ok(())
    }

    fn entry_mut(&mut self, id: u64) -> Result<&mut CohortEntry> {
        self.entries.get_mut(&id).ok_or(Error::UnknownPatient(id))
    }

    /// Records a randomization. A patient can be randomized at most once per
    /// trial and only with broad consent.
    pub fn record_assignment(&mut self, id: u64, trial: &TrialId, arm: Arm) -> Result<()> {
        let entry = self.entry_mut(id)?;
        if !entry.consent.stage2_broad_randomization {
            return Err(Error::ConsentViolation {
                patient: id,
                detail: "randomized without broad consent".into(),
            });
        }
        if entry.history.contains_key(trial) {
            return Err(Error::ConsentViolation {
                patient: id,
                detail: format!("already randomized in trial {trial}"),
            });
        }
        entry.history.insert(trial.clone(), arm);
        Ok(())
    }

    /// Moves stage 3 from NotOffered to Offered. Only offered-arm patients
    /// can be informed about the trial.
    pub fn offer(&mut self, id: u64, trial: &TrialId) -> Result<()> {
        let entry = self.entry_mut(id)?;
        if entry.history.get(trial) != Some(&Arm::Offered) {
            return Err(Error::ConsentViolation {
                patient: id,
                detail: format!("not randomized to the offered arm of {trial}"),
            });
        }
        match entry.consent.stage3(trial) {
            Stage3::NotOffered => {
                entry.consent.stage3.insert(trial.clone(), Stage3::Offered);
                Ok(())
            }
            s => Err(Error::ConsentViolation {
                patient: id,
                detail: format!("cannot offer from stage 3 state {s:?}"),
            }),
        }
    }

    /// Resolves an open offer. Consented/Refused are terminal.
    pub fn resolve_offer(&mut self, id: u64, trial: &TrialId, consented: bool) -> Result<()> {
        let entry = self.entry_mut(id)?;
        match entry.consent.stage3(trial) {
            Stage3::Offered => {
                let next = if consented { Stage3::Consented } else { Stage3::Refused };
                entry.consent.stage3.insert(trial.clone(), next);
                Ok(())
            }
            s => Err(Error::ConsentViolation {
                patient: id,
                detail: format!("cannot resolve consent from stage 3 state {s:?}"),
            }),
        }
    }

    fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Whether one entry passes `criteria` for `trial` at `time`. Criteria
    /// must already be validated against this registry.
    fn passes(&self, entry: &CohortEntry, criteria: &ResolvedCriteria, trial: &TrialId, time: Tick) -> bool {
        entry.enrollment_time <= time
            && entry.consent.stage1_cohort
            && entry.consent.stage2_broad_randomization
            && !entry.history.contains_key(trial)
            && !entry.history.keys().any(|t| criteria.exclude.contains(t))
            && criteria
                .predicates
                .iter()
                .all(|(idx, test)| test.accepts(entry.record.x[*idx]))
    }

    pub fn screen_eligible(&self, criteria: &EligibilityCriteria, trial: &TrialId, time: Tick) -> Result<Vec<u64>> {
        let resolved = criteria.resolve(self)?;
        Ok(self
            .entries
            .values()
            .filter(|e| self.passes(e, &resolved, trial, time))
            .map(|e| e.record.id)
            .collect())
    }

    /// Whether a single patient passes screening, at their own enrollment tick.
    pub(crate) fn eligible_on_entry(&self, criteria: &ResolvedCriteria, trial: &TrialId, id: u64) -> bool {
        self.entries
            .get(&id)
            .is_some_and(|e| self.passes(e, criteria, trial, e.enrollment_time))
    }
}

/// Free-function form of [`CohortRegistry::enroll_patient`].
pub fn enroll_patient(registry: &mut CohortRegistry, patient: PatientRecord, broad_consent: bool, time: Tick) -> Result<()> {
    registry.enroll_patient(patient, broad_consent, time)
}

pub fn screen_eligible(
    registry: &CohortRegistry,
    criteria: &EligibilityCriteria,
    trial_id: &TrialId,
    time: Tick,
) -> Result<Vec<u64>> {
    registry.screen_eligible(criteria, trial_id, time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredicateTest {
    /// Inclusive bounds; a missing bound is open.
    Range {
        #[serde(default)]
        min: Option<f64>,
        #[serde(default)]
        max: Option<f64>,
    },
    Equals { value: f64 },
}

impl PredicateTest {
    pub fn accepts(&self, v: f64) -> bool {
        match *self {
            PredicateTest::Range { min, max } => min.is_none_or(|m| v >= m) && max.is_none_or(|m| v <= m),
            PredicateTest::Equals { value } => v == value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariatePredicate {
    pub covariate: String,
    pub test: PredicateTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EligibilityCriteria {
    #[serde(default)]
    pub predicates: Vec<CovariatePredicate>,
    /// Always true; present so configs can state it, rejected when false.
    #[serde(default = "always_true")]
    pub require_broad_consent: bool,
    #[serde(default)]
    pub exclude_prior_trials: BTreeSet<TrialId>,
}

fn always_true() -> bool {
    true
}

impl Default for EligibilityCriteria {
    fn default() -> Self {
        Self {
            predicates: Vec::new(),
            require_broad_consent: true,
            exclude_prior_trials: BTreeSet::new(),
        }
    }
}

pub(crate) struct ResolvedCriteria {
    predicates: Vec<(usize, PredicateTest)>,
    exclude: BTreeSet<TrialId>,
}

impl EligibilityCriteria {
    pub fn with_predicate(mut self, covariate: impl Into<String>, test: PredicateTest) -> Self {
        self.predicates.push(CovariatePredicate {
            covariate: covariate.into(),
            test,
        });
        self
    }

    pub fn excluding(mut self, trial: TrialId) -> Self {
        self.exclude_prior_trials.insert(trial);
        self
    }

    /// Problems with these criteria given the known covariate names.
    pub fn validation_errors(&self, covariate_names: &[String], path: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if !self.require_broad_consent {
            errs.push(format!("{path}.require_broad_consent: broad consent cannot be disabled"));
        }
        for (i, p) in self.predicates.iter().enumerate() {
            if !covariate_names.contains(&p.covariate) {
                errs.push(format!("{path}.predicates[{i}]: unknown covariate '{}'", p.covariate));
            }
            if let PredicateTest::Range { min: Some(a), max: Some(b) } = p.test {
                if a > b {
                    errs.push(format!("{path}.predicates[{i}]: min exceeds max"));
                }
            }
        }
        errs
    }

    /// Whether covariates `x`, ordered as `covariate_names`, pass every
    /// predicate. Unknown covariates fail.
    pub fn predicates_hold(&self, covariate_names: &[String], x: &[f64]) -> bool {
        self.predicates.iter().all(|p| {
            covariate_names
                .iter()
                .position(|n| *n == p.covariate)
                .is_some_and(|j| p.test.accepts(x[j]))
        })
    }

    pub(crate) fn resolve(&self, registry: &CohortRegistry) -> Result<ResolvedCriteria> {
        let errs = self.validation_errors(registry.covariate_names(), "criteria");
        if !errs.is_empty() {
            return Err(Error::CriteriaValidation(errs.join("; ")));
        }
        Ok(ResolvedCriteria {
            predicates: self
                .predicates
                .iter()
                .map(|p| (registry.covariate_index(&p.covariate).expect("validated"), p.test))
                .collect(),
            exclude: self.exclude_prior_trials.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Tick>", into = "Vec<Tick>")]
pub struct MeasurementSchedule {
    ticks: Vec<Tick>,
}

impl MeasurementSchedule {
    pub fn new(ticks: Vec<Tick>) -> Result<Self> {
        if ticks.is_empty() {
            return Err(Error::InvalidInput("measurement schedule is empty".into()));
        }
        if ticks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("measurement ticks must be strictly increasing".into()));
        }
        Ok(Self { ticks })
    }

    pub fn ticks(&self) -> &[Tick] {
        &self.ticks
    }
}

impl TryFrom<Vec<Tick>> for MeasurementSchedule {
    type Error = Error;
    fn try_from(v: Vec<Tick>) -> Result<Self> {
        MeasurementSchedule::new(v)
    }
}

impl From<MeasurementSchedule> for Vec<Tick> {
    fn from(s: MeasurementSchedule) -> Self {
        s.ticks
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Aligned,
    Mismatch(Vec<Tick>),
}

/// Checks that every trial endpoint falls on (or within `tolerance` of) a
/// routine cohort measurement.
pub fn check_schedule_alignment(endpoint_ticks: &[Tick], schedule: &MeasurementSchedule, tolerance: Tick) -> Alignment {
    let unmatched: Vec<Tick> = endpoint_ticks
        .iter()
        .copied()
        .filter(|e| !schedule.ticks.iter().any(|s| (s - e).abs() <= tolerance))
        .collect();
    if unmatched.is_empty() {
        Alignment::Aligned
    } else {
        Alignment::Mismatch(unmatched)
    }
}
