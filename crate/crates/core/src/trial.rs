//! Embedded trial execution.
//!
//! Only offered-arm patients are informed. An offered patient accepts iff
//! their latent draw falls below their acceptance probability; refusers stay
//! on standard of care and keep `y0`. Controls are never tested or informed.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Arm, CohortRegistry, EligibilityCriteria, Stage3, Tick, TrialId};
use crate::error::{Error, Result};
use crate::population::{compute_true_estimands, PatientRecord, TrueEstimands};
use crate::randomization::{run_sampling_plan, Allocator, SamplingApproach, SamplingOutcome};
use crate::seed::{derive_seed, rng_from_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignVariant {
    Standard,
    /// Offered patients are asked to consent to biomarker testing; only
    /// marker-positive consenters are then offered the alternative treatment.
    BiomarkerGated {
        #[serde(default = "full_consent")]
        testing_consent_prob: f64,
    },
}

fn full_consent() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialDesign {
    pub trial_id: TrialId,
    #[serde(default)]
    pub criteria: EligibilityCriteria,
    pub approach: SamplingApproach,
    pub allocator: Allocator,
    #[serde(default = "standard_variant")]
    pub variant: DesignVariant,
    pub target_n: usize,
    #[serde(default)]
    pub endpoint_tick: Tick,
    #[serde(default)]
    pub control_contamination_prob: f64,
    #[serde(default)]
    pub control_soc_refusal_prob: f64,
    /// When set, controls refusing standard of care get this outcome instead
    /// of `y0`.
    #[serde(default)]
    pub control_soc_refusal_outcome: Option<f64>,
}

fn standard_variant() -> DesignVariant {
    DesignVariant::Standard
}

impl TrialDesign {
    /// Standard design with single-batch sampling and 1:1 permuted blocks of 4.
    pub fn standard(trial_id: &str, target_n: usize) -> Self {
        Self {
            trial_id: TrialId::new(trial_id),
            criteria: EligibilityCriteria::default(),
            approach: SamplingApproach::SingleBatch,
            allocator: Allocator::PermutedBlocks { block_size: 4 },
            variant: DesignVariant::Standard,
            target_n,
            endpoint_tick: 0,
            control_contamination_prob: 0.0,
            control_soc_refusal_prob: 0.0,
            control_soc_refusal_outcome: None,
        }
    }

    pub fn validation_errors(&self, covariate_names: &[String], has_biomarker: bool, path: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if self.trial_id.0.trim().is_empty() {
            errs.push(format!("{path}.trial_id: must be non-empty"));
        }
        if self.target_n == 0 {
            errs.push(format!("{path}.target_n: must be at least 1"));
        }
        for (name, p) in [
            ("control_contamination_prob", self.control_contamination_prob),
            ("control_soc_refusal_prob", self.control_soc_refusal_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{path}.{name}: must lie in [0, 1]"));
            }
        }
        if let DesignVariant::BiomarkerGated { testing_consent_prob } = self.variant {
            if !(0.0..=1.0).contains(&testing_consent_prob) {
                errs.push(format!("{path}.variant.testing_consent_prob: must lie in [0, 1]"));
            }
            if !has_biomarker {
                errs.push(format!("{path}.variant: biomarker_gated requires a population biomarker model"));
            }
        }
        errs.extend(self.criteria.validation_errors(covariate_names, &format!("{path}.criteria")));
        errs.extend(self.approach.validation_errors(&format!("{path}.approach")));
        errs.extend(self.allocator.validation_errors(&format!("{path}.allocator")));
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub id: u64,
    /// 1 = offered arm, 0 = control.
    pub z: u8,
    pub offered: bool,
    pub stage3: Stage3,
    /// Whether the alternative treatment was accepted; `None` when it was
    /// never offered.
    pub a: Option<bool>,
    pub tested: bool,
    pub biomarker_pos: Option<bool>,
    /// 1 = received the alternative treatment.
    pub d: u8,
    pub y: f64,
    pub x: Vec<f64>,
    pub contaminated: bool,
    pub soc_refused: bool,
    pub time: Tick,
}

/// Realized trial rows plus the covariate names their `x` vectors follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialData {
    pub covariate_names: Vec<String>,
    pub rows: Vec<TrialRow>,
}

impl TrialData {
    pub fn new(covariate_names: Vec<String>, rows: Vec<TrialRow>) -> Self {
        Self { covariate_names, rows }
    }

    pub fn offered_rows(&self) -> impl Iterator<Item = &TrialRow> {
        self.rows.iter().filter(|r| r.z == 1)
    }

    pub fn control_rows(&self) -> impl Iterator<Item = &TrialRow> {
        self.rows.iter().filter(|r| r.z == 0)
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown covariate '{name}'")))
    }

    /// Writes rows as CSV: `id,z,offered,a,tested,biomarker_pos,d,y,x1..xk`.
    /// Booleans are 0/1; undefined values are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let k = self.covariate_names.len();
        let mut header: Vec<String> = ["id", "z", "offered", "a", "tested", "biomarker_pos", "d", "y"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=k).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
        let opt = |b: Option<bool>| b.map(flag).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.id.to_string(),
                r.z.to_string(),
                flag(r.offered),
                opt(r.a),
                flag(r.tested),
                opt(r.biomarker_pos),
                r.d.to_string(),
                r.y.to_string(),
            ];
            rec.extend(r.x.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntercurrentEvent {
    Refusal,
    Contamination,
    ControlSocRefusal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEntry {
    pub patient_id: u64,
    pub event: IntercurrentEvent,
    pub tick: Tick,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntercurrentEventLog {
    pub events: Vec<EventEntry>,
}

impl IntercurrentEventLog {
    pub fn count(&self, event: IntercurrentEvent) -> usize {
        self.events.iter().filter(|e| e.event == event).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialExecution {
    pub data: TrialData,
    pub events: IntercurrentEventLog,
    pub sampling: SamplingOutcome,
}

/// Randomizes eligible cohort members according to `design` and realizes
/// offer, consent, exposure and outcome for each of them.
pub fn execute_trial(
    design: &TrialDesign,
    registry: &mut CohortRegistry,
    population: &[PatientRecord],
    seed: u64,
) -> Result<TrialExecution> {
    let has_biomarker = !population.is_empty() && population.iter().all(|p| p.biomarker.is_some());
    let errs = design.validation_errors(registry.covariate_names(), has_biomarker, "design");
    if !errs.is_empty() {
        return Err(Error::Configuration(errs.join("; ")));
    }
    let by_id: HashMap<u64, &PatientRecord> = population.iter().map(|p| (p.id, p)).collect();

    let sampling = run_sampling_plan(
        &design.approach,
        registry,
        &design.criteria,
        &design.allocator,
        &design.trial_id,
        design.target_n,
        derive_seed(seed, tag::SAMPLING),
    )?;

    let trial = &design.trial_id;
    let mut rng = rng_from_seed(derive_seed(seed, tag::EXECUTION));
    let mut rows = Vec::with_capacity(sampling.assignments.len());
    let mut log = IntercurrentEventLog::default();

    for asg in &sampling.assignments {
        let rec = *by_id
            .get(&asg.patient_id)
            .ok_or(Error::UnknownPatient(asg.patient_id))?;
        let mut row = TrialRow {
            id: rec.id,
            z: 0,
            offered: false,
            stage3: Stage3::NotOffered,
            a: None,
            tested: false,
            biomarker_pos: None,
            d: 0,
            y: rec.y0,
            x: rec.x.clone(),
            contaminated: false,
            soc_refused: false,
            time: asg.time,
        };
        let event = |e| EventEntry {
            patient_id: rec.id,
            event: e,
            tick: asg.time,
        };

        match asg.arm {
            Arm::Control => {
                // Draw both knobs unconditionally so the stream layout does
                // not depend on knob values.
                let c: f64 = rng.random();
                let s: f64 = rng.random();
                if c < design.control_contamination_prob {
                    row.contaminated = true;
                    row.d = 1;
                    row.y = rec.y1;
                    log.events.push(event(IntercurrentEvent::Contamination));
                } else if s < design.control_soc_refusal_prob {
                    row.soc_refused = true;
                    if let Some(level) = design.control_soc_refusal_outcome {
                        row.y = level;
                    }
                    log.events.push(event(IntercurrentEvent::ControlSocRefusal));
                }
            }
            Arm::Offered => {
                row.z = 1;
                row.offered = true;
                registry.offer(rec.id, trial)?;
                let t: f64 = rng.random();
                let accepts = rec.is_complier();
                let (consented, exposed) = match design.variant {
                    DesignVariant::Standard => {
                        row.a = Some(accepts);
                        (accepts, accepts)
                    }
                    DesignVariant::BiomarkerGated { testing_consent_prob } => {
                        if t < testing_consent_prob {
                            row.tested = true;
                            let positive = rec.biomarker.unwrap_or(false);
                            row.biomarker_pos = Some(positive);
                            if positive {
                                row.a = Some(accepts);
                                (accepts, accepts)
                            } else {
                                (true, false)
                            }
                        } else {
                            (false, false)
                        }
                    }
                };
                registry.resolve_offer(rec.id, trial, consented)?;
                row.stage3 = if consented { Stage3::Consented } else { Stage3::Refused };
                if !consented {
                    log.events.push(event(IntercurrentEvent::Refusal));
                }
                if exposed {
                    row.d = 1;
                    row.y = rec.y1;
                }
            }
        }
        rows.push(row);
    }

    Ok(TrialExecution {
        data: TrialData::new(registry.covariate_names().to_vec(), rows),
        events: log,
        sampling,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalRate {
    pub refusers: usize,
    pub offered: usize,
}

impl RefusalRate {
    pub fn rate(&self) -> f64 {
        self.refusers as f64 / self.offered as f64
    }

    pub fn acceptance(&self) -> f64 {
        1.0 - self.rate()
    }
}

/// Refusers over offered patients, reported with its exact numerator and
/// denominator.
pub fn observed_refusal_rate(rows: &[TrialRow]) -> Result<RefusalRate> {
    let offered = rows.iter().filter(|r| r.offered).count();
    if offered == 0 {
        return Err(Error::Undefined("no offered patients; refusal rate undefined".into()));
    }
    let refusers = rows
        .iter()
        .filter(|r| r.offered && r.stage3 == Stage3::Refused)
        .count();
    Ok(RefusalRate { refusers, offered })
}

/// Estimand truth for the patients in `records` under `variant`.
///
/// Under the biomarker-gated variant only marker-positive patients can be
/// treated, so the offered effect is scaled by marker status and testing
/// consent, and compliers are marker-positive patients who would accept.
pub fn design_estimands(records: &[PatientRecord], variant: &DesignVariant) -> Result<TrueEstimands> {
    let DesignVariant::BiomarkerGated { testing_consent_prob } = *variant else {
        return compute_true_estimands(records);
    };
    if records.is_empty() {
        return Err(Error::InvalidInput("population is empty".into()));
    }
    let n = records.len() as f64;
    let mut gate = Vec::with_capacity(records.len());
    for p in records {
        let pos = p.biomarker.ok_or_else(|| {
            Error::Configuration(format!("patient {} has no biomarker status under a gated design", p.id))
        })?;
        gate.push(if pos { testing_consent_prob } else { 0.0 });
    }
    let ace_received = records.iter().map(PatientRecord::effect).sum::<f64>() / n;
    let ace_offered = records
        .iter()
        .zip(&gate)
        .map(|(p, g)| g * p.pi_accept * p.effect())
        .sum::<f64>()
        / n;
    let acceptance_rate = records.iter().zip(&gate).map(|(p, g)| g * p.pi_accept).sum::<f64>() / n;
    let compliers: Vec<f64> = records
        .iter()
        .filter(|p| p.biomarker == Some(true) && p.is_complier())
        .map(PatientRecord::effect)
        .collect();
    if compliers.is_empty() || testing_consent_prob == 0.0 {
        return Err(Error::Undefined("no marker-positive compliers; CACE undefined".into()));
    }
    Ok(TrueEstimands {
        ace_received,
        ace_offered,
        cace: compliers.iter().sum::<f64>() / compliers.len() as f64,
        acceptance_rate,
    })
}
