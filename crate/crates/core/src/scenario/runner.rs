use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ScenarioConfig, SweepParameter};
use crate::cohort::{check_schedule_alignment, Alignment, CohortRegistry, Tick};
use crate::error::{Error, Result};
use crate::estimators::{estimate, AnalysisOptions, EstimandLabel, EstimateResult};
use crate::exec::Execution;
use crate::population::{PatientRecord, PopulationSpec, TrueEstimands};
use crate::randomization::RecruitmentStatus;
use crate::seed::{derive_seed, rng_from_seed, tag};
use crate::stats::{mean, quantile_sorted, sample_sd};
use crate::trial::{design_estimands, execute_trial, observed_refusal_rate, RefusalRate, TrialExecution};

/// Largest tolerated fraction of failed replications per analysis.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Seed used once per scenario to calibrate the acceptance intercept.
const CALIBRATION_INDEX: u64 = u64::MAX;

/// Which truth each label is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    AceOffered,
    AceReceived,
    Cace,
}

impl TruthKind {
    pub fn for_label(label: EstimandLabel) -> Self {
        match label {
            EstimandLabel::AceOffered => TruthKind::AceOffered,
            EstimandLabel::PerProtocol | EstimandLabel::AsTreated => TruthKind::AceReceived,
            EstimandLabel::CaceWald
            | EstimandLabel::Cace2sps
            | EstimandLabel::Cace2sri
            | EstimandLabel::CacePropensity => TruthKind::Cace,
        }
    }

    pub fn value(&self, t: &TrueEstimands) -> f64 {
        match self {
            TruthKind::AceOffered => t.ace_offered,
            TruthKind::AceReceived => t.ace_received,
            TruthKind::Cace => t.cace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub n_randomized: usize,
    pub n_offered: usize,
    pub first_tick: Option<Tick>,
    pub last_tick: Option<Tick>,
    pub batches: usize,
    pub complete: bool,
}

/// What one replication produced. `estimates` is aligned with the
/// configured analyses; `Err` entries record why an estimator failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub truth: Option<TrueEstimands>,
    pub estimates: Vec<std::result::Result<EstimateResult, String>>,
    pub refusal: Option<RefusalRate>,
    pub timeline: Option<Timeline>,
}

impl ReplicationRecord {
    fn failed(replication: usize, n_labels: usize, error: &Error) -> Self {
        Self {
            replication,
            truth: None,
            estimates: vec![Err(error.to_string()); n_labels],
            refusal: None,
            timeline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub label: EstimandLabel,
    pub truth_kind: TruthKind,
    pub mean_point: f64,
    pub truth: f64,
    pub bias: f64,
    pub emp_se: f64,
    pub mean_se: f64,
    /// `emp_se / √n_reps`.
    pub mc_se: f64,
    pub coverage: f64,
    pub reject_rate: f64,
    pub n_reps: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalObservation {
    pub replication: usize,
    pub offered: usize,
    pub refusers: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefusalSummary {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineSummary {
    pub mean_randomized: f64,
    pub mean_first_tick: Option<f64>,
    pub mean_last_tick: Option<f64>,
    pub mean_batches: f64,
    pub fraction_complete: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub replication: usize,
    pub label: EstimandLabel,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub estimates: Vec<EstimandSummary>,
    pub refusal: RefusalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: Option<String>,
    pub master_seed: u64,
    pub replications: usize,
    pub estimates: Vec<EstimandSummary>,
    pub refusal: RefusalSummary,
    pub refusal_by_replication: Vec<RefusalObservation>,
    pub timeline: TimelineSummary,
    pub failures: Vec<FailureNote>,
    pub sweep: Option<SweepResult>,
    pub notes: Vec<String>,
}

const ACCEPTANCE_NOTE: &str =
    "acceptance of the offered treatment follows a logistic model in the covariates; this form is an assumption of the simulation";

const PER_PROTOCOL_NOTE: &str =
    "PerProtocol and AsTreated are scored against ace_received: their bias shows what excluding or regrouping refusers does";

/// A config with its acceptance model calibrated, ready to replicate.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub population: PopulationSpec,
}

impl PreparedScenario {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let p = &config.population;
        let acceptance = p
            .acceptance
            .resolved(&p.covariates, derive_seed(config.master_seed, CALIBRATION_INDEX))?;
        Ok(Self {
            config: config.clone(),
            population: PopulationSpec {
                acceptance,
                ..p.clone()
            },
        })
    }
}

/// Everything one replication builds, for callers that want to inspect
/// more than the estimates.
#[derive(Debug, Clone)]
pub struct ReplicationData {
    pub records: Vec<PatientRecord>,
    pub registry: CohortRegistry,
    pub prior: Vec<TrialExecution>,
    pub main: TrialExecution,
    /// Truth over the randomized patients; an error when an estimand is
    /// undefined (e.g. no compliers).
    pub truth: std::result::Result<TrueEstimands, String>,
}

/// Builds replication `r`: population, cohort enrollment, prior trials, the
/// main trial and the truth over its randomized patients.
pub fn simulate_replication(prepared: &PreparedScenario, r: usize) -> Result<ReplicationData> {
    let config = &prepared.config;
    let seed = derive_seed(config.master_seed, r as u64);
    let records = prepared
        .population
        .generate(config.cohort.size, derive_seed(seed, tag::POPULATION))?;
    let names = prepared.population.covariate_names();

    let cohort = &config.cohort;
    let mut registry = CohortRegistry::new(names.clone());
    let mut consent_rng = rng_from_seed(derive_seed(seed, tag::ENROLLMENT));
    for (i, rec) in records.iter().enumerate() {
        let mut p = cohort.broad_consent_rate;
        if cohort.eligible_consent_reduction > 0.0 && config.design.criteria.predicates_hold(&names, &rec.x) {
            p *= 1.0 - cohort.eligible_consent_reduction;
        }
        let u: f64 = consent_rng.random();
        registry.enroll_patient(rec.clone(), u < p, cohort.enrollment.tick_of(i))?;
    }

    let prior_seed = derive_seed(seed, tag::PRIOR_TRIALS);
    let mut prior = Vec::with_capacity(cohort.prior_trials.len());
    for (k, design) in cohort.prior_trials.iter().enumerate() {
        prior.push(execute_trial(design, &mut registry, &records, derive_seed(prior_seed, k as u64))?);
    }
    let main = execute_trial(&config.design, &mut registry, &records, derive_seed(seed, tag::EXECUTION))?;
    let randomized: Vec<PatientRecord> = main.data.rows.iter().map(|row| records[row.id as usize].clone()).collect();
    let truth = design_estimands(&randomized, &config.design.variant).map_err(|e| e.to_string());
    Ok(ReplicationData {
        records,
        registry,
        prior,
        main,
        truth,
    })
}

fn run_one(prepared: &PreparedScenario, r: usize) -> ReplicationRecord {
    let config = &prepared.config;
    let n_labels = config.analyses.len();
    let data = match simulate_replication(prepared, r) {
        Ok(d) => d,
        Err(e) => return ReplicationRecord::failed(r, n_labels, &e),
    };
    let truth = match &data.truth {
        Ok(t) => *t,
        Err(e) => {
            let mut rec = ReplicationRecord::failed(r, n_labels, &Error::Undefined(e.clone()));
            rec.refusal = observed_refusal_rate(&data.main.data.rows).ok();
            return rec;
        }
    };
    let rows = &data.main.data.rows;
    let opts = AnalysisOptions {
        seed: derive_seed(derive_seed(config.master_seed, r as u64), tag::ANALYSIS),
        execution: Execution::Serial,
        ..config.analysis_options.clone()
    };
    let estimates = config
        .analyses
        .iter()
        .map(|label| estimate(*label, &data.main.data, &opts).map_err(|e| e.to_string()))
        .collect();
    let sampling = &data.main.sampling;
    let times: Vec<Tick> = sampling.assignments.iter().map(|a| a.time).collect();
    ReplicationRecord {
        replication: r,
        truth: Some(truth),
        estimates,
        refusal: observed_refusal_rate(rows).ok(),
        timeline: Some(Timeline {
            n_randomized: rows.len(),
            n_offered: rows.iter().filter(|row| row.z == 1).count(),
            first_tick: times.iter().min().copied(),
            last_tick: times.iter().max().copied(),
            batches: sampling.batches(),
            complete: sampling.status == RecruitmentStatus::Complete,
        }),
    }
}

/// Per-label performance over replications, summed in replication order.
pub fn aggregate_replications(analyses: &[EstimandLabel], reps: &[ReplicationRecord]) -> Vec<EstimandSummary> {
    let mut ordered: Vec<&ReplicationRecord> = reps.iter().collect();
    ordered.sort_by_key(|r| r.replication);
    analyses
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let kind = TruthKind::for_label(*label);
            let mut points = Vec::new();
            let mut truths = Vec::new();
            let mut ses = Vec::new();
            let (mut covered, mut rejected) = (0usize, 0usize);
            for rep in &ordered {
                let (Some(truth), Some(Ok(est))) = (rep.truth.as_ref(), rep.estimates.get(j)) else {
                    continue;
                };
                let t = kind.value(truth);
                points.push(est.point);
                truths.push(t);
                ses.push(est.se);
                covered += usize::from(est.contains(t));
                rejected += usize::from(est.rejects_null());
            }
            let n = points.len();
            let mean_point = mean(&points);
            let truth = mean(&truths);
            let emp_se = if n >= 2 { sample_sd(&points) } else { f64::NAN };
            EstimandSummary {
                label: *label,
                truth_kind: kind,
                mean_point,
                truth,
                bias: mean_point - truth,
                emp_se,
                mean_se: mean(&ses),
                mc_se: emp_se / (n as f64).sqrt(),
                coverage: covered as f64 / n as f64,
                reject_rate: rejected as f64 / n as f64,
                n_reps: n,
                failures: reps.len() - n,
            }
        })
        .collect()
}

fn summarize_refusal(obs: &[RefusalObservation]) -> RefusalSummary {
    let mut rates: Vec<f64> = obs.iter().filter_map(|o| o.rate).collect();
    rates.sort_by(f64::total_cmp);
    let some = |v: f64| (!rates.is_empty()).then_some(v);
    RefusalSummary {
        n: rates.len(),
        mean: some(mean(&rates)),
        sd: (rates.len() >= 2).then(|| sample_sd(&rates)),
        min: rates.first().copied(),
        median: (!rates.is_empty()).then(|| quantile_sorted(&rates, 0.5)),
        max: rates.last().copied(),
    }
}

fn summarize_timeline(reps: &[ReplicationRecord]) -> TimelineSummary {
    let t: Vec<&Timeline> = reps.iter().filter_map(|r| r.timeline.as_ref()).collect();
    let firsts: Vec<f64> = t.iter().filter_map(|x| x.first_tick).map(|v| v as f64).collect();
    let lasts: Vec<f64> = t.iter().filter_map(|x| x.last_tick).map(|v| v as f64).collect();
    let n = t.len() as f64;
    TimelineSummary {
        mean_randomized: t.iter().map(|x| x.n_randomized as f64).sum::<f64>() / n,
        mean_first_tick: (!firsts.is_empty()).then(|| mean(&firsts)),
        mean_last_tick: (!lasts.is_empty()).then(|| mean(&lasts)),
        mean_batches: t.iter().map(|x| x.batches as f64).sum::<f64>() / n,
        fraction_complete: t.iter().filter(|x| x.complete).count() as f64 / n,
    }
}

fn refusal_observations(reps: &[ReplicationRecord]) -> Vec<RefusalObservation> {
    reps.iter()
        .map(|r| RefusalObservation {
            replication: r.replication,
            offered: r.refusal.map_or(0, |x| x.offered),
            refusers: r.refusal.map_or(0, |x| x.refusers),
            rate: r.refusal.filter(|x| x.offered > 0).map(|x| x.rate()),
        })
        .collect()
}

fn check_failures(summaries: &[EstimandSummary], total: usize) -> Result<()> {
    for s in summaries {
        if s.failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
            return Err(Error::Instability {
                failures: s.failures,
                total,
            });
        }
    }
    Ok(())
}

fn replicate(prepared: &PreparedScenario, execution: Execution) -> Vec<ReplicationRecord> {
    execution.map_indexed(prepared.config.replications, |r| run_one(prepared, r))
}

/// Runs every replication with the default execution mode.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult> {
    run_scenario_with(config, Execution::default())
}

/// Runs every replication, aggregates in replication order and, when a sweep
/// is configured, repeats the run at each grid value with the same seeds.
pub fn run_scenario_with(config: &ScenarioConfig, execution: Execution) -> Result<ScenarioResult> {
    let prepared = PreparedScenario::new(config)?;
    let reps = replicate(&prepared, execution);
    let estimates = aggregate_replications(&config.analyses, &reps);

    let mut failures = Vec::new();
    for rep in &reps {
        for (label, est) in config.analyses.iter().zip(&rep.estimates) {
            if let Err(e) = est {
                failures.push(FailureNote {
                    replication: rep.replication,
                    label: *label,
                    error: e.clone(),
                });
            }
        }
    }
    check_failures(&estimates, config.replications)?;

    let refusal_by_replication = refusal_observations(&reps);
    let mut notes = vec![ACCEPTANCE_NOTE.to_string()];
    if config
        .analyses
        .iter()
        .any(|l| matches!(l, EstimandLabel::PerProtocol | EstimandLabel::AsTreated))
    {
        notes.push(PER_PROTOCOL_NOTE.to_string());
    }
    if let Some(schedule) = &config.cohort.schedule {
        if let Alignment::Mismatch(off) = check_schedule_alignment(&[config.design.endpoint_tick], schedule, 0) {
            notes.push(format!("endpoint ticks {off:?} do not coincide with a cohort measurement"));
        }
    }

    let sweep = match &config.sweep {
        None => None,
        Some(sw) => {
            let mut points = Vec::with_capacity(sw.values.len());
            for &value in &sw.values {
                let cell = PreparedScenario::new(&config.with_sweep_value(sw.parameter, value))?;
                let reps = replicate(&cell, execution);
                let estimates = aggregate_replications(&config.analyses, &reps);
                check_failures(&estimates, config.replications)?;
                points.push(SweepPoint {
                    value,
                    estimates,
                    refusal: summarize_refusal(&refusal_observations(&reps)),
                });
            }
            Some(SweepResult {
                parameter: sw.parameter,
                points,
            })
        }
    };

    Ok(ScenarioResult {
        name: config.name.clone(),
        master_seed: config.master_seed,
        replications: config.replications,
        estimates,
        refusal: summarize_refusal(&refusal_by_replication),
        refusal_by_replication,
        timeline: summarize_timeline(&reps),
        failures,
        sweep,
        notes,
    })
}
