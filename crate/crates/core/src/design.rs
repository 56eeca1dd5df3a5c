//! Dilution-aware design calculators.
//!
//! Refusal in the offered arm dilutes the offered-treatment effect to
//! `acceptance · Δ`, so sample sizes are computed on that diluted effect.
//! Formulas use the normal approximation.

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortRegistry, Tick};
use crate::error::{Error, Result};
use crate::estimators::{estimate, estimate_itt_at, estimate_per_protocol_at, AnalysisOptions, EstimandLabel};
use crate::exec::Execution;
use crate::population::PopulationSpec;
use crate::randomization::SamplingApproach;
use crate::seed::{derive_seed, tag};
use crate::stats::normal_quantile;
use crate::trial::{execute_trial, observed_refusal_rate, TrialData, TrialDesign, TrialRow};

/// Largest tolerated fraction of failed replications in Monte Carlo power.
const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectAssumption {
    /// Mean difference `delta` with common standard deviation `sd`.
    Continuous { delta: f64, sd: f64 },
    /// Control risk `p0` and full-compliance treated risk `p1`.
    Binary { p0: f64, p1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignAssumptions {
    pub effect: EffectAssumption,
    /// Two-sided significance level.
    pub alpha: f64,
    pub power_target: f64,
    pub planned_acceptance: f64,
}

impl DesignAssumptions {
    pub fn continuous(delta: f64, sd: f64, alpha: f64, power_target: f64, planned_acceptance: f64) -> Self {
        Self {
            effect: EffectAssumption::Continuous { delta, sd },
            alpha,
            power_target,
            planned_acceptance,
        }
    }

    pub fn binary(p0: f64, p1: f64, alpha: f64, power_target: f64, planned_acceptance: f64) -> Self {
        Self {
            effect: EffectAssumption::Binary { p0, p1 },
            alpha,
            power_target,
            planned_acceptance,
        }
    }

    pub fn with_acceptance(mut self, acceptance: f64) -> Self {
        self.planned_acceptance = acceptance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errs.push("alpha must lie in (0, 1)".to_string());
        }
        if !(self.power_target > 0.5 && self.power_target < 1.0) {
            errs.push("power_target must lie in (0.5, 1)".to_string());
        }
        if !(self.planned_acceptance > 0.0 && self.planned_acceptance <= 1.0) {
            errs.push("planned_acceptance must lie in (0, 1]".to_string());
        }
        match self.effect {
            EffectAssumption::Continuous { delta, sd } => {
                if !(sd > 0.0) {
                    errs.push("sd must be positive".into());
                }
                if delta == 0.0 || !delta.is_finite() {
                    errs.push("delta must be finite and non-zero".into());
                }
            }
            EffectAssumption::Binary { p0, p1 } => {
                if !(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0) {
                    errs.push("p0 and p1 must lie strictly inside (0, 1)".into());
                }
                if p0 == p1 {
                    errs.push("p0 and p1 must differ".into());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(errs.join("; ")))
        }
    }
}

/// Calculator output, serialized as `{n_per_arm, inflation_factor, inputs, warnings}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub n_per_arm: usize,
    /// `n_per_arm` relative to the full-acceptance sample size.
    pub inflation_factor: f64,
    pub inputs: DesignAssumptions,
    pub warnings: Vec<String>,
}

fn ceil_count(x: f64) -> usize {
    // Guard against values a hair above an integer from rounding.
    (x - 1e-9).ceil().max(1.0) as usize
}

fn z_sum(a: &DesignAssumptions) -> (f64, f64) {
    (normal_quantile(1.0 - a.alpha / 2.0), normal_quantile(a.power_target))
}

fn continuous_n(a: &DesignAssumptions, delta: f64, sd: f64) -> usize {
    let (za, zb) = z_sum(a);
    let diluted = a.planned_acceptance * delta;
    ceil_count(2.0 * sd * sd * (za + zb).powi(2) / (diluted * diluted))
}

fn binary_n(a: &DesignAssumptions, p0: f64, p1: f64) -> Result<usize> {
    let (za, zb) = z_sum(a);
    let p1d = a.planned_acceptance * p1 + (1.0 - a.planned_acceptance) * p0;
    if (p1d - p0).abs() < 1e-12 {
        return Err(Error::Infeasible(format!(
            "diluted treated risk {p1d} equals control risk {p0}"
        )));
    }
    let pbar = (p0 + p1d) / 2.0;
    let num = za * (2.0 * pbar * (1.0 - pbar)).sqrt() + zb * (p0 * (1.0 - p0) + p1d * (1.0 - p1d)).sqrt();
    Ok(ceil_count(num * num / ((p1d - p0) * (p1d - p0))))
}

fn sample_size(a: &DesignAssumptions) -> Result<usize> {
    match a.effect {
        EffectAssumption::Continuous { delta, sd } => Ok(continuous_n(a, delta, sd)),
        EffectAssumption::Binary { p0, p1 } => binary_n(a, p0, p1),
    }
}

fn result_for(a: &DesignAssumptions) -> Result<SampleSizeResult> {
    a.validate()?;
    let n = sample_size(a)?;
    let full = sample_size(&a.with_acceptance(1.0))?;
    let mut warnings = Vec::new();
    if a.planned_acceptance < 1.0 {
        warnings.push(format!(
            "sized for the diluted offered-treatment effect at planned acceptance {}",
            a.planned_acceptance
        ));
    }
    Ok(SampleSizeResult {
        n_per_arm: n,
        inflation_factor: n as f64 / full as f64,
        inputs: *a,
        warnings,
    })
}

/// Per-arm n for a continuous outcome:
/// `ceil(2σ²(z_{1−α/2} + z_power)² / (acceptance·Δ)²)`.
pub fn sample_size_continuous(a: &DesignAssumptions) -> Result<SampleSizeResult> {
    if !matches!(a.effect, EffectAssumption::Continuous { .. }) {
        return Err(Error::InvalidInput("continuous calculator needs a continuous effect".into()));
    }
    result_for(a)
}

/// Per-arm n for a binary outcome from the pooled-variance two-proportion
/// formula, applied to `p0` and the diluted treated risk
/// `acceptance·p1 + (1 − acceptance)·p0`.
pub fn sample_size_binary(a: &DesignAssumptions) -> Result<SampleSizeResult> {
    if !matches!(a.effect, EffectAssumption::Binary { .. }) {
        return Err(Error::InvalidInput("binary calculator needs a binary effect".into()));
    }
    result_for(a)
}

/// Sample size for whichever outcome type `a` describes.
pub fn sample_size_for(a: &DesignAssumptions) -> Result<SampleSizeResult> {
    result_for(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub power: f64,
    pub mc_se: f64,
    pub replications: usize,
    pub failures: usize,
}

impl PowerEstimate {
    fn from_outcomes(outcomes: &[Option<bool>]) -> Result<Self> {
        let total = outcomes.len();
        let ok: Vec<bool> = outcomes.iter().flatten().copied().collect();
        let failures = total - ok.len();
        if failures as f64 > MAX_FAILURE_FRACTION * total as f64 {
            return Err(Error::Instability { failures, total });
        }
        let p = ok.iter().filter(|r| **r).count() as f64 / ok.len() as f64;
        Ok(Self {
            power: p,
            mc_se: (p * (1.0 - p) / ok.len() as f64).sqrt(),
            replications: total,
            failures,
        })
    }
}

/// Enrolls a fresh population (everyone consents, enrollment tick = index
/// when `staggered`, else 0) and runs `design` on it.
pub(crate) fn simulate_once(
    population: &PopulationSpec,
    design: &TrialDesign,
    cohort_size: usize,
    staggered: bool,
    seed: u64,
) -> Result<(TrialData, Vec<crate::population::PatientRecord>)> {
    let records = population.generate(cohort_size, derive_seed(seed, tag::POPULATION))?;
    let mut registry = CohortRegistry::new(population.covariate_names());
    for (i, r) in records.iter().enumerate() {
        registry.enroll_patient(r.clone(), true, if staggered { i as Tick } else { 0 })?;
    }
    let ex = execute_trial(design, &mut registry, &records, derive_seed(seed, tag::EXECUTION))?;
    Ok((ex.data, records))
}

/// Monte Carlo power of `analysis` at `n_per_arm`: the fraction of
/// replications whose two-sided level-`alpha` interval excludes zero.
#[allow(clippy::too_many_arguments)]
pub fn mc_power(
    design: &TrialDesign,
    population: &PopulationSpec,
    n_per_arm: usize,
    replications: usize,
    analysis: EstimandLabel,
    alpha: f64,
    seed: u64,
    execution: Execution,
) -> Result<PowerEstimate> {
    if replications < 100 {
        return Err(Error::InvalidInput("mc_power needs at least 100 replications".into()));
    }
    if n_per_arm == 0 {
        return Err(Error::InvalidInput("n_per_arm must be at least 1".into()));
    }
    let population = PopulationSpec {
        acceptance: population.acceptance.resolved(&population.covariates, derive_seed(seed, u64::MAX))?,
        ..population.clone()
    };
    let design = TrialDesign {
        target_n: 2 * n_per_arm,
        ..design.clone()
    };
    let outcomes = execution.map_indexed(replications, |r| {
        let rep_seed = derive_seed(seed, r as u64);
        let (data, _) = simulate_once(&population, &design, 2 * n_per_arm, false, rep_seed).ok()?;
        let opts = AnalysisOptions {
            level: 1.0 - alpha,
            seed: derive_seed(rep_seed, tag::ANALYSIS),
            execution: Execution::Serial,
            ..Default::default()
        };
        estimate(analysis, &data, &opts).ok().map(|e| e.rejects_null())
    });
    PowerEstimate::from_outcomes(&outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptivePlan {
    pub assumptions: DesignAssumptions,
    pub review_ticks: Vec<Tick>,
    /// Total patients available in a closed cohort.
    #[serde(default)]
    pub cohort_capacity: Option<usize>,
    #[serde(default = "default_min_interim")]
    pub min_interim_offered: usize,
}

fn default_min_interim() -> usize {
    10
}

impl AdaptivePlan {
    pub fn new(assumptions: DesignAssumptions, review_ticks: Vec<Tick>, cohort_capacity: Option<usize>) -> Self {
        Self {
            assumptions,
            review_ticks,
            cohort_capacity,
            min_interim_offered: default_min_interim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reestimation {
    pub n_per_arm: usize,
    pub planned_n_per_arm: usize,
    pub observed_acceptance: f64,
    pub already_randomized_per_arm: usize,
    /// `n_per_arm / planned_n_per_arm`.
    pub inflation_factor: f64,
}

/// Recomputes n per arm with the planned acceptance replaced by the pooled
/// acceptance observed in `interim_rows`.
pub fn adaptive_sample_size_reestimation(plan: &AdaptivePlan, interim_rows: &[TrialRow]) -> Result<Reestimation> {
    plan.assumptions.validate()?;
    if plan.review_ticks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("review_ticks must be strictly increasing".into()));
    }
    let rate = observed_refusal_rate(interim_rows)?;
    if rate.offered < plan.min_interim_offered {
        return Err(Error::InvalidInput(format!(
            "interim has {} offered patients, need at least {}",
            rate.offered, plan.min_interim_offered
        )));
    }
    let observed = rate.acceptance();
    if observed <= 0.0 {
        return Err(Error::Infeasible("every offered patient refused; no sample size can restore power".into()));
    }
    let planned = sample_size(&plan.assumptions)?;
    let updated = sample_size(&plan.assumptions.with_acceptance(observed))?;
    let n1 = interim_rows.iter().filter(|r| r.z == 1).count();
    let already = n1.max(interim_rows.len() - n1);
    let n = updated.max(already);
    if let Some(cap) = plan.cohort_capacity {
        if 2 * n > cap {
            return Err(Error::CapacityExceeded {
                required: 2 * n,
                capacity: cap,
            });
        }
    }
    Ok(Reestimation {
        n_per_arm: n,
        planned_n_per_arm: planned,
        observed_acceptance: observed,
        already_randomized_per_arm: already,
        inflation_factor: n as f64 / planned as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptivePowerEstimate {
    pub power: PowerEstimate,
    pub mean_n_per_arm: f64,
    pub capacity_breaches: usize,
}

/// Monte Carlo power of a recruiting-cohort design that re-estimates its
/// sample size at each review tick.
///
/// Patients enter one per tick and are randomized on entry, so the trial
/// grows as a prefix of one long allocation sequence. At each review the
/// sample size is recomputed from all offered patients so far; recruitment
/// stops once both arms reach the current target.
#[allow(clippy::too_many_arguments)]
pub fn mc_power_adaptive(
    plan: &AdaptivePlan,
    design: &TrialDesign,
    population: &PopulationSpec,
    replications: usize,
    analysis: EstimandLabel,
    seed: u64,
    execution: Execution,
) -> Result<AdaptivePowerEstimate> {
    if replications < 100 {
        return Err(Error::InvalidInput("mc_power needs at least 100 replications".into()));
    }
    plan.assumptions.validate()?;
    let planned = sample_size(&plan.assumptions)?;
    let population = PopulationSpec {
        acceptance: population.acceptance.resolved(&population.covariates, derive_seed(seed, u64::MAX))?,
        ..population.clone()
    };
    let pool = plan.cohort_capacity.unwrap_or(16 * planned);
    let design = TrialDesign {
        target_n: pool,
        approach: SamplingApproach::OnEntry,
        ..design.clone()
    };
    let alpha = plan.assumptions.alpha;

    let runs = execution.map_indexed(replications, |r| -> Option<(bool, usize, bool)> {
        let rep_seed = derive_seed(seed, r as u64);
        let (data, _) = simulate_once(&population, &design, pool, true, rep_seed).ok()?;
        let rows = &data.rows;
        let mut target = planned;
        let mut breached = false;
        for &tick in &plan.review_ticks {
            // recruitment already stopped before this review
            let needed = 2 * target;
            if needed <= rows.len() && rows[needed - 1].time < tick {
                break;
            }
            let upto = rows.partition_point(|row| row.time <= tick);
            let interim = &rows[..upto];
            match adaptive_sample_size_reestimation(plan, interim) {
                Ok(re) => target = re.n_per_arm,
                Err(Error::CapacityExceeded { .. }) => {
                    breached = true;
                    target = pool / 2;
                    break;
                }
                Err(_) => {}
            }
        }
        let final_rows = rows[..(2 * target).min(rows.len())].to_vec();
        let trial = TrialData::new(data.covariate_names.clone(), final_rows);
        let opts = AnalysisOptions {
            level: 1.0 - alpha,
            seed: derive_seed(rep_seed, tag::ANALYSIS),
            execution: Execution::Serial,
            ..Default::default()
        };
        let reject = estimate(analysis, &trial, &opts).ok()?.rejects_null();
        Some((reject, target, breached))
    });

    let outcomes: Vec<Option<bool>> = runs.iter().map(|o| o.map(|r| r.0)).collect();
    let done: Vec<(bool, usize, bool)> = runs.into_iter().flatten().collect();
    let power = PowerEstimate::from_outcomes(&outcomes)?;
    Ok(AdaptivePowerEstimate {
        power,
        mean_n_per_arm: done.iter().map(|d| d.1 as f64).sum::<f64>() / done.len() as f64,
        capacity_breaches: done.iter().filter(|d| d.2).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmDirection {
    /// Larger outcomes are better; harm is a negative difference.
    #[default]
    HigherIsBetter,
    /// Larger outcomes are worse (e.g. event risk); harm is a positive difference.
    LowerIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NiDecision {
    pub point: f64,
    pub se: f64,
    /// One-sided confidence bound on the harm side.
    pub bound: f64,
    pub non_inferior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonInferiorityReport {
    pub margin: f64,
    pub alpha: f64,
    pub itt: NiDecision,
    pub per_protocol: Option<NiDecision>,
    pub per_protocol_error: Option<String>,
    pub caveat: String,
}

pub const NI_CAVEAT: &str = "the offered-treatment (ITT) effect is diluted by refusal and is anti-conservative for non-inferiority; read it alongside the per-protocol analysis";

fn ni_decide(point: f64, se: f64, margin: f64, alpha: f64, direction: HarmDirection) -> NiDecision {
    let z = normal_quantile(1.0 - alpha);
    let (bound, ok) = match direction {
        HarmDirection::HigherIsBetter => {
            let b = point - z * se;
            (b, b > -margin)
        }
        HarmDirection::LowerIsBetter => {
            let b = point + z * se;
            (b, b < margin)
        }
    };
    NiDecision {
        point,
        se,
        bound,
        non_inferior: ok,
    }
}

/// Non-inferiority decisions on the ITT and per-protocol analysis sets at
/// one-sided level `alpha`.
pub fn noninferiority_decision(
    data: &TrialData,
    margin: f64,
    alpha: f64,
    direction: HarmDirection,
) -> Result<NonInferiorityReport> {
    if !(margin > 0.0) {
        return Err(Error::InvalidInput("margin must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidInput("one-sided alpha must lie in (0, 0.5)".into()));
    }
    let itt = estimate_itt_at(data, 0.95)?;
    let itt = ni_decide(itt.point, itt.se, margin, alpha, direction);
    let (per_protocol, per_protocol_error) = match estimate_per_protocol_at(data, 0.95) {
        Ok(pp) => (Some(ni_decide(pp.point, pp.se, margin, alpha, direction)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(NonInferiorityReport {
        margin,
        alpha,
        itt,
        per_protocol,
        per_protocol_error,
        caveat: NI_CAVEAT.into(),
    })
}
