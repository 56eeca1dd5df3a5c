//! Synthetic patient populations and brute-force estimand truth.
//!
//! Every patient carries both potential outcomes and a latent uniform draw
//! `accept_draw`; the patient accepts an offer iff `accept_draw < pi_accept`.
//! Compliance is therefore a fixed patient attribute and complier truth can be
//! computed exactly.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, tag};
use crate::stats::{logistic, logit};

/// Number of covariate draws used when calibrating an acceptance intercept.
pub const CALIBRATION_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateDistribution {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl CovariateDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateDistribution::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            CovariateDistribution::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    pub distribution: CovariateDistribution,
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, distribution: CovariateDistribution) -> Self {
        Self {
            name: name.into(),
            distribution,
        }
    }

    pub(crate) fn check(&self, path: &str, errs: &mut Vec<String>) {
        if self.name.trim().is_empty() {
            errs.push(format!("{path}.name: must be non-empty"));
        }
        match self.distribution {
            CovariateDistribution::Normal { mean, sd } => {
                if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
                    errs.push(format!("{path}.distribution: normal needs finite mean and sd > 0"));
                }
            }
            CovariateDistribution::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) {
                    errs.push(format!("{path}.distribution: bernoulli p must lie in [0, 1]"));
                }
            }
            CovariateDistribution::Uniform { lo, hi } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    errs.push(format!("{path}.distribution: uniform needs finite lo < hi"));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// Potential-outcome model.
///
/// Continuous: `y0 = control_level + β·x + noise_sd·ε`, `y1 = y0 + Δ + h·x`.
/// Binary: the same linear predictor is a risk; `y0` and `y1` share one
/// uniform draw so the individual effect is monotone. Effects are risk
/// differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub kind: OutcomeKind,
    pub control_level: f64,
    pub treatment_effect: f64,
    #[serde(default)]
    pub covariate_coefs: Vec<f64>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub effect_heterogeneity: Option<Vec<f64>>,
}

fn default_noise_sd() -> f64 {
    1.0
}

impl OutcomeModel {
    pub fn continuous(control_level: f64, treatment_effect: f64, noise_sd: f64) -> Self {
        Self {
            kind: OutcomeKind::Continuous,
            control_level,
            treatment_effect,
            covariate_coefs: Vec::new(),
            noise_sd,
            effect_heterogeneity: None,
        }
    }

    pub fn binary(control_risk: f64, risk_difference: f64) -> Self {
        Self {
            kind: OutcomeKind::Binary,
            control_level: control_risk,
            treatment_effect: risk_difference,
            covariate_coefs: Vec::new(),
            noise_sd: 1.0,
            effect_heterogeneity: None,
        }
    }

    pub fn with_covariate_coefs(mut self, coefs: Vec<f64>) -> Self {
        self.covariate_coefs = coefs;
        self
    }

    pub fn with_effect_heterogeneity(mut self, modifiers: Vec<f64>) -> Self {
        self.effect_heterogeneity = Some(modifiers);
        self
    }

    pub(crate) fn check(&self, n_cov: usize, path: &str, errs: &mut Vec<String>) {
        check_coefs(&self.covariate_coefs, n_cov, &format!("{path}.covariate_coefs"), errs);
        if let Some(h) = &self.effect_heterogeneity {
            check_coefs(h, n_cov, &format!("{path}.effect_heterogeneity"), errs);
        }
        if !self.control_level.is_finite() || !self.treatment_effect.is_finite() {
            errs.push(format!("{path}: control_level and treatment_effect must be finite"));
        }
        if self.kind == OutcomeKind::Continuous && !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            errs.push(format!("{path}.noise_sd: must be > 0"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceModel {
    /// Log-odds of acceptance at x = 0.
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub covariate_coefs: Vec<f64>,
    /// When set, the intercept is recalibrated so the marginal acceptance
    /// rate hits this value.
    #[serde(default)]
    pub target_marginal_rate: Option<f64>,
}

impl AcceptanceModel {
    /// Constant acceptance probability `rate` for every patient.
    pub fn constant(rate: f64) -> Self {
        let intercept = if rate >= 1.0 { f64::INFINITY } else { logit(rate) };
        Self {
            intercept,
            covariate_coefs: Vec::new(),
            target_marginal_rate: None,
        }
    }

    pub fn with_intercept(intercept: f64, coefs: Vec<f64>) -> Self {
        Self {
            intercept,
            covariate_coefs: coefs,
            target_marginal_rate: None,
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        logistic(self.intercept + dot(&self.covariate_coefs, x))
    }

    fn has_covariate_effect(&self) -> bool {
        self.covariate_coefs.iter().any(|c| *c != 0.0)
    }

    /// Returns a copy whose intercept honours `target_marginal_rate`, if set.
    pub fn resolved(&self, covariates: &[CovariateSpec], seed: u64) -> Result<AcceptanceModel> {
        match self.target_marginal_rate {
            None => Ok(self.clone()),
            Some(rate) if rate >= 1.0 => Ok(AcceptanceModel {
                intercept: f64::INFINITY,
                covariate_coefs: self.covariate_coefs.clone(),
                target_marginal_rate: Some(rate),
            }),
            Some(rate) => {
                let intercept = calibrate_acceptance_intercept(self, covariates, rate, seed)?;
                Ok(AcceptanceModel {
                    intercept,
                    covariate_coefs: self.covariate_coefs.clone(),
                    target_marginal_rate: Some(rate),
                })
            }
        }
    }

    pub(crate) fn check(&self, n_cov: usize, path: &str, errs: &mut Vec<String>) {
        check_coefs(&self.covariate_coefs, n_cov, &format!("{path}.covariate_coefs"), errs);
        if self.intercept.is_nan() {
            errs.push(format!("{path}.intercept: must be a number"));
        }
        if let Some(r) = self.target_marginal_rate {
            if !(r > 0.0 && r <= 1.0) {
                errs.push(format!("{path}.target_marginal_rate: must lie in (0, 1]"));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiomarkerModel {
    pub prevalence: f64,
    /// Optional log-odds shifts; the intercept is `logit(prevalence)`.
    #[serde(default)]
    pub covariate_coefs: Option<Vec<f64>>,
}

impl BiomarkerModel {
    pub fn with_prevalence(prevalence: f64) -> Self {
        Self {
            prevalence,
            covariate_coefs: None,
        }
    }

    fn probability(&self, x: &[f64]) -> f64 {
        match &self.covariate_coefs {
            Some(c) if c.iter().any(|v| *v != 0.0) && self.prevalence > 0.0 && self.prevalence < 1.0 => {
                logistic(logit(self.prevalence) + dot(c, x))
            }
            _ => self.prevalence,
        }
    }

    pub(crate) fn check(&self, n_cov: usize, path: &str, errs: &mut Vec<String>) {
        if !(0.0..=1.0).contains(&self.prevalence) {
            errs.push(format!("{path}.prevalence: must lie in [0, 1]"));
        }
        if let Some(c) = &self.covariate_coefs {
            check_coefs(c, n_cov, &format!("{path}.covariate_coefs"), errs);
        }
    }
}

/// Everything needed to generate a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    pub outcome: OutcomeModel,
    pub acceptance: AcceptanceModel,
    #[serde(default)]
    pub biomarker: Option<BiomarkerModel>,
}

impl PopulationSpec {
    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<PatientRecord>> {
        generate_population(
            n,
            &self.covariates,
            &self.outcome,
            &self.acceptance,
            self.biomarker.as_ref(),
            seed,
        )
    }

    pub fn validation_errors(&self, path: &str) -> Vec<String> {
        let mut errs = Vec::new();
        let mut names = std::collections::BTreeSet::new();
        for (i, c) in self.covariates.iter().enumerate() {
            c.check(&format!("{path}.covariates[{i}]"), &mut errs);
            if !names.insert(c.name.as_str()) {
                errs.push(format!("{path}.covariates[{i}].name: duplicate covariate '{}'", c.name));
            }
        }
        let k = self.covariates.len();
        self.outcome.check(k, &format!("{path}.outcome"), &mut errs);
        self.acceptance.check(k, &format!("{path}.acceptance"), &mut errs);
        if let Some(b) = &self.biomarker {
            b.check(k, &format!("{path}.biomarker"), &mut errs);
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: u64,
    pub x: Vec<f64>,
    pub y0: f64,
    pub y1: f64,
    pub pi_accept: f64,
    /// Latent uniform draw fixing whether this patient accepts an offer.
    pub accept_draw: f64,
    pub biomarker: Option<bool>,
}

impl PatientRecord {
    /// Would accept the alternative treatment if offered.
    pub fn is_complier(&self) -> bool {
        self.accept_draw < self.pi_accept
    }

    pub fn effect(&self) -> f64 {
        self.y1 - self.y0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEstimands {
    pub ace_received: f64,
    pub ace_offered: f64,
    pub cace: f64,
    pub acceptance_rate: f64,
}

fn dot(coefs: &[f64], x: &[f64]) -> f64 {
    coefs.iter().zip(x).map(|(c, v)| c * v).sum()
}

fn check_coefs(coefs: &[f64], n_cov: usize, path: &str, errs: &mut Vec<String>) {
    if !coefs.is_empty() && coefs.len() != n_cov {
        errs.push(format!(
            "{path}: expected {n_cov} coefficients (one per covariate) or none, got {}",
            coefs.len()
        ));
    }
    if coefs.iter().any(|c| !c.is_finite()) {
        errs.push(format!("{path}: coefficients must be finite"));
    }
}

fn draw_covariates<R: Rng + ?Sized>(covariates: &[CovariateSpec], rng: &mut R) -> Vec<f64> {
    covariates.iter().map(|c| c.distribution.sample(rng)).collect()
}

/// Generates `n` patients with sequential ids `0..n`.
pub fn generate_population(
    n: usize,
    covariates: &[CovariateSpec],
    outcome: &OutcomeModel,
    acceptance: &AcceptanceModel,
    biomarker: Option<&BiomarkerModel>,
    seed: u64,
) -> Result<Vec<PatientRecord>> {
    let spec_errs = {
        let mut errs = Vec::new();
        for (i, c) in covariates.iter().enumerate() {
            c.check(&format!("covariates[{i}]"), &mut errs);
        }
        outcome.check(covariates.len(), "outcome", &mut errs);
        acceptance.check(covariates.len(), "acceptance", &mut errs);
        if let Some(b) = biomarker {
            b.check(covariates.len(), "biomarker", &mut errs);
        }
        errs
    };
    if !spec_errs.is_empty() {
        return Err(Error::InvalidInput(spec_errs.join("; ")));
    }

    let mut cov_rng = rng_from_seed(derive_seed(seed, tag::COVARIATES));
    let mut out_rng = rng_from_seed(derive_seed(seed, tag::OUTCOME));
    let mut acc_rng = rng_from_seed(derive_seed(seed, tag::ACCEPTANCE));
    let mut bio_rng = rng_from_seed(derive_seed(seed, tag::BIOMARKER));
    let noise = Normal::new(0.0, outcome.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let x = draw_covariates(covariates, &mut cov_rng);
        let base = outcome.control_level + dot(&outcome.covariate_coefs, &x);
        let effect = outcome.treatment_effect
            + outcome
                .effect_heterogeneity
                .as_deref()
                .map_or(0.0, |h| dot(h, &x));
        let (y0, y1) = match outcome.kind {
            OutcomeKind::Continuous => {
                let y0 = base + noise.sample(&mut out_rng);
                (y0, y0 + effect)
            }
            OutcomeKind::Binary => {
                let p0 = base;
                let p1 = base + effect;
                for (arm, p) in [("control", p0), ("treated", p1)] {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::ModelMisspecification {
                            patient: i,
                            detail: format!("{arm} risk {p:.6} lies outside [0, 1]"),
                        });
                    }
                }
                let v: f64 = out_rng.random();
                (f64::from(u8::from(v < p0)), f64::from(u8::from(v < p1)))
            }
        };
        let pi_accept = acceptance.probability(&x);
        let accept_draw: f64 = acc_rng.random();
        let biomarker = biomarker.map(|b| {
            let p = b.probability(&x);
            bio_rng.random::<f64>() < p
        });
        records.push(PatientRecord {
            id: i as u64,
            x,
            y0,
            y1,
            pi_accept,
            accept_draw,
            biomarker,
        });
    }
    Ok(records)
}

/// Finds the acceptance intercept whose marginal acceptance rate equals
/// `target_rate`, by bisection over a fixed Monte Carlo covariate sample.
pub fn calibrate_acceptance_intercept(
    acceptance: &AcceptanceModel,
    covariates: &[CovariateSpec],
    target_rate: f64,
    seed: u64,
) -> Result<f64> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidInput(format!(
            "calibration target {target_rate} must lie strictly inside (0, 1)"
        )));
    }
    if covariates.is_empty() || !acceptance.has_covariate_effect() {
        return Ok(logit(target_rate));
    }
    let mut errs = Vec::new();
    acceptance.check(covariates.len(), "acceptance", &mut errs);
    if !errs.is_empty() {
        return Err(Error::InvalidInput(errs.join("; ")));
    }

    let mut rng = rng_from_seed(seed);
    let linear: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| dot(&acceptance.covariate_coefs, &draw_covariates(covariates, &mut rng)))
        .collect();
    let marginal = |b: f64| linear.iter().map(|l| logistic(b + l)).sum::<f64>() / linear.len() as f64;

    const BOUND: f64 = 60.0;
    let (mut lo, mut hi) = (-BOUND, BOUND);
    let (f_lo, f_hi) = (marginal(lo), marginal(hi));
    if target_rate < f_lo || target_rate > f_hi {
        return Err(Error::Calibration {
            target: target_rate,
            lo: f_lo,
            hi: f_hi,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if marginal(mid) < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Ground-truth estimands by direct summation over `population`.
pub fn compute_true_estimands(population: &[PatientRecord]) -> Result<TrueEstimands> {
    if population.is_empty() {
        return Err(Error::InvalidInput("population is empty".into()));
    }
    let n = population.len() as f64;
    let ace_received = population.iter().map(PatientRecord::effect).sum::<f64>() / n;
    let ace_offered = population.iter().map(|p| p.pi_accept * p.effect()).sum::<f64>() / n;
    let acceptance_rate = population.iter().map(|p| p.pi_accept).sum::<f64>() / n;
    let (sum, count) = population
        .iter()
        .filter(|p| p.is_complier())
        .fold((0.0, 0usize), |(s, c), p| (s + p.effect(), c + 1));
    if count == 0 {
        return Err(Error::Undefined("no compliers in population; CACE undefined".into()));
    }
    Ok(TrueEstimands {
        ace_received,
        ace_offered,
        cace: sum / count as f64,
        acceptance_rate,
    })
}
