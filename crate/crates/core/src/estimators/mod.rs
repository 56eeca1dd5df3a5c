//! The estimand panel.
//!
//! | label             | targets                                    |
//! |-------------------|--------------------------------------------|
//! | `ACE_Offered`     | effect of being (offered to be) treated    |
//! | `PerProtocol`     | accepters vs all controls (biased)         |
//! | `AsTreated`       | exposed vs unexposed (biased)              |
//! | `CACE_Wald`       | complier effect, ratio estimator           |
//! | `CACE_2SPS`       | complier effect, predictor substitution    |
//! | `CACE_2SRI`       | complier effect, residual inclusion        |
//! | `CACE_Propensity` | complier effect, sensitivity analysis      |
//!
//! All effects are differences on the outcome scale (risk differences for
//! binary outcomes).

mod bootstrap;
mod contrasts;
mod iv;
mod propensity;
pub mod regression;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_ci, BootstrapSummary, MIN_BOOTSTRAP_REPS};
pub use contrasts::{
    estimate_as_treated, estimate_itt, estimate_itt_at, estimate_per_protocol, estimate_per_protocol_at,
    estimate_wald_cace, estimate_wald_cace_at, itt_point, wald_point,
};
pub use iv::{estimate_iv_2sps, estimate_iv_2sri, first_stage, iv_2sps_point, iv_2sri_point, FirstStage};
pub use propensity::{propensity_accepter_analysis, select_predicted_accepters, PropensitySelection};
pub use regression::{fit_logistic_irls, fit_ols, predict_logistic, DesignMatrix, RegressionFit};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::stats::normal_quantile;
use crate::trial::TrialData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimandLabel {
    #[serde(rename = "ACE_Offered")]
    AceOffered,
    #[serde(rename = "PerProtocol")]
    PerProtocol,
    #[serde(rename = "AsTreated")]
    AsTreated,
    #[serde(rename = "CACE_Wald")]
    CaceWald,
    #[serde(rename = "CACE_2SPS")]
    Cace2sps,
    #[serde(rename = "CACE_2SRI")]
    Cace2sri,
    #[serde(rename = "CACE_Propensity")]
    CacePropensity,
}

impl EstimandLabel {
    pub const ALL: [EstimandLabel; 7] = [
        EstimandLabel::AceOffered,
        EstimandLabel::PerProtocol,
        EstimandLabel::AsTreated,
        EstimandLabel::CaceWald,
        EstimandLabel::Cace2sps,
        EstimandLabel::Cace2sri,
        EstimandLabel::CacePropensity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimandLabel::AceOffered => "ACE_Offered",
            EstimandLabel::PerProtocol => "PerProtocol",
            EstimandLabel::AsTreated => "AsTreated",
            EstimandLabel::CaceWald => "CACE_Wald",
            EstimandLabel::Cace2sps => "CACE_2SPS",
            EstimandLabel::Cace2sri => "CACE_2SRI",
            EstimandLabel::CacePropensity => "CACE_Propensity",
        }
    }

    /// Human-readable description of what the label estimates.
    pub fn describe(&self) -> &'static str {
        match self {
            EstimandLabel::AceOffered => {
                "average causal effect of the offered treatment: the effect of being (offered to be) treated, not of receiving treatment"
            }
            EstimandLabel::PerProtocol => "offered-arm accepters versus all controls; refusers excluded",
            EstimandLabel::AsTreated => "patients who received the alternative treatment versus those who did not",
            EstimandLabel::CaceWald => "complier average causal effect, offered-treatment effect divided by acceptance proportion",
            EstimandLabel::Cace2sps => "complier average causal effect, two-stage predictor substitution",
            EstimandLabel::Cace2sri => "complier average causal effect, two-stage residual inclusion",
            EstimandLabel::CacePropensity => {
                "complier average causal effect, accepters versus controls predicted to accept (sensitivity analysis)"
            }
        }
    }
}

impl fmt::Display for EstimandLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimandLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimandLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimand label '{s}'")))
    }
}

/// One labelled estimate. Serializes with the fixed field set
/// `estimand, point, se, ci_lo, ci_hi, n_offered, n_control, method, warnings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub estimand: EstimandLabel,
    pub point: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_offered: usize,
    pub n_control: usize,
    pub method: String,
    pub warnings: Vec<String>,
}

impl EstimateResult {
    /// Normal-theory interval `point ± z·se`.
    pub(crate) fn normal(
        estimand: EstimandLabel,
        point: f64,
        se: f64,
        level: f64,
        counts: (usize, usize),
        method: impl Into<String>,
    ) -> Result<Self> {
        if !point.is_finite() || !(se >= 0.0) || !se.is_finite() {
            return Err(Error::Undefined(format!(
                "{estimand}: non-finite estimate (point {point}, se {se})"
            )));
        }
        let z = normal_quantile(0.5 + level / 2.0);
        Ok(Self {
            estimand,
            point,
            se,
            ci_lo: point - z * se,
            ci_hi: point + z * se,
            n_offered: counts.0,
            n_control: counts.1,
            method: method.into(),
            warnings: Vec::new(),
        })
    }

    /// Interval from a bootstrap, widened to contain the point if needed.
    pub(crate) fn from_bootstrap(
        estimand: EstimandLabel,
        point: f64,
        boot: &BootstrapSummary,
        counts: (usize, usize),
        method: impl Into<String>,
    ) -> Self {
        let mut warnings = Vec::new();
        if boot.failures > 0 {
            warnings.push(format!("{} of {} bootstrap resamples failed", boot.failures, boot.reps));
        }
        let (mut lo, mut hi) = (boot.ci_lo, boot.ci_hi);
        if point < lo || point > hi {
            warnings.push("percentile interval widened to contain the point estimate".into());
            lo = lo.min(point);
            hi = hi.max(point);
        }
        Self {
            estimand,
            point,
            se: boot.se,
            ci_lo: lo,
            ci_hi: hi,
            n_offered: counts.0,
            n_control: counts.1,
            method: method.into(),
            warnings,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }

    /// Two-sided test of a zero effect at the interval's level.
    pub fn rejects_null(&self) -> bool {
        !self.contains(0.0)
    }
}

/// Shared knobs for running any estimator on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOptions {
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_bootstrap_reps")]
    pub bootstrap_reps: usize,
    /// Covariates used by the two-stage and propensity analyses.
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

fn default_level() -> f64 {
    0.95
}

fn default_bootstrap_reps() -> usize {
    200
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            level: default_level(),
            bootstrap_reps: default_bootstrap_reps(),
            covariates: Vec::new(),
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl AnalysisOptions {
    pub fn validation_errors(&self, path: &str) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.level > 0.0 && self.level < 1.0) {
            errs.push(format!("{path}.level: must lie strictly inside (0, 1)"));
        }
        if self.bootstrap_reps < MIN_BOOTSTRAP_REPS {
            errs.push(format!("{path}.bootstrap_reps: must be at least {MIN_BOOTSTRAP_REPS}"));
        }
        errs
    }
}

/// Runs the estimator behind `label`.
pub fn estimate(label: EstimandLabel, data: &TrialData, opts: &AnalysisOptions) -> Result<EstimateResult> {
    match label {
        EstimandLabel::AceOffered => estimate_itt_at(data, opts.level),
        EstimandLabel::PerProtocol => estimate_per_protocol_at(data, opts.level),
        EstimandLabel::AsTreated => estimate_as_treated(data, opts.level),
        EstimandLabel::CaceWald => estimate_wald_cace_at(data, opts.level),
        EstimandLabel::Cace2sps => estimate_iv_2sps(data, &opts.covariates, opts),
        EstimandLabel::Cace2sri => estimate_iv_2sri(data, &opts.covariates, opts),
        EstimandLabel::CacePropensity => propensity_accepter_analysis(data, &opts.covariates, opts.level),
    }
}

/// Difference in means of two groups with its standard error: the
/// unpooled risk-difference formula when every outcome is 0/1, otherwise the
/// pooled two-sample formula.
pub(crate) fn two_sample(treated: &[f64], control: &[f64]) -> Result<(f64, f64)> {
    let (n1, n0) = (treated.len(), control.len());
    if n1 == 0 || n0 == 0 {
        return Err(Error::Undefined("a comparison group is empty".into()));
    }
    let m1 = crate::stats::mean(treated);
    let m0 = crate::stats::mean(control);
    let binary = treated.iter().chain(control).all(|v| *v == 0.0 || *v == 1.0);
    let se = if binary {
        (m1 * (1.0 - m1) / n1 as f64 + m0 * (1.0 - m0) / n0 as f64).sqrt()
    } else {
        if n1 + n0 < 3 {
            return Err(Error::Undefined("too few observations for a pooled variance".into()));
        }
        let ss1: f64 = treated.iter().map(|v| (v - m1) * (v - m1)).sum();
        let ss0: f64 = control.iter().map(|v| (v - m0) * (v - m0)).sum();
        let pooled = (ss1 + ss0) / (n1 + n0 - 2) as f64;
        (pooled * (1.0 / n1 as f64 + 1.0 / n0 as f64)).sqrt()
    };
    Ok((m1 - m0, se))
}

pub(crate) fn arm_counts(data: &TrialData) -> (usize, usize) {
    let n1 = data.rows.iter().filter(|r| r.z == 1).count();
    (n1, data.rows.len() - n1)
}
