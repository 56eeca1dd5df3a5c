//! Two-stage instrumental-variable estimators with randomization as the
//! instrument for exposure.
//!
//! Stage one is a logistic model for exposure. Under one-sided
//! non-compliance no control is exposed, so the logistic likelihood for the
//! control arm is maximized at a fitted probability of exactly zero (the MLE
//! sits at infinity). We use that limit directly: controls get `d̂ = 0` and the
//! exposure model is fitted on the offered arm alone. Likewise an offered arm
//! where everyone accepts gets `d̂ = 1`. Separation driven by covariates is
//! still an error.

use super::bootstrap::bootstrap_ci;
use super::regression::{fit_logistic_irls, fit_ols, predict_logistic, DesignMatrix};
use super::{arm_counts, AnalysisOptions, EstimandLabel, EstimateResult};
use crate::error::{Error, Result};
use crate::trial::TrialData;

const IRLS_TOL: f64 = 1e-10;
const IRLS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStage {
    /// Predicted exposure, one per row.
    pub fitted: Vec<f64>,
    pub notes: Vec<String>,
}

fn covariate_columns(data: &TrialData, rows: &[usize], cov_idx: &[usize]) -> Vec<(String, Vec<f64>)> {
    cov_idx
        .iter()
        .map(|&j| {
            (
                data.covariate_names[j].clone(),
                rows.iter().map(|&i| data.rows[i].x[j]).collect(),
            )
        })
        .collect()
}

fn resolve_covariates(data: &TrialData, names: &[String]) -> Result<Vec<usize>> {
    names.iter().map(|n| data.covariate_index(n)).collect()
}

/// Fits the exposure model and returns predicted exposure for every row.
pub fn first_stage(data: &TrialData, cov_idx: &[usize]) -> Result<FirstStage> {
    let (n1, n0) = arm_counts(data);
    if n1 == 0 || n0 == 0 {
        return Err(Error::Undefined("instrument does not vary: an arm is empty".into()));
    }
    let mut notes = Vec::new();
    let mut fitted = vec![0.0; data.rows.len()];
    let one_sided = data.control_rows().all(|r| r.d == 0);

    if one_sided {
        let offered: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].z == 1).collect();
        let d: Vec<f64> = offered.iter().map(|&i| f64::from(data.rows[i].d)).collect();
        let exposed = d.iter().filter(|v| **v == 1.0).count();
        if exposed == 0 {
            return Err(Error::Undefined("no offered patient accepted; CACE undefined".into()));
        }
        notes.push("no control exposed: control exposure fixed at 0".into());
        if exposed == offered.len() {
            notes.push("every offered patient accepted: offered exposure fixed at 1".into());
            for &i in &offered {
                fitted[i] = 1.0;
            }
        } else {
            let x = DesignMatrix::with_intercept(offered.len(), covariate_columns(data, &offered, cov_idx))?;
            let fit = fit_logistic_irls(&x, &d, IRLS_TOL, IRLS_MAX_ITER)?;
            fit.require_converged()?;
            for (&i, p) in offered.iter().zip(predict_logistic(&fit, &x)) {
                fitted[i] = p;
            }
        }
    } else {
        let all: Vec<usize> = (0..data.rows.len()).collect();
        let mut cols = vec![("z".to_string(), data.rows.iter().map(|r| f64::from(r.z)).collect())];
        cols.extend(covariate_columns(data, &all, cov_idx));
        let x = DesignMatrix::with_intercept(all.len(), cols)?;
        let d: Vec<f64> = data.rows.iter().map(|r| f64::from(r.d)).collect();
        let fit = fit_logistic_irls(&x, &d, IRLS_TOL, IRLS_MAX_ITER)?;
        fit.require_converged()?;
        fitted = predict_logistic(&fit, &x);
        notes.push("controls exposed: logistic exposure model on randomization over all rows".into());
    }
    Ok(FirstStage { fitted, notes })
}

fn second_stage(
    data: &TrialData,
    cov_idx: &[usize],
    leading: Vec<(String, Vec<f64>)>,
    target: &str,
) -> Result<f64> {
    let all: Vec<usize> = (0..data.rows.len()).collect();
    let mut cols = leading;
    cols.extend(covariate_columns(data, &all, cov_idx));
    let x = DesignMatrix::with_intercept(data.rows.len(), cols)?;
    let y: Vec<f64> = data.rows.iter().map(|r| r.y).collect();
    let fit = fit_ols(&x, &y)?;
    Ok(fit.coefficient(target).expect("target column present"))
}

fn sps_point(data: &TrialData, cov_idx: &[usize]) -> Result<(f64, Vec<String>)> {
    let fs = first_stage(data, cov_idx)?;
    let point = second_stage(data, cov_idx, vec![("d_hat".into(), fs.fitted)], "d_hat")?;
    Ok((point, fs.notes))
}

fn sri_point(data: &TrialData, cov_idx: &[usize]) -> Result<(f64, Vec<String>)> {
    let mut fs = first_stage(data, cov_idx)?;
    let d: Vec<f64> = data.rows.iter().map(|r| f64::from(r.d)).collect();
    let resid: Vec<f64> = d.iter().zip(&fs.fitted).map(|(a, b)| a - b).collect();
    let mut cols = vec![("d".to_string(), d)];
    if resid.iter().all(|r| r.abs() < 1e-12) {
        fs.notes.push("first-stage residual is identically zero (no refusal): residual column dropped".into());
    } else {
        cols.push(("residual".into(), resid));
    }
    let point = second_stage(data, cov_idx, cols, "d")?;
    Ok((point, fs.notes))
}

/// Two-stage predictor substitution point estimate.
pub fn iv_2sps_point(data: &TrialData, covariates: &[String]) -> Result<f64> {
    let idx = resolve_covariates(data, covariates)?;
    sps_point(data, &idx).map(|p| p.0)
}

/// Two-stage residual inclusion point estimate.
pub fn iv_2sri_point(data: &TrialData, covariates: &[String]) -> Result<f64> {
    let idx = resolve_covariates(data, covariates)?;
    sri_point(data, &idx).map(|p| p.0)
}

type PointFn = fn(&TrialData, &[usize]) -> Result<(f64, Vec<String>)>;

fn estimate_two_stage(
    data: &TrialData,
    covariates: &[String],
    opts: &AnalysisOptions,
    label: EstimandLabel,
    point_fn: PointFn,
    method: &str,
) -> Result<EstimateResult> {
    let idx = resolve_covariates(data, covariates)?;
    let (point, notes) = point_fn(data, &idx)?;
    let boot = bootstrap_ci(
        |d| point_fn(d, &idx).map(|p| p.0),
        data,
        opts.bootstrap_reps,
        opts.level,
        opts.seed,
        opts.execution,
    )?;
    let mut method = method.to_string();
    if !covariates.is_empty() {
        method.push_str(&format!("; adjusted for {}", covariates.join(", ")));
    }
    for n in notes {
        method.push_str("; ");
        method.push_str(&n);
    }
    method.push_str(&format!("; stratified percentile bootstrap, {} resamples", opts.bootstrap_reps));
    Ok(EstimateResult::from_bootstrap(label, point, &boot, arm_counts(data), method))
}

/// Stage 1: logistic exposure model; stage 2: OLS of `y` on predicted
/// exposure (plus covariates). The estimate is the predicted-exposure
/// coefficient.
pub fn estimate_iv_2sps(data: &TrialData, covariates: &[String], opts: &AnalysisOptions) -> Result<EstimateResult> {
    estimate_two_stage(
        data,
        covariates,
        opts,
        EstimandLabel::Cace2sps,
        sps_point,
        "two-stage predictor substitution: y on predicted exposure",
    )
}

/// Stage 1 as 2SPS; stage 2: OLS of `y` on actual exposure and the
/// first-stage residual `d − d̂` (plus covariates). The estimate is the
/// exposure coefficient.
pub fn estimate_iv_2sri(data: &TrialData, covariates: &[String], opts: &AnalysisOptions) -> Result<EstimateResult> {
    estimate_two_stage(
        data,
        covariates,
        opts,
        EstimandLabel::Cace2sri,
        sri_point,
        "two-stage residual inclusion: y on exposure and first-stage residual",
    )
}
