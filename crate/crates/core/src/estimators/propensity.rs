//! Accepters against controls predicted to accept.
//!
//! An acceptance model is fitted on the offered arm and used to score the
//! controls. The controls with the highest predicted acceptance are selected
//! so that the selected fraction matches the offered-arm acceptance rate;
//! ties at the cut are broken by patient id.

use super::regression::{fit_logistic_irls, predict_logistic, DesignMatrix};
use super::{two_sample, EstimandLabel, EstimateResult};
use crate::error::{Error, Result};
use crate::trial::TrialData;

#[derive(Debug, Clone, PartialEq)]
pub struct PropensitySelection {
    pub acceptance_rate: f64,
    /// Lowest predicted acceptance among selected controls.
    pub threshold: f64,
    /// Row indices of accepters.
    pub accepters: Vec<usize>,
    /// Row indices of selected controls.
    pub selected_controls: Vec<usize>,
}

pub fn select_predicted_accepters(data: &TrialData, covariates: &[String]) -> Result<PropensitySelection> {
    let cov_idx: Vec<usize> = covariates
        .iter()
        .map(|n| data.covariate_index(n))
        .collect::<Result<_>>()?;
    let offered: Vec<usize> = (0..data.rows.len())
        .filter(|&i| data.rows[i].z == 1 && data.rows[i].a.is_some())
        .collect();
    let controls: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].z == 0).collect();
    let accepters: Vec<usize> = offered
        .iter()
        .copied()
        .filter(|&i| data.rows[i].a == Some(true))
        .collect();
    if accepters.is_empty() || accepters.len() == offered.len() {
        return Err(Error::Undefined(
            "propensity analysis needs both accepters and refusers in the offered arm".into(),
        ));
    }
    if controls.is_empty() {
        return Err(Error::Undefined("no controls to score".into()));
    }

    let columns = |rows: &[usize]| -> Vec<(String, Vec<f64>)> {
        cov_idx
            .iter()
            .map(|&j| (data.covariate_names[j].clone(), rows.iter().map(|&i| data.rows[i].x[j]).collect()))
            .collect()
    };
    let x_off = DesignMatrix::with_intercept(offered.len(), columns(&offered))?;
    let a: Vec<f64> = offered
        .iter()
        .map(|&i| if data.rows[i].a == Some(true) { 1.0 } else { 0.0 })
        .collect();
    let fit = fit_logistic_irls(&x_off, &a, 1e-10, 100)?;
    fit.require_converged()?;

    let x_ctl = DesignMatrix::with_intercept(controls.len(), columns(&controls))?;
    let scores = predict_logistic(&fit, &x_ctl);
    let mut ranked: Vec<(f64, u64, usize)> = controls
        .iter()
        .zip(&scores)
        .map(|(&i, &s)| (s, data.rows[i].id, i))
        .collect();
    ranked.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));

    let acceptance_rate = accepters.len() as f64 / offered.len() as f64;
    let k = (acceptance_rate * controls.len() as f64).round() as usize;
    if k == 0 {
        return Err(Error::Undefined("selected control set is empty".into()));
    }
    let selected: Vec<(f64, u64, usize)> = ranked.into_iter().take(k).collect();
    Ok(PropensitySelection {
        acceptance_rate,
        threshold: selected.last().map_or(f64::NAN, |s| s.0),
        accepters,
        selected_controls: selected.into_iter().map(|s| s.2).collect(),
    })
}

/// Sensitivity analysis for the complier effect: accepters versus the
/// controls most likely to have accepted if offered.
pub fn propensity_accepter_analysis(data: &TrialData, covariates: &[String], level: f64) -> Result<EstimateResult> {
    let sel = select_predicted_accepters(data, covariates)?;
    let ya: Vec<f64> = sel.accepters.iter().map(|&i| data.rows[i].y).collect();
    let yc: Vec<f64> = sel.selected_controls.iter().map(|&i| data.rows[i].y).collect();
    let (point, se) = two_sample(&ya, &yc)?;
    let mut res = EstimateResult::normal(
        EstimandLabel::CacePropensity,
        point,
        se,
        level,
        (ya.len(), yc.len()),
        format!(
            "sensitivity analysis: accepters versus controls with predicted acceptance >= {:.4} (top {:.1}% of controls)",
            sel.threshold,
            100.0 * sel.acceptance_rate
        ),
    )?;
    res.warnings
        .push("sensitivity analysis; standard error ignores uncertainty in the acceptance model".into());
    if covariates.is_empty() {
        res.warnings
            .push("no covariates given: control selection is uninformative".into());
    }
    Ok(res)
}
