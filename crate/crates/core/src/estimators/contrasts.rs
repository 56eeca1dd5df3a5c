//! Mean-difference estimators: offered-treatment ITT, per-protocol,
//! as-treated, and the Wald ratio.

use super::{arm_counts, two_sample, EstimandLabel, EstimateResult};
use crate::error::{Error, Result};
use crate::trial::TrialData;

fn outcomes<'a>(data: &'a TrialData, keep: impl Fn(&crate::trial::TrialRow) -> bool + 'a) -> Vec<f64> {
    data.rows.iter().filter(|r| keep(r)).map(|r| r.y).collect()
}

/// `mean(y | z = 1) − mean(y | z = 0)`.
pub fn itt_point(data: &TrialData) -> Result<f64> {
    let (n1, n0) = arm_counts(data);
    if n1 == 0 || n0 == 0 {
        return Err(Error::Undefined("ITT needs both arms non-empty".into()));
    }
    let s1: f64 = data.offered_rows().map(|r| r.y).sum();
    let s0: f64 = data.control_rows().map(|r| r.y).sum();
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// Offered-treatment ITT at the 95% level.
pub fn estimate_itt(data: &TrialData) -> Result<EstimateResult> {
    estimate_itt_at(data, 0.95)
}

pub fn estimate_itt_at(data: &TrialData, level: f64) -> Result<EstimateResult> {
    let treated = outcomes(data, |r| r.z == 1);
    let control = outcomes(data, |r| r.z == 0);
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Undefined("ITT needs both arms non-empty".into()));
    }
    let (point, se) = two_sample(&treated, &control)?;
    EstimateResult::normal(
        EstimandLabel::AceOffered,
        point,
        se,
        level,
        arm_counts(data),
        "as randomized, regardless of refusal: effect of being (offered to be) treated with the alternative treatment",
    )
}

/// Offered-arm accepters against all controls.
pub fn estimate_per_protocol(data: &TrialData) -> Result<EstimateResult> {
    estimate_per_protocol_at(data, 0.95)
}

pub fn estimate_per_protocol_at(data: &TrialData, level: f64) -> Result<EstimateResult> {
    let accepters = outcomes(data, |r| r.z == 1 && r.d == 1);
    let control = outcomes(data, |r| r.z == 0);
    if accepters.is_empty() {
        return Err(Error::Undefined("per-protocol set has no accepters".into()));
    }
    if control.is_empty() {
        return Err(Error::Undefined("per-protocol set has no controls".into()));
    }
    let (point, se) = two_sample(&accepters, &control)?;
    let mut res = EstimateResult::normal(
        EstimandLabel::PerProtocol,
        point,
        se,
        level,
        (accepters.len(), control.len()),
        "offered-arm refusers excluded; accepters versus all controls",
    )?;
    res.warnings
        .push("excluding refusers breaks randomization; biased when refusal relates to prognosis".into());
    Ok(res)
}

/// Exposed against unexposed, ignoring randomization.
pub fn estimate_as_treated(data: &TrialData, level: f64) -> Result<EstimateResult> {
    let exposed = outcomes(data, |r| r.d == 1);
    let unexposed = outcomes(data, |r| r.d == 0);
    if exposed.is_empty() || unexposed.is_empty() {
        return Err(Error::Undefined("as-treated needs both exposure groups".into()));
    }
    let (point, se) = two_sample(&exposed, &unexposed)?;
    let mut res = EstimateResult::normal(
        EstimandLabel::AsTreated,
        point,
        se,
        level,
        arm_counts(data),
        "received alternative treatment versus not, ignoring randomization",
    )?;
    res.warnings
        .push("as-treated comparison is not protected by randomization".into());
    Ok(res)
}

struct WaldParts {
    point: f64,
    se: f64,
    contaminated: usize,
}

fn wald_parts(data: &TrialData) -> Result<WaldParts> {
    let (n1, n0) = arm_counts(data);
    if n1 == 0 || n0 == 0 {
        return Err(Error::Undefined("Wald estimator needs both arms non-empty".into()));
    }
    let (n1f, n0f) = (n1 as f64, n0 as f64);
    let y1: Vec<f64> = data.offered_rows().map(|r| r.y).collect();
    let d1: Vec<f64> = data.offered_rows().map(|r| f64::from(r.d)).collect();
    let y0: Vec<f64> = data.control_rows().map(|r| r.y).collect();
    let my1 = y1.iter().sum::<f64>() / n1f;
    let my0 = y0.iter().sum::<f64>() / n0f;
    let accept = d1.iter().sum::<f64>() / n1f;
    if accept <= 0.0 {
        return Err(Error::Undefined("no offered patient accepted; CACE undefined".into()));
    }
    let itt = my1 - my0;
    let point = itt / accept;

    // Delta method on (ȳ1, d̄1, ȳ0); ȳ1 and d̄1 share the offered arm.
    let denom1 = (n1f - 1.0).max(1.0);
    let denom0 = (n0f - 1.0).max(1.0);
    let var_y1 = y1.iter().map(|v| (v - my1).powi(2)).sum::<f64>() / denom1 / n1f;
    let var_d1 = d1.iter().map(|v| (v - accept).powi(2)).sum::<f64>() / denom1 / n1f;
    let cov_yd1 = y1
        .iter()
        .zip(&d1)
        .map(|(y, d)| (y - my1) * (d - accept))
        .sum::<f64>()
        / denom1
        / n1f;
    let var_y0 = y0.iter().map(|v| (v - my0).powi(2)).sum::<f64>() / denom0 / n0f;
    let var = (var_y1 + var_y0 - 2.0 * point * cov_yd1 + point * point * var_d1) / (accept * accept);

    Ok(WaldParts {
        point,
        se: var.max(0.0).sqrt(),
        contaminated: data.control_rows().filter(|r| r.d == 1).count(),
    })
}

/// ITT divided by the offered-arm acceptance proportion.
pub fn wald_point(data: &TrialData) -> Result<f64> {
    wald_parts(data).map(|w| w.point)
}

pub fn estimate_wald_cace(data: &TrialData) -> Result<EstimateResult> {
    estimate_wald_cace_at(data, 0.95)
}

pub fn estimate_wald_cace_at(data: &TrialData, level: f64) -> Result<EstimateResult> {
    let w = wald_parts(data)?;
    let mut res = EstimateResult::normal(
        EstimandLabel::CaceWald,
        w.point,
        w.se,
        level,
        arm_counts(data),
        "offered-treatment effect divided by offered-arm acceptance proportion; delta-method SE",
    )?;
    if w.contaminated > 0 {
        res.warnings.push(format!(
            "{} control patient(s) received the alternative treatment; the ratio assumes no contamination",
            w.contaminated
        ));
    }
    Ok(res)
}
