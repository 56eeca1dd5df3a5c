use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::{derive_seed, rng_from_seed};
use crate::stats::{quantile_sorted, sample_sd};
use crate::trial::TrialData;

pub const MIN_BOOTSTRAP_REPS: usize = 100;
/// Largest tolerated fraction of failed resamples.
const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary {
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub reps: usize,
    pub failures: usize,
}

/// Case-resampling bootstrap stratified by arm, with a percentile interval.
///
/// Resample `b` draws from its own stream `derive_seed(seed, b)`, so the
/// result does not depend on execution mode.
pub fn bootstrap_ci<F>(
    estimator: F,
    data: &TrialData,
    reps: usize,
    level: f64,
    seed: u64,
    execution: Execution,
) -> Result<BootstrapSummary>
where
    F: Fn(&TrialData) -> Result<f64> + Sync,
{
    if reps < MIN_BOOTSTRAP_REPS {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPS} resamples, got {reps}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} must lie inside (0, 1)")));
    }
    let offered: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].z == 1).collect();
    let control: Vec<usize> = (0..data.rows.len()).filter(|&i| data.rows[i].z == 0).collect();

    let results = execution.map_indexed(reps, |b| {
        let mut rng = rng_from_seed(derive_seed(seed, b as u64));
        let mut rows = Vec::with_capacity(data.rows.len());
        for stratum in [&offered, &control] {
            for _ in 0..stratum.len() {
                let i = stratum[rng.random_range(0..stratum.len())];
                rows.push(data.rows[i].clone());
            }
        }
        estimator(&TrialData::new(data.covariate_names.clone(), rows))
    });

    let mut points: Vec<f64> = results
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|p| p.is_finite())
        .collect();
    let failures = reps - points.len();
    if failures as f64 > MAX_FAILURE_FRACTION * reps as f64 {
        return Err(Error::Instability { failures, total: reps });
    }
    let se = sample_sd(&points);
    points.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapSummary {
        se,
        ci_lo: quantile_sorted(&points, tail),
        ci_hi: quantile_sorted(&points, 1.0 - tail),
        reps,
        failures,
    })
}
