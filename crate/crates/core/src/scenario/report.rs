use std::path::{Path, PathBuf};

use super::runner::{EstimandSummary, ScenarioResult};
use crate::error::Result;

pub const ESTIMATES_HEADER: [&str; 9] = [
    "label",
    "mean_point",
    "truth",
    "bias",
    "emp_se",
    "mean_se",
    "coverage",
    "reject_rate",
    "n_reps",
];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn summary_fields(s: &EstimandSummary) -> Vec<String> {
    vec![
        num(s.mean_point),
        num(s.truth),
        num(s.bias),
        num(s.emp_se),
        num(s.mean_se),
        num(s.coverage),
        num(s.reject_rate),
        s.n_reps.to_string(),
    ]
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

fn write_estimates(result: &ScenarioResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(ESTIMATES_HEADER)?;
    for s in &result.estimates {
        let mut rec = vec![s.label.to_string()];
        rec.extend(summary_fields(s));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_refusal(result: &ScenarioResult, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["replication", "offered", "refusers", "refusal_rate"])?;
    for o in &result.refusal_by_replication {
        w.write_record([
            o.replication.to_string(),
            o.offered.to_string(),
            o.refusers.to_string(),
            opt(o.rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_sweep(result: &ScenarioResult, path: &Path) -> Result<bool> {
    let Some(sweep) = &result.sweep else {
        return Ok(false);
    };
    let mut w = writer(path)?;
    let mut header = vec!["parameter", "value"];
    header.extend(ESTIMATES_HEADER);
    header.push("mean_refusal");
    w.write_record(&header)?;
    for p in &sweep.points {
        for s in &p.estimates {
            let mut rec = vec![sweep.parameter.as_str().to_string(), num(p.value), s.label.to_string()];
            rec.extend(summary_fields(s));
            rec.push(opt(p.refusal.mean));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(true)
}

/// Writes `estimates.csv`, `refusal.csv`, `sweep.csv` (when a sweep ran) and
/// `result.json` into `directory`, creating it if needed. Returns the paths
/// written.
pub fn emit_reports(result: &ScenarioResult, directory: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = directory.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();

    let estimates = dir.join("estimates.csv");
    write_estimates(result, &estimates)?;
    manifest.push(estimates);

    let refusal = dir.join("refusal.csv");
    write_refusal(result, &refusal)?;
    manifest.push(refusal);

    let sweep = dir.join("sweep.csv");
    if write_sweep(result, &sweep)? {
        manifest.push(sweep);
    } else if sweep.exists() {
        // stale output from an earlier run with a sweep
        std::fs::remove_file(&sweep)?;
    }

    let json = dir.join("result.json");
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    std::fs::write(&json, text)?;
    manifest.push(json);
    Ok(manifest)
}
