use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model misspecification at patient index {patient}: {detail}")]
    ModelMisspecification { patient: usize, detail: String },

    #[error("cannot calibrate acceptance intercept to {target}: achievable marginal rates are [{lo}, {hi}]")]
    Calibration { target: f64, lo: f64, hi: f64 },

    #[error("patient {0} is already enrolled")]
    EnrollmentConflict(u64),

    #[error("unknown patient {0}")]
    UnknownPatient(u64),

    #[error("consent violation for patient {patient}: {detail}")]
    ConsentViolation { patient: u64, detail: String },

    #[error("invalid eligibility criteria: {0}")]
    CriteriaValidation(String),

    #[error("duplicate candidate id {0}")]
    DuplicateCandidate(u64),

    #[error("closed cohort exhausted: {achieved} of {target} patients available")]
    Shortfall { achieved: usize, target: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("singular design matrix: column(s) {columns:?} are collinear with earlier columns")]
    Singular { columns: Vec<String> },

    #[error("separation detected: coefficient '{column}' reached {value:.3} on the log-odds scale")]
    Separation { column: String, value: f64 },

    #[error("logistic regression did not converge in {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("estimator unstable: failed in {failures} of {total} resamples")]
    Instability { failures: usize, total: usize },

    #[error("updated sample size needs {required} patients but the closed cohort holds {capacity}; the limited cohort cannot support the re-estimated sample size")]
    CapacityExceeded { required: usize, capacity: usize },

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
