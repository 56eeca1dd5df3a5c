//! Least squares and logistic regression on small dense design matrices.
//!
//! Both fits go through the normal equations with a Cholesky factorization
//! that reports which columns are linearly dependent on earlier ones.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::logistic;

/// Relative pivot tolerance for the rank guard.
const RANK_TOL: f64 = 1e-10;
/// Largest admissible |coefficient| on the log-odds scale.
pub const SEPARATION_GUARD: f64 = 30.0;

/// Column-named design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    matrix: DMatrix<f64>,
}

impl DesignMatrix {
    /// Builds a design matrix from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(Error::InvalidInput("design matrix columns differ in length".into()));
        }
        let p = columns.len();
        let mut matrix = DMatrix::zeros(n, p);
        for (j, (_, col)) in columns.iter().enumerate() {
            matrix.set_column(j, &DVector::from_column_slice(col));
        }
        Ok(Self {
            names: columns.into_iter().map(|c| c.0).collect(),
            matrix,
        })
    }

    /// Intercept column followed by `columns`.
    pub fn with_intercept(n: usize, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut all = vec![("intercept".to_string(), vec![1.0; n])];
        all.extend(columns);
        Self::from_columns(all)
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub coefficient_covariance: DMatrix<f64>,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficient_covariance[(i, i)].max(0.0).sqrt())
    }

    /// Gate for downstream use: an unconverged fit is an error.
    pub fn require_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
            })
        }
    }
}

/// Lower Cholesky factor of a symmetric matrix, or the indices of pivots
/// that collapsed (columns dependent on earlier ones).
fn guarded_cholesky(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, Vec<usize>> {
    let p = a.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut bad = Vec::new();
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let scale = a[(j, j)].abs().max(f64::MIN_POSITIVE);
        if !(d > RANK_TOL * scale) {
            bad.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    if bad.is_empty() {
        Ok(l)
    } else {
        Err(bad)
    }
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let z = l.solve_lower_triangular(b).expect("non-zero diagonal");
    l.transpose().solve_upper_triangular(&z).expect("non-zero diagonal")
}

fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.nrows();
    let mut inv = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        inv.set_column(j, &cholesky_solve(l, &e));
    }
    // symmetrize away rounding asymmetry
    (&inv + inv.transpose()) * 0.5
}

fn singular(x: &DesignMatrix, bad: Vec<usize>) -> Error {
    Error::Singular {
        columns: bad.into_iter().map(|j| x.names[j].clone()).collect(),
    }
}

/// Ordinary least squares.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<RegressionFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::InvalidInput(format!("y has {} rows, design has {n}", y.len())));
    }
    if p == 0 || n < p {
        return Err(Error::InvalidInput(format!("need rows >= columns > 0, got {n} x {p}")));
    }
    let xm = x.matrix();
    let yv = DVector::from_column_slice(y);
    let xtx = xm.transpose() * xm;
    let l = guarded_cholesky(&xtx).map_err(|bad| singular(x, bad))?;
    let beta = cholesky_solve(&l, &(xm.transpose() * &yv));
    let resid = &yv - xm * &beta;
    let sigma2 = if n > p {
        resid.norm_squared() / (n - p) as f64
    } else {
        0.0
    };
    Ok(RegressionFit {
        names: x.names.clone(),
        coefficients: beta.iter().copied().collect(),
        coefficient_covariance: cholesky_inverse(&l) * sigma2,
        n_obs: n,
        converged: true,
        iterations: 1,
    })
}

/// Logistic regression by iteratively reweighted least squares (Newton).
///
/// Stops when the largest absolute score or the largest coefficient update
/// falls below `tol`. A small score with a still-large Newton step means the
/// likelihood is flattening toward infinity, so iteration continues until
/// the separation guard trips. Hitting `max_iter` yields `converged = false`.
pub fn fit_logistic_irls(x: &DesignMatrix, y: &[f64], tol: f64, max_iter: usize) -> Result<RegressionFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::InvalidInput(format!("y has {} rows, design has {n}", y.len())));
    }
    if p == 0 || n < p {
        return Err(Error::InvalidInput(format!("need rows >= columns > 0, got {n} x {p}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("logistic response must be 0/1".into()));
    }
    let xm = x.matrix();
    // Rank of X itself, before weights can blur it.
    guarded_cholesky(&(xm.transpose() * xm)).map_err(|bad| singular(x, bad))?;

    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::<f64>::zeros(p);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_l = None;

    while iterations < max_iter {
        let eta = xm * &beta;
        let prob = eta.map(logistic);
        let w = prob.map(|q| q * (1.0 - q));
        let score = xm.transpose() * (&yv - &prob);
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            let row = xm.row(i);
            xtwx += row.transpose() * row * w[i];
        }
        let l = match guarded_cholesky(&xtwx) {
            Ok(l) => l,
            Err(bad) => return Err(separation_or_singular(x, &beta, bad)),
        };
        let step = cholesky_solve(&l, &score);
        let max_score = score.amax();
        let max_step = step.amax();
        if max_score < tol && max_step < tol.sqrt() {
            converged = true;
            last_l = Some(l);
            break;
        }
        beta += &step;
        iterations += 1;
        if let Some((j, v)) = beta.iter().enumerate().find(|(_, v)| v.abs() > SEPARATION_GUARD) {
            return Err(Error::Separation {
                column: x.names[j].clone(),
                value: *v,
            });
        }
        if max_step < tol {
            converged = true;
            break;
        }
    }

    let l = match last_l {
        Some(l) => l,
        None => {
            let prob = (xm * &beta).map(logistic);
            let mut xtwx = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let row = xm.row(i);
                xtwx += row.transpose() * row * (prob[i] * (1.0 - prob[i]));
            }
            guarded_cholesky(&xtwx).map_err(|bad| separation_or_singular(x, &beta, bad))?
        }
    };
    Ok(RegressionFit {
        names: x.names.clone(),
        coefficients: beta.iter().copied().collect(),
        coefficient_covariance: cholesky_inverse(&l),
        n_obs: n,
        converged,
        iterations,
    })
}

fn separation_or_singular(x: &DesignMatrix, beta: &DVector<f64>, bad: Vec<usize>) -> Error {
    // Weights vanish when fitted probabilities saturate.
    let (j, v) = beta
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(j, v)| (j, *v))
        .unwrap_or((0, 0.0));
    if v.abs() > 5.0 {
        Error::Separation {
            column: x.names[j].clone(),
            value: v,
        }
    } else {
        singular(x, bad)
    }
}

/// Fitted probabilities for a logistic fit on `x`.
pub fn predict_logistic(fit: &RegressionFit, x: &DesignMatrix) -> Vec<f64> {
    let beta = DVector::from_column_slice(&fit.coefficients);
    (x.matrix() * beta).iter().map(|e| logistic(*e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(cols: &[(&str, &[f64])]) -> DesignMatrix {
        DesignMatrix::from_columns(cols.iter().map(|(n, c)| (n.to_string(), c.to_vec())).collect()).unwrap()
    }

    #[test]
    fn ols_exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let x = DesignMatrix::with_intercept(20, vec![("x".into(), xs)]).unwrap();
        let fit = fit_ols(&x, &y).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-10);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ols_intercept_only_is_mean() {
        let y = [1.0, 4.0, 2.5, 7.0];
        let x = DesignMatrix::with_intercept(4, vec![]).unwrap();
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 3.625).abs() < 1e-12);
    }

    #[test]
    fn ols_three_points() {
        let x = design(&[("intercept", &[1.0, 1.0, 1.0]), ("x", &[0.0, 1.0, 2.0])]);
        let fit = fit_ols(&x, &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        // exact fit: zero residual variance
        assert!(fit.coefficient_covariance.iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn ols_covariance_matches_textbook() {
        // slope SE = s / sqrt(Sxx)
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.1, 2.9, 5.2, 6.8, 9.1];
        let x = design(&[("intercept", &[1.0; 5]), ("x", &xs)]);
        let fit = fit_ols(&x, &y).unwrap();
        let pred: Vec<f64> = xs.iter().map(|v| fit.coefficients[0] + fit.coefficients[1] * v).collect();
        let rss: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
        let sxx = 10.0;
        let se = (rss / 3.0 / sxx).sqrt();
        assert!((fit.std_error("x").unwrap() - se).abs() < 1e-12);
        let cov = &fit.coefficient_covariance;
        assert_eq!(cov[(0, 1)], cov[(1, 0)]);
    }

    #[test]
    fn ols_names_collinear_column() {
        let x = design(&[
            ("intercept", &[1.0, 1.0, 1.0, 1.0]),
            ("a", &[0.0, 1.0, 2.0, 3.0]),
            ("b", &[0.0, 2.0, 4.0, 6.0]),
        ]);
        match fit_ols(&x, &[1.0, 2.0, 3.0, 5.0]) {
            Err(Error::Singular { columns }) => assert_eq!(columns, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ols_rejects_underdetermined() {
        let x = design(&[("a", &[1.0]), ("b", &[2.0])]);
        assert!(fit_ols(&x, &[1.0]).is_err());
    }

    #[test]
    fn logistic_intercept_only() {
        let x = DesignMatrix::with_intercept(10, vec![]).unwrap();
        let half: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let fit = fit_logistic_irls(&x, &half, 1e-10, 100).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-9);

        let seventy: Vec<f64> = (0..10).map(|i| if i < 7 { 1.0 } else { 0.0 }).collect();
        let fit = fit_logistic_irls(&x, &seventy, 1e-10, 100).unwrap();
        assert!((fit.coefficients[0] - (7.0f64 / 3.0).ln()).abs() < 1e-6);
        assert!((fit.coefficients[0] - 0.8473).abs() < 1e-4);
    }

    #[test]
    fn logistic_matches_saturated_cell_logits() {
        // two groups: 3/10 and 6/8 successes
        let mut g = Vec::new();
        let mut y = Vec::new();
        for i in 0..10 {
            g.push(0.0);
            y.push(if i < 3 { 1.0 } else { 0.0 });
        }
        for i in 0..8 {
            g.push(1.0);
            y.push(if i < 6 { 1.0 } else { 0.0 });
        }
        let x = DesignMatrix::with_intercept(18, vec![("g".into(), g)]).unwrap();
        let fit = fit_logistic_irls(&x, &y, 1e-10, 100).unwrap();
        let l0 = (0.3f64 / 0.7).ln();
        let l1 = (0.75f64 / 0.25).ln();
        assert!((fit.coefficients[0] - l0).abs() < 1e-8);
        assert!((fit.coefficients[1] - (l1 - l0)).abs() < 1e-8);
        // Var(logit p̂) = 1/(n p q) per cell
        let var0 = 1.0 / (10.0 * 0.3 * 0.7);
        assert!((fit.coefficient_covariance[(0, 0)] - var0).abs() < 1e-8);
    }

    #[test]
    fn logistic_separation_detected() {
        let g: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let x = DesignMatrix::with_intercept(40, vec![("g".into(), g.clone())]).unwrap();
        assert!(matches!(
            fit_logistic_irls(&x, &g, 1e-8, 100),
            Err(Error::Separation { .. })
        ));
        let ones = vec![1.0; 40];
        let x = DesignMatrix::with_intercept(40, vec![]).unwrap();
        assert!(matches!(
            fit_logistic_irls(&x, &ones, 1e-8, 100),
            Err(Error::Separation { .. })
        ));
    }

    #[test]
    fn logistic_unconverged_is_flagged() {
        let x = DesignMatrix::with_intercept(10, vec![]).unwrap();
        let y: Vec<f64> = (0..10).map(|i| if i < 7 { 1.0 } else { 0.0 }).collect();
        let fit = fit_logistic_irls(&x, &y, 1e-14, 1).unwrap();
        assert!(!fit.converged);
        assert!(fit.require_converged().is_err());
    }
}
