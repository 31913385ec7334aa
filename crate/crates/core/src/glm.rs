//! Logit-link regression of pseudo-observations with cluster-robust
//! (sandwich) inference.
//!
//! The estimating equations are `sum_i x_i (y_i - expit(x_i' b)) = 0` with
//! working variance `mu (1 - mu)` and independence working correlation.
//! Outcomes may lie outside `[0, 1]`; the quasi-likelihood
//! `y eta - log(1 + e^eta)` stays concave in `eta`, which the step-halving
//! line search relies on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest coefficient change.
    pub tolerance: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { max_iterations: 100, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    /// `"(Intercept)"` followed by the design column names.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Sandwich covariance clustered by subject, row-major.
    pub covariance: Vec<Vec<f64>>,
    /// Model-based (inverse information) covariance, row-major.
    pub model_covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm of the estimating function at the returned coefficients.
    pub score_norm: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
}

pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn quasi_loglik(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - log1p_exp(e)).sum()
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Fits `logit E[y] = b0 + x' b` by iteratively reweighted least squares.
///
/// `design` rows exclude the intercept, which is always added. On
/// non-convergence the last iterate is returned with `converged = false`.
pub fn fit_pseudo_logit<N: AsRef<str>, C: AsRef<str>>(
    names: &[N],
    design: &[Vec<f64>],
    y: &[f64],
    clusters: &[C],
    options: &GlmOptions,
) -> Result<GlmFit> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if design.len() != n || clusters.len() != n {
        return Err(Error::SchemaMismatch("design, outcome and cluster lengths differ".into()));
    }
    let k = names.len() + 1;
    if let Some(r) = design.iter().find(|r| r.len() != k - 1) {
        return Err(Error::SchemaMismatch(format!("design row has {} columns, expected {}", r.len(), k - 1)));
    }
    if y.iter().chain(design.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("design and outcomes must be finite".into()));
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { design[i][j - 1] });

    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if n < k || sv.min() <= smax * 1e-10 * (n.max(k) as f64) {
        return Err(Error::RankDeficient);
    }

    let ybar = (y.iter().sum::<f64>() / n as f64).clamp(0.01, 0.99);
    let mut beta = DVector::zeros(k);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut objective = quasi_loglik(&x, y, &beta);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let eta = &x * &beta;
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&mu).map(|(yi, m)| yi - m));
        let score = x.tr_mul(&resid);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..n {
            let w = (mu[i] * (1.0 - mu[i])).max(1e-300);
            let row = x.row(i);
            info.ger(w, &row.transpose(), &row.transpose(), 1.0);
        }
        let Some(chol) = info.cholesky() else {
            break;
        };
        let step = chol.solve(&score);
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_obj = quasi_loglik(&x, y, &candidate);
        let mut halvings = 0;
        while !(cand_obj >= objective - 1e-12 * objective.abs().max(1.0)) && halvings < 30 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_obj = quasi_loglik(&x, y, &candidate);
            halvings += 1;
        }
        let change = (&candidate - &beta).amax();
        beta = candidate;
        objective = cand_obj;
        if change < options.tolerance {
            converged = true;
            break;
        }
    }

    // inference at the final coefficients
    let eta = &x * &beta;
    let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let mut info = DMatrix::zeros(k, k);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| clusters[a].as_ref().cmp(clusters[b].as_ref()));
    let mut meat = DMatrix::zeros(k, k);
    let mut score_total = DVector::zeros(k);
    let mut n_clusters = 0;
    let mut i = 0;
    while i < n {
        let mut u = DVector::zeros(k);
        let mut j = i;
        while j < n && clusters[order[j]].as_ref() == clusters[order[i]].as_ref() {
            let r = order[j];
            let xr = x.row(r).transpose();
            u.axpy(y[r] - mu[r], &xr, 1.0);
            info.ger((mu[r] * (1.0 - mu[r])).max(1e-300), &xr, &xr, 1.0);
            j += 1;
        }
        meat.ger(1.0, &u, &u, 1.0);
        score_total += &u;
        n_clusters += 1;
        i = j;
    }
    let bread = info.try_inverse().ok_or(Error::RankDeficient)?;
    let robust = &bread * &meat * &bread;
    let robust = (&robust + robust.transpose()) * 0.5;

    let mut all_names = vec!["(Intercept)".to_string()];
    all_names.extend(names.iter().map(|s| s.as_ref().to_string()));
    Ok(GlmFit {
        names: all_names,
        coefficients: beta.iter().copied().collect(),
        covariance: to_rows(&robust),
        model_covariance: to_rows(&bread),
        iterations,
        converged,
        score_norm: score_total.amax(),
        n_obs: n,
        n_clusters,
    })
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> Result<f64> {
        if row.len() + 1 != self.coefficients.len() {
            return Err(Error::SchemaMismatch(format!(
                "design row has {} columns, expected {}",
                row.len(),
                self.coefficients.len() - 1
            )));
        }
        Ok(self.coefficients[0] + row.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Predicted event-free probability, kept strictly inside `(0, 1)`.
    pub fn predict_prob(&self, row: &[f64]) -> Result<f64> {
        let p = expit(self.linear_predictor(row)?);
        Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
    }

    pub fn robust_se(&self) -> Vec<f64> {
        (0..self.coefficients.len()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }

    pub fn wald_table(&self) -> Vec<WaldRow> {
        let normal = Normal::standard();
        self.names
            .iter()
            .zip(&self.coefficients)
            .zip(self.robust_se())
            .map(|((name, &b), se)| {
                let z = if se > 0.0 { b / se } else { 0.0 };
                WaldRow {
                    name: name.clone(),
                    estimate: b,
                    odds_ratio: b.exp(),
                    se,
                    z,
                    p: (2.0 * normal.cdf(-z.abs())).min(1.0),
                    ci_low: (b - 1.96 * se).exp(),
                    ci_high: (b + 1.96 * se).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub name: String,
    pub estimate: f64,
    pub odds_ratio: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    /// 95% interval on the odds-ratio scale.
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const MODEL_A_COLUMNS: [&str; 4] = ["z2_sin_z1_over_z6", "signed_z3", "z1_z6", "z2sq_z4"];
pub const MODEL_B_COLUMNS: [&str; 7] = ["z1", "z2", "z3", "z4", "z5", "z6", "z7"];

/// The correctly specified nonlinear design:
/// `Z2 sin(Z1/Z6), (-1)^[Z2 > 2] Z3, Z1 Z6, Z2^2 Z4` from `Z = (Z1..Z7)`.
pub fn model_a_design(z: &[f64]) -> Result<Vec<f64>> {
    if z.len() < 7 {
        return Err(Error::SchemaMismatch(format!("expected 7 covariates, got {}", z.len())));
    }
    let (z1, z2, z3, z4, z6) = (z[0], z[1], z[2], z[3], z[5]);
    if z6 == 0.0 {
        return Err(Error::InvalidConfig("Z6 must be non-zero".into()));
    }
    let sign = if z2 > 2.0 { -1.0 } else { 1.0 };
    Ok(vec![z2 * (z1 / z6).sin(), sign * z3, z1 * z6, z2 * z2 * z4])
}

/// Main effects `Z1..Z7`.
pub fn model_b_design(z: &[f64]) -> Result<Vec<f64>> {
    if z.len() < 7 {
        return Err(Error::SchemaMismatch(format!("expected 7 covariates, got {}", z.len())));
    }
    Ok(z[..7].to_vec())
}
