//! Event-rate history covariates built from past windows.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::window::LongitudinalRow;

/// History value at every check-in after the first row.
///
/// `rows` are one subject's windows in time order, starting with the
/// pre-baseline window. The value at row `k` is the mean of
/// `min(X, cap)` over rows `0..k`. With `pre_baseline = Some(v)` the first
/// term is replaced by `min(v, cap)`, the imputed value used when the
/// pre-baseline window is unobserved.
pub fn history_covariates(rows: &[LongitudinalRow], cap: f64, pre_baseline: Option<f64>) -> Result<Vec<f64>> {
    if rows.len() < 2 {
        return Err(Error::Simulation("history needs a pre-baseline window and a check-in".into()));
    }
    let mut sum = pre_baseline.unwrap_or(rows[0].x).min(cap);
    let mut out = Vec::with_capacity(rows.len() - 1);
    for (k, r) in rows.iter().enumerate().skip(1) {
        out.push(sum / k as f64);
        sum += r.x.min(cap);
    }
    Ok(out)
}

/// Draws an imputed pre-baseline residual time from `Exponential(rate)`.
pub fn impute_pre_baseline<R: Rng>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).expect("positive rate").sample(rng)
}
