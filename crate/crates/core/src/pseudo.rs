//! Kaplan-Meier window survival and jackknife pseudo-observations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_data::CovariatePanel;
use crate::forest::TrainingSet;
use crate::window::LongitudinalRow;

/// Product-limit estimate with a flag for risk-set exhaustion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmEstimate {
    pub survival: f64,
    /// The risk set ran out through censoring before `tau`; the curve was
    /// carried flat from its last value.
    pub exhausted: bool,
}

/// Sorts by time with events ahead of censorings at tied times.
fn sort_window(rows: &[(f64, bool)]) -> Vec<(f64, bool)> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    sorted
}

/// `P(T >= tau)` on a sorted window, optionally leaving one position out.
fn km_sorted(sorted: &[(f64, bool)], tau: f64, skip: Option<usize>) -> KmEstimate {
    let mut at_risk = sorted.len() - usize::from(skip.is_some());
    let mut survival = 1.0;
    let mut j = 0;
    while j < sorted.len() {
        let time = sorted[j].0;
        if time >= tau {
            return KmEstimate { survival, exhausted: false };
        }
        let (mut events, mut censored) = (0usize, 0usize);
        while j < sorted.len() && sorted[j].0 == time {
            if skip != Some(j) {
                if sorted[j].1 {
                    events += 1;
                } else {
                    censored += 1;
                }
            }
            j += 1;
        }
        if events > 0 {
            survival *= 1.0 - events as f64 / at_risk as f64;
        }
        at_risk -= events + censored;
    }
    // every observation precedes tau
    KmEstimate { survival, exhausted: survival > 0.0 }
}

/// Kaplan-Meier estimate of `P(X >= tau)` from `(time, event)` pairs.
///
/// Only event times strictly below `tau` reduce the estimate; at tied times
/// events are processed before censorings.
pub fn km_survival(window: &[(f64, bool)], tau: f64) -> Result<f64> {
    km_survival_detail(window, tau).map(|k| k.survival)
}

pub fn km_survival_detail(window: &[(f64, bool)], tau: f64) -> Result<KmEstimate> {
    if window.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(km_sorted(&sort_window(window), tau, None))
}

/// Jackknife pseudo-values `n S - (n - 1) S^(-i)`, in input order.
///
/// Values outside `[0, 1]` are kept as computed.
pub fn pseudo_values(window: &[(f64, bool)], tau: f64) -> Result<Vec<f64>> {
    pseudo_values_detail(window, tau).map(|(v, _)| v)
}

fn pseudo_values_detail(window: &[(f64, bool)], tau: f64) -> Result<(Vec<f64>, bool)> {
    let n = window.len();
    if n < 2 {
        return Err(Error::WindowTooSmall { t: f64::NAN, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| window[a].0.total_cmp(&window[b].0).then(window[b].1.cmp(&window[a].1)));
    let sorted: Vec<(f64, bool)> = order.iter().map(|&i| window[i]).collect();
    let full = km_sorted(&sorted, tau, None);
    let nf = n as f64;
    let mut out = vec![0.0; n];
    let mut exhausted = full.exhausted;
    for (pos, &orig) in order.iter().enumerate() {
        let loo = km_sorted(&sorted, tau, Some(pos));
        exhausted |= loo.exhausted;
        out[orig] = nf * full.survival - (nf - 1.0) * loo.survival;
    }
    Ok((out, exhausted))
}

/// One pseudo-observation of the window event-free probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoRow {
    pub subject_id: String,
    pub t: f64,
    pub s_hat: f64,
    pub n_at_risk: usize,
}

/// Pseudo-values for longitudinal rows, grouped into windows by check-in
/// time. Returns `(values, n_at_risk, flat-extended window times)` aligned
/// with the input rows.
pub fn window_pseudo_values(rows: &[LongitudinalRow], tau: f64) -> Result<(Vec<f64>, Vec<usize>, Vec<f64>)> {
    let mut windows: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        // order-preserving key for finite reals
        let bits = r.t.to_bits();
        let key = if r.t.is_sign_negative() { !bits } else { bits | (1 << 63) };
        windows.entry(key).or_insert_with(|| (r.t, Vec::new())).1.push(i);
    }
    let groups: Vec<(f64, Vec<usize>)> = windows.into_values().collect();
    let results: Vec<Result<(Vec<f64>, bool)>> = groups
        .par_iter()
        .map(|(t, idx)| {
            let w: Vec<(f64, bool)> = idx.iter().map(|&i| (rows[i].x, rows[i].delta)).collect();
            pseudo_values_detail(&w, tau).map_err(|e| match e {
                Error::WindowTooSmall { n, .. } => Error::WindowTooSmall { t: *t, n },
                other => other,
            })
        })
        .collect();
    let mut values = vec![0.0; rows.len()];
    let mut sizes = vec![0; rows.len()];
    let mut flat = Vec::new();
    for ((t, idx), res) in groups.iter().zip(results) {
        let (v, exhausted) = res?;
        if exhausted {
            flat.push(*t);
        }
        for (&i, value) in idx.iter().zip(v) {
            values[i] = value;
            sizes[i] = idx.len();
        }
    }
    Ok((values, sizes, flat))
}

/// Pseudo-observations joined with their covariate vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDataset {
    pub covariate_names: Vec<String>,
    pub rows: Vec<PseudoRow>,
    /// Row-major covariates, aligned with `rows`; excludes `t`.
    pub covariates: Vec<Vec<f64>>,
    /// Check-in times whose Kaplan-Meier curve was carried flat.
    pub flat_extended: Vec<f64>,
}

impl PseudoDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Training view with the check-in time appended as the last covariate.
    pub fn training_set(&self) -> Result<TrainingSet> {
        let mut names = self.covariate_names.clone();
        names.push("t".to_string());
        let rows = self
            .covariates
            .iter()
            .zip(&self.rows)
            .map(|(z, r)| {
                let mut v = z.clone();
                v.push(r.t);
                v
            })
            .collect::<Vec<_>>();
        let outcome = self.rows.iter().map(|r| r.s_hat).collect();
        let subjects = self.rows.iter().map(|r| r.subject_id.clone()).collect::<Vec<_>>();
        TrainingSet::from_rows(names, &rows, outcome, &subjects)
    }
}

/// Builds one pseudo-row per longitudinal row, attaching covariates.
pub fn build_pseudo_dataset(rows: &[LongitudinalRow], tau: f64, panel: &CovariatePanel) -> Result<PseudoDataset> {
    let mut covariates = Vec::with_capacity(rows.len());
    let mut missing = Vec::new();
    for r in rows {
        let cells = panel.get(&r.subject_id, r.t);
        let mut v = Vec::with_capacity(cells.len());
        for (cell, (name, _)) in cells.iter().zip(&panel.schema.columns) {
            match cell {
                Some(x) => v.push(*x),
                None => {
                    missing.push(format!("({}, {}, {})", r.subject_id, r.t, name));
                    v.push(f64::NAN);
                }
            }
        }
        covariates.push(v);
    }
    if !missing.is_empty() {
        let mut msg = missing.iter().take(20).cloned().collect::<Vec<_>>().join(", ");
        if missing.len() > 20 {
            let _ = write!(msg, " and {} more", missing.len() - 20);
        }
        return Err(Error::MissingCovariates(msg));
    }
    let (values, sizes, flat) = window_pseudo_values(rows, tau)?;
    let pseudo_rows = rows
        .iter()
        .zip(values.into_iter().zip(sizes))
        .map(|(r, (s_hat, n))| PseudoRow { subject_id: r.subject_id.clone(), t: r.t, s_hat, n_at_risk: n })
        .collect();
    Ok(PseudoDataset { covariate_names: panel.schema.names(), rows: pseudo_rows, covariates, flat_extended: flat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_data::{parse_covariates, SubjectRecord};
    use crate::window::{transform, WindowGrid};

    const WINDOW: [(f64, bool); 4] = [(10.0, true), (20.0, false), (30.0, true), (40.0, true)];

    #[test]
    fn km_examples() {
        assert!((km_survival(&WINDOW, 25.0).unwrap() - 0.75).abs() < 1e-15);
        let unc = [(10.0, true), (30.0, true), (50.0, true), (70.0, true)];
        assert_eq!(km_survival(&unc, 40.0).unwrap(), 0.5);
        assert_eq!(km_survival(&WINDOW, 0.0).unwrap(), 1.0);
        assert_eq!(km_survival(&[], 1.0), Err(Error::EmptyInput));
    }

    #[test]
    fn event_at_tau_does_not_count() {
        assert_eq!(km_survival(&[(5.0, true), (9.0, true)], 5.0).unwrap(), 1.0);
    }

    #[test]
    fn tied_event_precedes_censoring() {
        // risk set at 5 includes the censored row: 1 - 1/2
        assert_eq!(km_survival(&[(5.0, false), (5.0, true)], 6.0).unwrap(), 0.5);
    }

    #[test]
    fn exhausted_risk_set_is_carried_flat() {
        let k = km_survival_detail(&[(1.0, true), (2.0, false), (3.0, false)], 10.0).unwrap();
        assert!((k.survival - 2.0 / 3.0).abs() < 1e-15);
        assert!(k.exhausted);
    }

    #[test]
    fn pseudo_examples() {
        let v = pseudo_values(&WINDOW, 25.0).unwrap();
        for (a, b) in v.iter().zip([0.0, 1.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
        let unc = [(10.0, true), (30.0, true), (50.0, true), (70.0, true)];
        assert_eq!(pseudo_values(&unc, 40.0).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(pseudo_values(&[(5.0, true), (5.0, true)], 10.0).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(pseudo_values(&[(5.0, true)], 10.0), Err(Error::WindowTooSmall { n: 1, .. })));
    }

    #[test]
    fn three_subject_dataset_windows() {
        let recs = vec![
            SubjectRecord::new("S1", vec![80.0, 203.0], 240.0),
            SubjectRecord::new("S2", vec![], 125.0),
            SubjectRecord::new("S3", vec![48.0, 62.0, 75.0, 147.0], 240.0),
        ];
        let grid = WindowGrid::new(0.0, 60.0, 60.0, 240.0).unwrap();
        let rows = transform(&recs, &grid);
        let panel = parse_covariates("subject_id,z\nS1,1\nS2,2\nS3,3\n".as_bytes(), None, None).unwrap();
        let ds = build_pseudo_dataset(&rows, 60.0, &panel).unwrap();
        assert_eq!(ds.len(), 11);
        let mut sizes: BTreeMap<u64, usize> = BTreeMap::new();
        for r in &ds.rows {
            sizes.insert(r.t as u64, r.n_at_risk);
        }
        assert_eq!(sizes.into_values().collect::<Vec<_>>(), vec![3, 3, 3, 2]);
        let ts = ds.training_set().unwrap();
        assert_eq!(ts.names, vec!["z".to_string(), "t".to_string()]);
    }

    #[test]
    fn all_censored_after_tau_gives_ones() {
        let w = [(100.0, false), (120.0, false), (90.0, false)];
        assert_eq!(pseudo_values(&w, 60.0).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn one_subject_fails_every_window() {
        let recs = vec![SubjectRecord::new("A", vec![30.0], 240.0)];
        let grid = WindowGrid::new(0.0, 60.0, 60.0, 240.0).unwrap();
        let rows = transform(&recs, &grid);
        let panel = parse_covariates("subject_id,z\nA,1\n".as_bytes(), None, None).unwrap();
        assert!(matches!(build_pseudo_dataset(&rows, 60.0, &panel), Err(Error::WindowTooSmall { n: 1, .. })));
    }

    #[test]
    fn missing_covariates_are_listed() {
        let recs = vec![SubjectRecord::new("A", vec![30.0], 240.0), SubjectRecord::new("B", vec![], 240.0)];
        let grid = WindowGrid::new(0.0, 60.0, 60.0, 240.0).unwrap();
        let rows = transform(&recs, &grid);
        let panel = parse_covariates("subject_id,z\nA,1\n".as_bytes(), None, None).unwrap();
        match build_pseudo_dataset(&rows, 60.0, &panel) {
            Err(Error::MissingCovariates(msg)) => assert!(msg.contains("(B, 0, z)"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
