//! Conversion of recurrent-event records into the censored longitudinal
//! structure: one residual time-to-first-event per (subject, check-in).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_data::SubjectRecord;

/// Shared grid of check-in times `t0, t0 + a, ...` capped at `end - tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub t0: f64,
    pub spacing: f64,
    pub tau: f64,
    pub end: f64,
}

impl WindowGrid {
    pub fn new(t0: f64, spacing: f64, tau: f64, end: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {spacing}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidGrid(format!("tau must be positive, got {tau}")));
        }
        // a single pre-baseline burn-in window at t0 = -a is allowed
        if !t0.is_finite() || t0 < -spacing * (1.0 + 1e-12) {
            return Err(Error::InvalidGrid(format!("t0 must be >= 0 (or -spacing), got {t0}")));
        }
        if !end.is_finite() || end - tau < t0 {
            return Err(Error::InvalidGrid(format!("end - tau ({}) precedes t0 ({t0})", end - tau)));
        }
        Ok(Self { t0, spacing, tau, end })
    }

    /// Largest admissible check-in time, `end - tau` (inclusive).
    pub fn last_start(&self) -> f64 {
        self.end - self.tau
    }

    /// All grid times `t_k = t0 + k a` with `t_k <= end - tau`.
    pub fn times(&self) -> Vec<f64> {
        let span = (self.last_start() - self.t0) / self.spacing;
        // tolerate representation error when end - tau lands on a grid point
        let count = (span + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.t0 + k as f64 * self.spacing).collect()
    }
}

/// Residual time to the first event at or after check-in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalRow {
    pub subject_id: String,
    pub t: f64,
    pub x: f64,
    pub delta: bool,
}

/// Check-in times of one subject: grid times strictly before its censoring
/// time and no later than `end - tau`.
pub fn checkin_times(grid: &WindowGrid, record: &SubjectRecord) -> Vec<f64> {
    grid.times().into_iter().take_while(|&t| t < record.censoring_time).collect()
}

fn subject_rows(grid_times: &[f64], record: &SubjectRecord) -> Vec<LongitudinalRow> {
    grid_times
        .iter()
        .take_while(|&&t| t < record.censoring_time)
        .map(|&t| {
            let first = record.event_times.partition_point(|&e| e < t);
            let (x, delta) = match record.event_times.get(first) {
                Some(&e) => (e - t, true),
                None => (record.censoring_time - t, false),
            };
            LongitudinalRow { subject_id: record.subject_id.clone(), t, x, delta }
        })
        .collect()
}

/// Rows are emitted in input subject order, then by check-in time.
pub fn transform(records: &[SubjectRecord], grid: &WindowGrid) -> Vec<LongitudinalRow> {
    let times = grid.times();
    records.par_iter().flat_map_iter(|r| subject_rows(&times, r)).collect()
}

/// Fraction of observed events that are the first event of at least one
/// window.
pub fn capture_rate(records: &[SubjectRecord], grid: &WindowGrid) -> Result<f64> {
    let times = grid.times();
    let mut total = 0usize;
    let mut captured = 0usize;
    for r in records {
        total += r.event_times.len();
        let mut hit = vec![false; r.event_times.len()];
        for t in times.iter().take_while(|&&t| t < r.censoring_time) {
            let first = r.event_times.partition_point(|&e| e < *t);
            if first < hit.len() {
                hit[first] = true;
            }
        }
        captured += hit.iter().filter(|&&h| h).count();
    }
    if total == 0 {
        return Err(Error::NoEvents);
    }
    Ok(captured as f64 / total as f64)
}

/// Suggested grid spacing: one third of the mean gap time between
/// consecutive events. `None` when no subject has two events.
pub fn recommended_spacing(records: &[SubjectRecord]) -> Option<f64> {
    let gaps: Vec<f64> = records.iter().flat_map(SubjectRecord::gap_times).collect();
    if gaps.is_empty() {
        return None;
    }
    Some(gaps.iter().sum::<f64>() / gaps.len() as f64 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> WindowGrid {
        WindowGrid::new(0.0, 60.0, 60.0, 240.0).unwrap()
    }

    fn s3() -> SubjectRecord {
        SubjectRecord::new("S3", vec![48.0, 62.0, 75.0, 147.0], 240.0)
    }

    fn rows(r: &[LongitudinalRow]) -> Vec<(f64, f64, bool)> {
        r.iter().map(|r| (r.t, r.x, r.delta)).collect()
    }

    #[test]
    fn checkins_use_strict_censoring_and_inclusive_end_bounds() {
        assert_eq!(checkin_times(&grid(), &SubjectRecord::new("S2", vec![], 125.0)), vec![0.0, 60.0, 120.0]);
        assert_eq!(checkin_times(&grid(), &s3()), vec![0.0, 60.0, 120.0, 180.0]);
        assert_eq!(checkin_times(&grid(), &SubjectRecord::new("X", vec![], 10.0)), vec![0.0]);
        assert!(checkin_times(&grid(), &SubjectRecord::new("X", vec![], 0.0)).is_empty());
    }

    #[test]
    fn subject_three_rows() {
        let out = transform(&[s3()], &grid());
        assert_eq!(rows(&out), vec![(0.0, 48.0, true), (60.0, 2.0, true), (120.0, 27.0, true), (180.0, 60.0, false)]);
    }

    #[test]
    fn event_free_subject_rows() {
        let out = transform(&[SubjectRecord::new("S2", vec![], 125.0)], &grid());
        assert_eq!(rows(&out), vec![(0.0, 125.0, false), (60.0, 65.0, false), (120.0, 5.0, false)]);
    }

    #[test]
    fn event_on_checkin_has_zero_residual() {
        let out = transform(&[SubjectRecord::new("A", vec![60.0], 240.0)], &grid());
        assert_eq!(out[1].x, 0.0);
        assert!(out[1].delta);
    }

    #[test]
    fn capture_rates() {
        assert_eq!(capture_rate(&[s3()], &grid()).unwrap(), 0.75);
        let s1 = SubjectRecord::new("S1", vec![80.0, 203.0], 240.0);
        assert!((capture_rate(&[s1, s3()], &grid()).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(capture_rate(&[SubjectRecord::new("S2", vec![], 125.0)], &grid()), Err(Error::NoEvents));

        let dense = WindowGrid::new(0.0, 1.0, 60.0, 240.0).unwrap();
        let r = SubjectRecord::new("D", vec![3.0, 4.0, 100.0, 150.0], 180.0);
        assert_eq!(capture_rate(&[r], &dense).unwrap(), 1.0);
    }

    #[test]
    fn grid_end_tolerates_rounding() {
        let g = WindowGrid::new(0.0, 1.0 / 12.0, 1.0 / 6.0, 2.0 + 1.0 / 6.0).unwrap();
        let t = g.times();
        assert_eq!(t.len(), 25);
        assert!((t[24] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_validation() {
        assert!(WindowGrid::new(0.0, 0.0, 1.0, 10.0).is_err());
        assert!(WindowGrid::new(0.0, 1.0, 0.0, 10.0).is_err());
        assert!(WindowGrid::new(-2.0, 1.0, 1.0, 10.0).is_err());
        assert!(WindowGrid::new(-1.0, 1.0, 1.0, 10.0).is_ok());
    }

    #[test]
    fn spacing_helper() {
        assert_eq!(recommended_spacing(&[s3()]), Some((14.0 + 13.0 + 72.0) / 3.0 / 3.0));
        assert_eq!(recommended_spacing(&[SubjectRecord::new("S2", vec![], 125.0)]), None);
    }
}
