//! Traditional recurrent-event records and the covariate panel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::window::{checkin_times, WindowGrid};

/// One subject's observed recurrent events and censoring time.
///
/// An event exactly at the censoring time is admitted as observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub event_times: Vec<f64>,
    pub censoring_time: f64,
}

impl SubjectRecord {
    pub fn new(subject_id: impl Into<String>, event_times: Vec<f64>, censoring_time: f64) -> Self {
        Self { subject_id: subject_id.into(), event_times, censoring_time }
    }

    /// Gap times between consecutive observed events.
    pub fn gap_times(&self) -> Vec<f64> {
        self.event_times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Parses the `subject_id,time,is_event` events table.
///
/// Each subject needs exactly one `is_event = 0` row holding its censoring
/// time. Event rows must appear in strictly ascending time order.
pub fn parse_events<R: BufRead>(source: R) -> Result<Vec<SubjectRecord>> {
    struct Partial {
        events: Vec<(f64, usize)>,
        censoring: Option<(f64, usize)>,
    }

    let mut subjects: BTreeMap<String, Partial> = BTreeMap::new();
    let mut saw_header = false;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            saw_header = true;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["subject_id", "time", "is_event"] {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected header subject_id,time,is_event, got {line:?}"),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line: line_no, message: format!("expected 3 fields, got {}", fields.len()) });
        }
        let subject = fields[0].to_string();
        if subject.is_empty() {
            return Err(Error::Parse { line: line_no, message: "empty subject_id".into() });
        }
        let time: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("invalid time {:?}", fields[1]) })?;
        if !time.is_finite() || time < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("time must be finite and non-negative, got {time}"),
            });
        }
        let entry = subjects.entry(subject.clone()).or_insert(Partial { events: Vec::new(), censoring: None });
        match fields[2] {
            "1" => {
                if let Some(&(last, _)) = entry.events.last() {
                    if time <= last {
                        return Err(Error::NonAscendingEvents { subject, line: line_no, time });
                    }
                }
                entry.events.push((time, line_no));
            }
            "0" => {
                if entry.censoring.is_some() {
                    return Err(Error::DuplicateCensoring { subject, line: line_no });
                }
                entry.censoring = Some((time, line_no));
            }
            other => {
                return Err(Error::Parse { line: line_no, message: format!("is_event must be 0 or 1, got {other:?}") });
            }
        }
    }

    if subjects.is_empty() {
        return Err(Error::EmptyInput);
    }

    subjects
        .into_iter()
        .map(|(subject, partial)| {
            let (censoring, _) =
                partial.censoring.ok_or_else(|| Error::MissingCensoring { subject: subject.clone() })?;
            if let Some(&(time, line)) = partial.events.iter().find(|(t, _)| *t > censoring) {
                return Err(Error::EventAfterCensoring { subject, line, time, censoring });
            }
            let events = partial.events.into_iter().map(|(t, _)| t).collect();
            Ok(SubjectRecord::new(subject, events, censoring))
        })
        .collect()
}

/// Writes records in the canonical events-table form: subjects in order,
/// events ascending, the censoring row last.
pub fn serialize_events(records: &[SubjectRecord]) -> String {
    let mut out = String::from("subject_id,time,is_event\n");
    for r in records {
        for t in &r.event_times {
            let _ = writeln!(out, "{},{},1", r.subject_id, t);
        }
        let _ = writeln!(out, "{},{},0", r.subject_id, r.censoring_time);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Continuous,
    OrderedCategorical,
    Binary,
}

impl CovariateKind {
    fn describe(self) -> &'static str {
        match self {
            CovariateKind::Continuous => "a finite real",
            CovariateKind::OrderedCategorical => "an integer code",
            CovariateKind::Binary => "0 or 1",
        }
    }

    fn admits(self, v: f64) -> bool {
        match self {
            CovariateKind::Continuous => v.is_finite(),
            CovariateKind::OrderedCategorical => v.is_finite() && v.fract() == 0.0,
            CovariateKind::Binary => v == 0.0 || v == 1.0,
        }
    }
}

impl std::str::FromStr for CovariateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "ordered" | "ordinal" | "ordered-categorical" => Ok(Self::OrderedCategorical),
            "binary" => Ok(Self::Binary),
            other => Err(Error::InvalidConfig(format!("unknown covariate kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub columns: Vec<(String, CovariateKind)>,
}

impl CovariateSchema {
    pub fn new(columns: Vec<(String, CovariateKind)>) -> Self {
        Self { columns }
    }

    pub fn continuous<S: AsRef<str>>(names: &[S]) -> Self {
        Self::new(names.iter().map(|n| (n.as_ref().to_string(), CovariateKind::Continuous)).collect())
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

type CovariateVector = Vec<Option<f64>>;

#[derive(Debug, Clone, Default)]
struct SubjectCovariates {
    baseline: Option<CovariateVector>,
    /// Time-specific rows, sorted by time.
    timed: Vec<(f64, CovariateVector)>,
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Covariate values keyed by subject and check-in time.
///
/// Baseline rows (no time) apply at every check-in; time-specific rows
/// apply only at their own time. A cell with no value is missing.
#[derive(Debug, Clone)]
pub struct CovariatePanel {
    pub schema: CovariateSchema,
    subjects: BTreeMap<String, SubjectCovariates>,
}

impl CovariatePanel {
    pub fn new(schema: CovariateSchema) -> Self {
        Self { schema, subjects: BTreeMap::new() }
    }

    pub fn insert_baseline(&mut self, subject: &str, values: Vec<Option<f64>>) {
        self.subjects.entry(subject.to_string()).or_default().baseline = Some(values);
    }

    pub fn insert_at(&mut self, subject: &str, t: f64, values: Vec<Option<f64>>) {
        let entry = self.subjects.entry(subject.to_string()).or_default();
        match entry.timed.binary_search_by(|(s, _)| s.total_cmp(&t)) {
            Ok(i) => entry.timed[i].1 = values,
            Err(i) => entry.timed.insert(i, (t, values)),
        }
    }

    /// Covariate vector at `(subject, t)`; `None` cells are missing.
    pub fn get(&self, subject: &str, t: f64) -> Vec<Option<f64>> {
        let p = self.schema.len();
        let Some(s) = self.subjects.get(subject) else { return vec![None; p] };
        if let Some((_, v)) = s.timed.iter().find(|(time, _)| same_time(*time, t)) {
            return v.clone();
        }
        s.baseline.clone().unwrap_or_else(|| vec![None; p])
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.subjects.keys().map(String::as_str)
    }
}

/// Parses the covariates table `subject_id[,t],name1,...,nameP`.
///
/// Without a `t` column (or with an empty `t` cell) a row is baseline-only.
/// When `schema` is `None` every non-key column is read as continuous.
/// When `known_subjects` is given, rows for other subjects are rejected.
pub fn parse_covariates<R: BufRead>(
    source: R,
    schema: Option<&CovariateSchema>,
    known_subjects: Option<&[SubjectRecord]>,
) -> Result<CovariatePanel> {
    let known: Option<BTreeSet<&str>> = known_subjects.map(|r| r.iter().map(|s| s.subject_id.as_str()).collect());
    let mut lines = source.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(Error::EmptyInput),
            Some((i, line)) => {
                let line = line.map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
                if !line.trim().is_empty() {
                    break line.trim_end_matches('\r').to_string();
                }
            }
        }
    };
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    if cols.first().map(String::as_str) != Some("subject_id") {
        return Err(Error::MissingColumn("subject_id".into()));
    }
    let t_col = cols.iter().position(|c| c == "t");
    let value_cols: Vec<(usize, &String)> =
        cols.iter().enumerate().skip(1).filter(|(i, _)| Some(*i) != t_col).collect();

    let schema = match schema {
        Some(s) => s.clone(),
        None => CovariateSchema::continuous(&value_cols.iter().map(|(_, n)| n.as_str()).collect::<Vec<_>>()),
    };
    // map schema position -> file column index
    let mut positions = Vec::with_capacity(schema.len());
    for (name, _) in &schema.columns {
        let pos = value_cols
            .iter()
            .find(|(_, n)| *n == name)
            .map(|(i, _)| *i)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        positions.push(pos);
    }

    let mut panel = CovariatePanel::new(schema);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let subject = fields[0];
        if let Some(known) = &known {
            if !known.contains(subject) {
                return Err(Error::UnknownSubject { subject: subject.to_string(), line: line_no });
            }
        }
        let mut values = Vec::with_capacity(positions.len());
        for ((name, kind), &pos) in panel.schema.columns.iter().zip(&positions) {
            let cell = fields[pos];
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::WrongKind {
                line: line_no,
                column: name.clone(),
                expected: kind.describe(),
                value: cell.to_string(),
            })?;
            if !kind.admits(v) {
                return Err(Error::WrongKind {
                    line: line_no,
                    column: name.clone(),
                    expected: kind.describe(),
                    value: cell.to_string(),
                });
            }
            values.push(Some(v));
        }
        match t_col.map(|i| fields[i]).filter(|c| !c.is_empty()) {
            None => panel.insert_baseline(subject, values),
            Some(cell) => {
                let t: f64 =
                    cell.parse().map_err(|_| Error::Parse { line: line_no, message: format!("invalid t {cell:?}") })?;
                panel.insert_at(subject, t, values);
            }
        }
    }
    Ok(panel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingCell {
    pub subject_id: String,
    pub t: f64,
    pub covariate: String,
}

/// Report-only dataset check. Fitting requires [`ValidationReport::is_ok`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub missing: Vec<MissingCell>,
    /// Subjects censored before the first check-in; they contribute no rows.
    pub no_rows: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.no_rows.is_empty()
    }
}

pub fn validate_dataset(records: &[SubjectRecord], panel: &CovariatePanel, grid: &WindowGrid) -> ValidationReport {
    let mut report = ValidationReport::default();
    for r in records {
        let times = checkin_times(grid, r);
        if times.is_empty() {
            report.no_rows.push(r.subject_id.clone());
        }
        for t in times {
            for (value, (name, _)) in panel.get(&r.subject_id, t).iter().zip(&panel.schema.columns) {
                if value.is_none() {
                    report.missing.push(MissingCell { subject_id: r.subject_id.clone(), t, covariate: name.clone() });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(s: &str) -> Result<Vec<SubjectRecord>> {
        parse_events(s.as_bytes())
    }

    #[test]
    fn three_subject_example_parses() {
        let recs =
            events("subject_id,time,is_event\nS3,48,1\nS3,62,1\nS3,75,1\nS3,147,1\nS3,240,0\nS2,125,0\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0], SubjectRecord::new("S2", vec![], 125.0));
        assert_eq!(recs[1], SubjectRecord::new("S3", vec![48.0, 62.0, 75.0, 147.0], 240.0));
        assert_eq!(recs[1].gap_times(), vec![14.0, 13.0, 72.0]);
    }

    #[test]
    fn event_errors_are_distinct() {
        assert!(matches!(
            events("subject_id,time,is_event\nS1,80,1\nS1,50,1\nS1,240,0\n"),
            Err(Error::NonAscendingEvents { line: 3, .. })
        ));
        assert!(matches!(
            events("subject_id,time,is_event\nS1,80,1\nS1,80,1\nS1,240,0\n"),
            Err(Error::NonAscendingEvents { .. })
        ));
        assert!(matches!(
            events("subject_id,time,is_event\nS1,100,0\nS1,120,0\n"),
            Err(Error::DuplicateCensoring { line: 3, .. })
        ));
        assert!(matches!(
            events("subject_id,time,is_event\nS1,300,1\nS1,240,0\n"),
            Err(Error::EventAfterCensoring { line: 2, .. })
        ));
        assert_eq!(events("subject_id,time,is_event\n"), Err(Error::EmptyInput));
        assert_eq!(events(""), Err(Error::EmptyInput));
        assert!(matches!(events("subject_id,time,is_event\nS1,10,1\n"), Err(Error::MissingCensoring { .. })));
    }

    #[test]
    fn event_at_censoring_time_is_admitted() {
        let recs = events("subject_id,time,is_event\nA,240,1\nA,240,0\n").unwrap();
        assert_eq!(recs[0].event_times, vec![240.0]);
    }

    #[test]
    fn baseline_covariates_carry_forward() {
        let panel = parse_covariates("subject_id,z1\nS1,0.5\n".as_bytes(), None, None).unwrap();
        for t in [0.0, 60.0, 120.0] {
            assert_eq!(panel.get("S1", t), vec![Some(0.5)]);
        }
    }

    #[test]
    fn binary_column_rejects_two() {
        let schema = CovariateSchema::new(vec![("z".into(), CovariateKind::Binary)]);
        let err = parse_covariates("subject_id,z\nS1,2\n".as_bytes(), Some(&schema), None).unwrap_err();
        assert!(matches!(err, Error::WrongKind { line: 2, .. }));
    }

    #[test]
    fn missing_schema_column_and_unknown_subject() {
        let schema = CovariateSchema::continuous(&["z1", "z2"]);
        let err = parse_covariates("subject_id,z1\nS1,1\n".as_bytes(), Some(&schema), None).unwrap_err();
        assert_eq!(err, Error::MissingColumn("z2".into()));

        let recs = vec![SubjectRecord::new("S1", vec![], 10.0)];
        let err = parse_covariates("subject_id,z1\nS9,1\n".as_bytes(), None, Some(&recs)).unwrap_err();
        assert!(matches!(err, Error::UnknownSubject { .. }));
    }

    #[test]
    fn time_varying_gap_is_reported_missing() {
        let panel = parse_covariates("subject_id,t,z\nS1,0,1\nS1,60,2\n".as_bytes(), None, None).unwrap();
        assert_eq!(panel.get("S1", 60.0), vec![Some(2.0)]);
        assert_eq!(panel.get("S1", 120.0), vec![None]);

        let grid = WindowGrid::new(0.0, 60.0, 60.0, 240.0).unwrap();
        let recs = vec![SubjectRecord::new("S1", vec![], 200.0)];
        let report = validate_dataset(&recs, &panel, &grid);
        assert_eq!(
            report.missing,
            vec![
                MissingCell { subject_id: "S1".into(), t: 120.0, covariate: "z".into() },
                MissingCell { subject_id: "S1".into(), t: 180.0, covariate: "z".into() },
            ]
        );
    }

    #[test]
    fn validation_of_covered_and_short_subjects() {
        let grid = WindowGrid::new(0.0, 60.0, 60.0, 240.0).unwrap();
        let panel = parse_covariates("subject_id,z\nA,1\nB,0\n".as_bytes(), None, None).unwrap();
        let recs = vec![SubjectRecord::new("A", vec![10.0], 240.0), SubjectRecord::new("B", vec![], 100.0)];
        assert!(validate_dataset(&recs, &panel, &grid).is_empty());

        let late = WindowGrid::new(30.0, 60.0, 60.0, 240.0).unwrap();
        let recs = vec![SubjectRecord::new("C", vec![], 20.0)];
        let panel = parse_covariates("subject_id,z\nC,1\n".as_bytes(), None, None).unwrap();
        let report = validate_dataset(&recs, &panel, &late);
        assert!(report.is_ok());
        assert_eq!(report.no_rows, vec!["C".to_string()]);
    }
}
