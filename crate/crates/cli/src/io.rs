//! Comma-separated tables used between pipeline stages.
//!
//! | file        | columns                                   |
//! |-------------|-------------------------------------------|
//! | rows        | `subject_id,t,x,delta`                    |
//! | pseudo      | `subject_id,t,pseudo,<covariate names>`   |
//! | predictions | `subject_id,t,prediction`                 |
//! | importance  | `variable,statistic,z,p`                  |
//! | schema      | `name,kind` (`continuous`, `ordered`, `binary`) |
//!
//! Cells are unquoted; floats are written in shortest round-trip form.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use recurrent_forest::{
    CovariateKind, CovariatePanel, CovariateSchema, ImportanceReport, LongitudinalRow, SubjectRecord, TrainingSet,
};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    /// `(line number, cells)`
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| anyhow!("empty table"))?;
        let header: Vec<String> = split(head);
        let mut rows = Vec::new();
        for (i, line) in lines {
            let cells = split(line);
            if cells.len() != header.len() {
                bail!("line {}: expected {} cells, found {}", i + 1, header.len(), cells.len());
            }
            rows.push((i + 1, cells));
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| anyhow!("missing column {name}"))
    }

    pub fn expect_prefix(&self, names: &[&str]) -> Result<()> {
        if self.header.len() < names.len() || self.header[..names.len()] != *names {
            bail!("expected header starting with {}, got {}", names.join(","), self.header.join(","));
        }
        Ok(())
    }
}

fn split(line: &str) -> Vec<String> {
    line.trim_end_matches('\r').split(',').map(|c| c.trim().to_string()).collect()
}

pub fn float(cell: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| anyhow!("line {line}: column {column}: not a number: {cell:?}"))?;
    if !v.is_finite() {
        bail!("line {line}: column {column}: non-finite value {cell:?}");
    }
    Ok(v)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_events(path: &Path) -> Result<Vec<SubjectRecord>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    recurrent_forest::parse_events(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

pub fn read_schema(path: &Path) -> Result<CovariateSchema> {
    let table = Table::read(path)?;
    table.expect_prefix(&["name", "kind"]).with_context(|| format!("in {}", path.display()))?;
    let mut columns = Vec::with_capacity(table.rows.len());
    for (line, cells) in &table.rows {
        let kind: CovariateKind = cells[1].parse().with_context(|| format!("{}: line {line}", path.display()))?;
        columns.push((cells[0].clone(), kind));
    }
    Ok(CovariateSchema::new(columns))
}

pub fn read_covariates(
    path: &Path,
    schema: Option<&CovariateSchema>,
    known: Option<&[SubjectRecord]>,
) -> Result<CovariatePanel> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    recurrent_forest::parse_covariates(BufReader::new(file), schema, known)
        .with_context(|| format!("in {}", path.display()))
}

pub fn format_rows(rows: &[LongitudinalRow]) -> String {
    let mut out = String::from("subject_id,t,x,delta\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.subject_id, r.t, r.x, u8::from(r.delta));
    }
    out
}

pub fn parse_rows(table: &Table) -> Result<Vec<LongitudinalRow>> {
    table.expect_prefix(&["subject_id", "t", "x", "delta"])?;
    table
        .rows
        .iter()
        .map(|(line, c)| {
            let delta = match c[3].as_str() {
                "1" => true,
                "0" => false,
                other => bail!("line {line}: delta must be 0 or 1, got {other:?}"),
            };
            let x = float(&c[2], *line, "x")?;
            if x < 0.0 {
                bail!("line {line}: negative residual time {x}");
            }
            Ok(LongitudinalRow { subject_id: c[0].clone(), t: float(&c[1], *line, "t")?, x, delta })
        })
        .collect()
}

/// Pseudo-observation table in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoTable {
    pub names: Vec<String>,
    pub subjects: Vec<String>,
    pub t: Vec<f64>,
    pub pseudo: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
}

impl PseudoTable {
    pub fn from_dataset(d: &recurrent_forest::PseudoDataset) -> Self {
        Self {
            names: d.covariate_names.clone(),
            subjects: d.rows.iter().map(|r| r.subject_id.clone()).collect(),
            t: d.rows.iter().map(|r| r.t).collect(),
            pseudo: d.rows.iter().map(|r| r.s_hat).collect(),
            covariates: d.covariates.clone(),
        }
    }

    pub fn parse(table: &Table) -> Result<Self> {
        table.expect_prefix(&["subject_id", "t", "pseudo"])?;
        let names = table.header[3..].to_vec();
        if names.iter().any(|n| n == "t") {
            bail!("covariate column named t clashes with the check-in time");
        }
        let mut out = Self { names, subjects: vec![], t: vec![], pseudo: vec![], covariates: vec![] };
        for (line, c) in &table.rows {
            out.subjects.push(c[0].clone());
            out.t.push(float(&c[1], *line, "t")?);
            out.pseudo.push(float(&c[2], *line, "pseudo")?);
            let z = c[3..]
                .iter()
                .zip(&table.header[3..])
                .map(|(v, name)| float(v, *line, name))
                .collect::<Result<Vec<_>>>()?;
            out.covariates.push(z);
        }
        if out.subjects.is_empty() {
            bail!("no pseudo-observation rows");
        }
        Ok(out)
    }

    pub fn format(&self) -> String {
        let mut out = String::from("subject_id,t,pseudo");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.subjects.len() {
            let _ = write!(out, "{},{},{}", self.subjects[i], self.t[i], self.pseudo[i]);
            for v in &self.covariates[i] {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Forest training view: covariates with `t` appended last.
    pub fn training_set(&self) -> Result<TrainingSet> {
        let mut names = self.names.clone();
        names.push("t".into());
        let rows: Vec<Vec<f64>> = self
            .covariates
            .iter()
            .zip(&self.t)
            .map(|(z, &t)| {
                let mut v = z.clone();
                v.push(t);
                v
            })
            .collect();
        Ok(TrainingSet::from_rows(names, &rows, self.pseudo.clone(), &self.subjects)?)
    }
}

pub fn format_predictions(keys: &[(String, f64)], values: &[f64]) -> String {
    let mut out = String::from("subject_id,t,prediction\n");
    for ((s, t), v) in keys.iter().zip(values) {
        let _ = writeln!(out, "{s},{t},{v}");
    }
    out
}

pub fn parse_predictions(table: &Table) -> Result<Vec<(String, f64, f64)>> {
    table.expect_prefix(&["subject_id", "t", "prediction"])?;
    table
        .rows
        .iter()
        .map(|(line, c)| Ok((c[0].clone(), float(&c[1], *line, "t")?, float(&c[2], *line, "prediction")?)))
        .collect()
}

pub fn format_importance(report: &ImportanceReport) -> String {
    let mut out = String::from("variable,statistic,z,p\n");
    for v in &report.variables {
        let _ = writeln!(out, "{},{},{},{}", v.variable, v.statistic, v.z, v.p);
    }
    out
}
