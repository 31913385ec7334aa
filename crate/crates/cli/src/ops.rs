//! In-memory stage operations shared by the subcommands and the pipeline.

use std::collections::{BTreeMap, HashMap};

use anyhow::{anyhow, bail, ensure, Result};
use rand::seq::SliceRandom;
use recurrent_forest::evaluation::{harrell_c_scoped, sample_sd};
use recurrent_forest::glm::{model_a_design, model_b_design, MODEL_A_COLUMNS, MODEL_B_COLUMNS};
use recurrent_forest::rng::stream;
use recurrent_forest::{
    bootstrap_se, fit_pseudo_logit, CovariatePanel, Forest, GlmFit, GlmOptions, LongitudinalRow, PairScope, ScoredRow,
    SubjectRecord, WaldRow, ZScale,
};
use serde::{Deserialize, Serialize};

use crate::io::PseudoTable;

/// Stream key of the subject holdout draw.
const HOLDOUT_KEY: u64 = 0x484f_4c44;

pub fn parse_scope(s: &str) -> Result<PairScope> {
    match s {
        "pooled" => Ok(PairScope::Pooled),
        "within-checkin" => Ok(PairScope::WithinCheckin),
        other => bail!("unknown pair scope {other:?} (expected pooled or within-checkin)"),
    }
}

pub fn scope_name(scope: PairScope) -> &'static str {
    match scope {
        PairScope::Pooled => "pooled",
        PairScope::WithinCheckin => "within-checkin",
    }
}

pub fn parse_z_scale(s: &str) -> Result<ZScale> {
    match s {
        "permutation-sd" => Ok(ZScale::PermutationSd),
        "standard-error" => Ok(ZScale::StandardError),
        other => bail!("unknown z scale {other:?} (expected permutation-sd or standard-error)"),
    }
}

pub fn z_scale_name(z: ZScale) -> &'static str {
    match z {
        ZScale::PermutationSd => "permutation-sd",
        ZScale::StandardError => "standard-error",
    }
}

/// Splits subjects into `(training, validation)` keeping input order.
/// A positive fraction always holds out at least one subject and leaves
/// at least one for training.
pub fn split_holdout(
    records: &[SubjectRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SubjectRecord>, Vec<SubjectRecord>)> {
    ensure!((0.0..1.0).contains(&fraction), "validation fraction must lie in [0, 1), got {fraction}");
    if fraction == 0.0 {
        return Ok((records.to_vec(), Vec::new()));
    }
    ensure!(records.len() >= 2, "a holdout needs at least two subjects");
    let n_val = ((fraction * records.len() as f64).round() as usize).clamp(1, records.len() - 1);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut stream(seed, &[HOLDOUT_KEY]));
    let mut held = vec![false; records.len()];
    for &i in &order[..n_val] {
        held[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = records.iter().cloned().zip(held).partition(|(_, h)| *h);
    Ok((train.into_iter().map(|p| p.0).collect(), val.into_iter().map(|p| p.0).collect()))
}

/// Forest covariate names without the trailing check-in time.
pub fn model_covariates(forest: &Forest) -> Result<&[String]> {
    match forest.feature_names.split_last() {
        Some((last, rest)) if last == "t" => Ok(rest),
        _ => bail!("model features do not end with the check-in time t"),
    }
}

/// Forest predictions at `(subject, t)` query points.
pub fn predict(forest: &Forest, panel: &CovariatePanel, keys: &[(String, f64)]) -> Result<Vec<f64>> {
    let names = model_covariates(forest)?;
    ensure!(panel.schema.names() == names, "covariate panel columns do not match the model");
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(keys.len());
    for (s, t) in keys {
        let cells = panel.get(s, *t);
        let mut x = Vec::with_capacity(cells.len() + 1);
        for (cell, name) in cells.iter().zip(names) {
            match cell {
                Some(v) => x.push(*v),
                None => missing.push(format!("({s}, {t}, {name})")),
            }
        }
        x.push(*t);
        if x.len() == names.len() + 1 {
            out.push(forest.predict(&x)?);
        }
    }
    if !missing.is_empty() {
        let more = missing.len().saturating_sub(10);
        missing.truncate(10);
        let tail = if more > 0 { format!(" and {more} more") } else { String::new() };
        bail!("missing covariate values at {}{tail}", missing.join(", "));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub c: f64,
    pub se: f64,
    pub bootstrap: usize,
    pub redraws: usize,
    pub seed: u64,
    pub scope: String,
    pub rows: usize,
    pub subjects: usize,
    /// Prediction rows with no matching data row.
    pub unmatched_predictions: usize,
}

fn time_key(t: f64) -> u64 {
    // +0.0 and -0.0 name the same check-in
    (t + 0.0).to_bits()
}

/// Harrell's C of the predictions against the rows' residual times, with a
/// subject-bootstrap standard error.
pub fn evaluate(
    rows: &[LongitudinalRow],
    predictions: &[(String, f64, f64)],
    bootstrap: usize,
    seed: u64,
    scope: PairScope,
) -> Result<Metrics> {
    let mut by_key: HashMap<(&str, u64), f64> = HashMap::with_capacity(predictions.len());
    for (s, t, p) in predictions {
        if by_key.insert((s.as_str(), time_key(*t)), *p).is_some() {
            bail!("duplicate prediction for ({s}, {t})");
        }
    }
    let mut scored = Vec::with_capacity(rows.len());
    for r in rows {
        let score = by_key
            .get(&(r.subject_id.as_str(), time_key(r.t)))
            .ok_or_else(|| anyhow!("no prediction for ({}, {})", r.subject_id, r.t))?;
        scored.push(ScoredRow { subject_id: r.subject_id.clone(), t: r.t, x: r.x, delta: r.delta, score: *score });
    }
    let c = harrell_c_scoped(&scored, scope)?;
    let se = bootstrap_se(|s: &[ScoredRow]| harrell_c_scoped(s, scope), &scored, bootstrap, seed)?;
    let subjects = scored.iter().map(|r| r.subject_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    Ok(Metrics {
        c,
        se: se.se,
        bootstrap,
        redraws: se.redraws,
        seed,
        scope: scope_name(scope).to_string(),
        rows: scored.len(),
        subjects,
        unmatched_predictions: predictions.len() - scored.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmReport {
    pub design: String,
    #[serde(flatten)]
    pub fit: GlmFit,
    pub wald: Vec<WaldRow>,
}

fn z_columns(p: &PseudoTable) -> Result<[usize; 7]> {
    let mut idx = [0; 7];
    for (k, slot) in idx.iter_mut().enumerate() {
        let want = format!("z{}", k + 1);
        *slot = p
            .names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(&want))
            .ok_or_else(|| anyhow!("built-in designs need covariate column {want}"))?;
    }
    Ok(idx)
}

/// Pseudo-value logistic fit. `design` is `model_a`, `model_b` or a
/// comma-separated list of pseudo-table columns (`t` included).
pub fn glm(p: &PseudoTable, design: &str, options: &GlmOptions) -> Result<GlmReport> {
    let (names, rows): (Vec<String>, Vec<Vec<f64>>) = match design {
        "model_a" | "model_b" => {
            let idx = z_columns(p)?;
            let (cols, f): (&[&str], fn(&[f64]) -> recurrent_forest::Result<Vec<f64>>) = if design == "model_a" {
                (&MODEL_A_COLUMNS, model_a_design)
            } else {
                (&MODEL_B_COLUMNS, model_b_design)
            };
            let rows =
                p.covariates.iter().map(|z| f(&idx.map(|i| z[i]))).collect::<recurrent_forest::Result<Vec<_>>>()?;
            (cols.iter().map(|c| c.to_string()).collect(), rows)
        }
        list => {
            let cols: Vec<&str> = list.split(',').map(str::trim).filter(|c| !c.is_empty()).collect();
            let mut getters = Vec::with_capacity(cols.len());
            for c in &cols {
                if *c == "t" {
                    getters.push(None);
                } else {
                    let i =
                        p.names.iter().position(|n| n == c).ok_or_else(|| anyhow!("design column {c} not found"))?;
                    getters.push(Some(i));
                }
            }
            let rows = (0..p.subjects.len())
                .map(|r| getters.iter().map(|g| g.map_or(p.t[r], |i| p.covariates[r][i])).collect())
                .collect();
            (cols.iter().map(|c| c.to_string()).collect(), rows)
        }
    };
    let fit = fit_pseudo_logit(&names, &rows, &p.pseudo, &p.subjects, options)?;
    let wald = fit.wald_table();
    Ok(GlmReport { design: design.to_string(), fit, wald })
}

/// One long-format simulation row.
#[derive(Debug, Clone, PartialEq)]
pub struct TidyRow {
    pub method: String,
    pub rho: f64,
    pub censoring: String,
    pub history: String,
    pub replicate: usize,
    pub c: f64,
}

pub const TIDY_HEADER: &str = "method,rho,censoring,history,replicate,c";
pub const SUMMARY_HEADER: &str = "method,rho,censoring,history,replicates,mean,sd";

pub fn format_tidy(rows: &[TidyRow]) -> String {
    let mut out = format!("{TIDY_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.method, r.rho, r.censoring, r.history, r.replicate, r.c));
    }
    out
}

pub fn parse_tidy(table: &crate::io::Table) -> Result<Vec<TidyRow>> {
    ensure!(table.header.join(",") == TIDY_HEADER, "expected header {TIDY_HEADER}, got {}", table.header.join(","));
    table
        .rows
        .iter()
        .map(|(line, c)| {
            Ok(TidyRow {
                method: c[0].clone(),
                rho: crate::io::float(&c[1], *line, "rho")?,
                censoring: c[2].clone(),
                history: c[3].clone(),
                replicate: c[4].parse().map_err(|_| anyhow!("line {line}: bad replicate {:?}", c[4]))?,
                c: crate::io::float(&c[5], *line, "c")?,
            })
        })
        .collect()
}

/// Mean and sample sd per (method, rho, censoring, history), in order of
/// first appearance. The sd cell is empty for a single replicate.
pub fn summarize(rows: &[TidyRow]) -> String {
    let mut order: Vec<(String, String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.rho.to_string(), r.censoring.clone(), r.history.clone());
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r.c);
    }
    let mut out = format!("{SUMMARY_HEADER}\n");
    for key in order {
        let values = &groups[&key];
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = if values.len() > 1 { sample_sd(values).to_string() } else { String::new() };
        out.push_str(&format!("{},{},{},{},{},{mean},{sd}\n", key.0, key.1, key.2, key.3, values.len()));
    }
    out
}
