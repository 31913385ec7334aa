//! Simulation study driver.
//!
//! A replicate generates a training cohort and an independent test cohort
//! from the same law, builds the censored longitudinal rows (with one
//! pre-baseline burn-in window used only for history), fits the forest and
//! the two logit comparators on training pseudo-observations, and scores
//! the test rows with Harrell's C.

mod generate;
mod history;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{harrell_c_scoped, rubin_combine, sample_sd, PairScope, PooledEstimate, ScoredRow};
use crate::event_data::SubjectRecord;
use crate::forest::{Forest, ForestConfig, TrainingSet};
use crate::glm::{fit_pseudo_logit, model_a_design, model_b_design, GlmOptions, MODEL_A_COLUMNS, MODEL_B_COLUMNS};
use crate::pseudo::window_pseudo_values;
use crate::rng::{derive_seed, stream, with_threads};
use crate::window::{transform, LongitudinalRow, WindowGrid};

pub use generate::{
    calibrate_censoring, draw_accepted, draw_covariates, draw_gap_times, hazard, hazard_accepted, simulate_subject,
    Covariates, GapSampler, SimulatedSubject, HAZARD_MAX, HAZARD_MIN,
};
pub use history::{history_covariates, impute_pre_baseline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CensoringLevel {
    None,
    Light,
    Moderate,
    Heavy,
}

impl CensoringLevel {
    /// Target fraction of subjects censored before the end of study.
    pub fn target(self) -> f64 {
        match self {
            CensoringLevel::None => 0.0,
            CensoringLevel::Light => 0.23,
            CensoringLevel::Moderate => 0.45,
            CensoringLevel::Heavy => 0.63,
        }
    }

    pub const ALL: [CensoringLevel; 4] = [Self::None, Self::Light, Self::Moderate, Self::Heavy];
}

impl fmt::Display for CensoringLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CensoringLevel::None => "none",
            CensoringLevel::Light => "light",
            CensoringLevel::Moderate => "moderate",
            CensoringLevel::Heavy => "heavy",
        })
    }
}

impl FromStr for CensoringLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown censoring level {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistoryMode {
    None,
    /// The pre-baseline window is observed.
    Full,
    /// The pre-baseline window is multiply imputed.
    Partial,
}

impl fmt::Display for HistoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HistoryMode::None => "none",
            HistoryMode::Full => "full",
            HistoryMode::Partial => "partial",
        })
    }
}

impl FromStr for HistoryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "full" => Ok(Self::Full),
            "partial" => Ok(Self::Partial),
            _ => Err(Error::InvalidConfig(format!("unknown history mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    ModelA,
    RfrePo,
    ModelB,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::ModelA, Method::RfrePo, Method::ModelB];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ModelA => "model_a",
            Method::RfrePo => "rfre_po",
            Method::ModelB => "model_b",
        })
    }
}

/// One cell of the simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub rho: f64,
    pub censoring: CensoringLevel,
    pub history: HistoryMode,
    pub t0: f64,
    /// Check-in spacing; also the burn-in length and the history cap.
    pub spacing: f64,
    pub last_checkin: f64,
    pub tau: f64,
    pub replicates: usize,
    pub imputations: usize,
    /// Rate of the exponential used to impute the pre-baseline residual.
    pub imputation_rate: f64,
    pub forest: ForestConfig,
    pub glm: GlmOptions,
    pub pair_scope: PairScope,
    /// Subjects per Monte Carlo evaluation in censoring calibration.
    pub calibration_subjects: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 500,
            rho: 0.0,
            censoring: CensoringLevel::None,
            history: HistoryMode::None,
            t0: 0.0,
            spacing: 1.0 / 12.0,
            last_checkin: 2.0,
            tau: 1.0 / 6.0,
            replicates: 30,
            imputations: 10,
            imputation_rate: 7.5,
            forest: ForestConfig::default(),
            glm: GlmOptions::default(),
            pair_scope: PairScope::Pooled,
            calibration_subjects: 100_000,
            seed: 0,
            threads: 1,
        }
    }
}

impl SimConfig {
    /// Administrative end of study.
    pub fn end(&self) -> f64 {
        self.last_checkin + self.tau
    }

    /// Check-in grid including the burn-in window at `t0 - spacing`.
    pub fn grid_with_burn_in(&self) -> Result<WindowGrid> {
        WindowGrid::new(self.t0 - self.spacing, self.spacing, self.tau, self.end())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig("n must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be positive".into()));
        }
        if self.history == HistoryMode::Partial && self.imputations < 2 {
            return Err(Error::InvalidConfig("partial history needs at least 2 imputations".into()));
        }
        self.grid_with_burn_in().map(|_| ())
    }
}

/// Exponential dropout rate hitting the configured censoring fraction.
pub fn dropout_rate(config: &SimConfig) -> Result<f64> {
    let end = config.end();
    let mut rng = stream(config.seed, &[u64::MAX]);
    calibrate_censoring(
        config.censoring.target(),
        |rate, rng| {
            use rand_distr::{Distribution, Exp};
            Exp::new(rate).expect("positive rate").sample(rng) < end
        },
        config.calibration_subjects,
        &mut rng,
    )
}

/// A simulated cohort with its longitudinal rows, burn-in windows included.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub subjects: Vec<SimulatedSubject>,
    /// Per subject, its rows in time order (first row is the burn-in).
    pub rows: Vec<Vec<LongitudinalRow>>,
}

impl Cohort {
    pub fn generate(config: &SimConfig, dropout: f64, seed: u64, label: &str) -> Result<Self> {
        let grid = config.grid_with_burn_in()?;
        let origin = grid.t0;
        let horizon = config.end() + config.tau + config.spacing;
        let mut rng = stream(seed, &[]);
        let subjects = (0..config.n)
            .map(|i| {
                simulate_subject(format!("{label}{i}"), config.rho, origin, horizon, config.end(), dropout, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = subjects
            .iter()
            .map(|s| {
                let record = SubjectRecord::new(s.id.clone(), s.event_times.clone(), s.censoring);
                transform(std::slice::from_ref(&record), &grid)
            })
            .collect();
        Ok(Self { subjects, rows })
    }

    pub fn rejected(&self) -> usize {
        self.subjects.iter().map(|s| s.rejected).sum()
    }

    /// Check-in rows (burn-in excluded), flattened with subject indices.
    fn checkin_rows(&self) -> Vec<(usize, &LongitudinalRow)> {
        self.rows.iter().enumerate().flat_map(|(i, r)| r.iter().skip(1).map(move |row| (i, row))).collect()
    }

    /// History column aligned with [`Cohort::checkin_rows`].
    fn history_column(&self, cap: f64, imputed: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (i, rows) in self.rows.iter().enumerate() {
            if rows.len() < 2 {
                continue;
            }
            out.extend(history_covariates(rows, cap, imputed.map(|v| v[i]))?);
        }
        Ok(out)
    }
}

/// Covariate columns `Z1..Z7, t` for the check-in rows.
fn base_columns(cohort: &Cohort) -> (Vec<Vec<f64>>, Vec<[f64; 7]>) {
    let rows = cohort.checkin_rows();
    let mut columns: Vec<Vec<f64>> = (0..8).map(|_| Vec::with_capacity(rows.len())).collect();
    let mut zs = Vec::with_capacity(rows.len());
    for (i, r) in &rows {
        let z = cohort.subjects[*i].z;
        for (c, v) in columns.iter_mut().zip(z.iter().chain(std::iter::once(&r.t))) {
            c.push(*v);
        }
        zs.push(z);
    }
    (columns, zs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Test-cohort C (pooled over imputations in partial-history runs).
    pub c: f64,
    /// Per-imputation C values when imputing.
    pub imputed: Vec<f64>,
    pub pooled: Option<PooledEstimate>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub results: Vec<MethodResult>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub rejected: usize,
}

struct Prepared {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    zs: Vec<[f64; 7]>,
    subjects: Vec<String>,
    outcome: Vec<f64>,
    x: Vec<f64>,
    delta: Vec<bool>,
    t: Vec<f64>,
}

fn prepare(cohort: &Cohort, tau: f64, with_outcome: bool) -> Result<Prepared> {
    let rows = cohort.checkin_rows();
    let (columns, zs) = base_columns(cohort);
    let flat: Vec<LongitudinalRow> = rows.iter().map(|(_, r)| (*r).clone()).collect();
    let outcome = if with_outcome { window_pseudo_values(&flat, tau)?.0 } else { Vec::new() };
    let mut names: Vec<String> = MODEL_B_COLUMNS.iter().map(|s| s.to_string()).collect();
    names.push("t".into());
    Ok(Prepared {
        names,
        columns,
        zs,
        subjects: flat.iter().map(|r| r.subject_id.clone()).collect(),
        outcome,
        x: flat.iter().map(|r| r.x).collect(),
        delta: flat.iter().map(|r| r.delta).collect(),
        t: flat.iter().map(|r| r.t).collect(),
    })
}

fn glm_rows(zs: &[[f64; 7]], history: Option<&[f64]>, method: Method) -> Result<Vec<Vec<f64>>> {
    zs.iter()
        .enumerate()
        .map(|(i, z)| {
            let mut row = match method {
                Method::ModelA => model_a_design(z)?,
                _ => model_b_design(z)?,
            };
            if let Some(h) = history {
                row.push(h[i]);
            }
            Ok(row)
        })
        .collect()
}

/// Fits all three methods on `train` and returns test-row scores.
fn fit_and_score(
    config: &SimConfig,
    train: &Prepared,
    test: &Prepared,
    train_history: Option<&[f64]>,
    test_history: Option<&[f64]>,
    forest_seed: u64,
) -> Result<Vec<(Method, Vec<f64>, bool)>> {
    let with_history = |p: &Prepared, h: Option<&[f64]>| {
        let mut names = p.names.clone();
        let mut columns = p.columns.clone();
        if let Some(h) = h {
            names.push("history".into());
            columns.push(h.to_vec());
        }
        (names, columns)
    };
    let (names, columns) = with_history(train, train_history);
    let train_set = TrainingSet::new(names, columns, train.outcome.clone(), train.subjects.clone())?;
    let (names, columns) = with_history(test, test_history);
    let test_set = TrainingSet::new(names, columns, vec![0.0; test.x.len()], test.subjects.clone())?;

    let forest_cfg = ForestConfig { seed: forest_seed, threads: config.threads, ..config.forest.clone() };
    let forest = Forest::fit(&train_set, &forest_cfg)?;
    let forest_scores = forest.predict_set(&test_set)?;

    let mut out = Vec::with_capacity(3);
    for method in Method::ALL {
        if method == Method::RfrePo {
            out.push((method, forest_scores.clone(), true));
            continue;
        }
        let mut cols: Vec<String> = match method {
            Method::ModelA => MODEL_A_COLUMNS.iter().map(|s| s.to_string()).collect(),
            _ => MODEL_B_COLUMNS.iter().map(|s| s.to_string()).collect(),
        };
        if train_history.is_some() {
            cols.push("history".into());
        }
        let design = glm_rows(&train.zs, train_history, method)?;
        let fit = fit_pseudo_logit(&cols, &design, &train.outcome, &train.subjects, &config.glm)?;
        // C is rank-based, so the linear predictor stands in for expit of it
        // and avoids ties from saturated probabilities
        let scores = glm_rows(&test.zs, test_history, method)?
            .iter()
            .map(|r| fit.linear_predictor(r))
            .collect::<Result<Vec<_>>>()?;
        out.push((method, scores, fit.converged));
    }
    Ok(out)
}

fn c_statistic(config: &SimConfig, test: &Prepared, scores: &[f64]) -> Result<f64> {
    let rows: Vec<ScoredRow> = (0..scores.len())
        .map(|i| ScoredRow {
            subject_id: test.subjects[i].clone(),
            t: test.t[i],
            x: test.x[i],
            delta: test.delta[i],
            score: scores[i],
        })
        .collect();
    harrell_c_scoped(&rows, config.pair_scope)
}

/// Runs one replicate with a pre-calibrated dropout rate.
pub fn run_replicate(config: &SimConfig, replicate: usize, dropout: f64) -> Result<ReplicateRecord> {
    let wrap = |e: Error| Error::Replicate { replicate, source: Box::new(e) };
    let rep = replicate as u64;
    let train_cohort = Cohort::generate(config, dropout, derive_seed(config.seed, &[rep, 1]), "train").map_err(wrap)?;
    let test_cohort = Cohort::generate(config, dropout, derive_seed(config.seed, &[rep, 2]), "test").map_err(wrap)?;
    let train = prepare(&train_cohort, config.tau, true).map_err(wrap)?;
    let test = prepare(&test_cohort, config.tau, false).map_err(wrap)?;

    let cap = config.spacing;
    let imputations = if config.history == HistoryMode::Partial { config.imputations } else { 1 };
    let mut per_method: Vec<(Method, Vec<f64>, bool)> = Method::ALL.iter().map(|&m| (m, Vec::new(), true)).collect();
    for m in 0..imputations {
        let (train_h, test_h) = match config.history {
            HistoryMode::None => (None, None),
            HistoryMode::Full => (
                Some(train_cohort.history_column(cap, None).map_err(wrap)?),
                Some(test_cohort.history_column(cap, None).map_err(wrap)?),
            ),
            HistoryMode::Partial => {
                let mut rng = stream(config.seed, &[rep, 4, m as u64]);
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| impute_pre_baseline(config.imputation_rate, &mut rng)).collect()
                };
                let train_imp = draw(train_cohort.subjects.len());
                let test_imp = draw(test_cohort.subjects.len());
                (
                    Some(train_cohort.history_column(cap, Some(&train_imp)).map_err(wrap)?),
                    Some(test_cohort.history_column(cap, Some(&test_imp)).map_err(wrap)?),
                )
            }
        };
        let forest_seed = derive_seed(config.seed, &[rep, 3, m as u64]);
        let scored =
            fit_and_score(config, &train, &test, train_h.as_deref(), test_h.as_deref(), forest_seed).map_err(wrap)?;
        for ((_, cs, conv), (_, scores, converged)) in per_method.iter_mut().zip(scored) {
            cs.push(c_statistic(config, &test, &scores).map_err(wrap)?);
            *conv &= converged;
        }
    }

    let results = per_method
        .into_iter()
        .map(|(method, cs, converged)| {
            if cs.len() > 1 {
                // within-imputation variances are not estimated here
                let pooled = rubin_combine(&cs, &vec![0.0; cs.len()])?;
                Ok(MethodResult { method, c: pooled.estimate, imputed: cs, pooled: Some(pooled), converged })
            } else {
                Ok(MethodResult { method, c: cs[0], imputed: Vec::new(), pooled: None, converged })
            }
        })
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    Ok(ReplicateRecord {
        replicate,
        results,
        train_rows: train.x.len(),
        test_rows: test.x.len(),
        rejected: train_cohort.rejected() + test_cohort.rejected(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    /// Empirical standard deviation; absent with a single replicate.
    pub sd: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: SimConfig,
    pub dropout_rate: f64,
    pub summary: Vec<MethodSummary>,
    pub records: Vec<ReplicateRecord>,
}

/// One long-format row per (method, replicate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub method: Method,
    pub rho: f64,
    pub censoring: CensoringLevel,
    pub history: HistoryMode,
    pub replicate: usize,
    pub c: f64,
}

impl StudyResult {
    pub fn tidy_rows(&self) -> Vec<TidyRow> {
        self.records
            .iter()
            .flat_map(|r| {
                r.results.iter().map(move |m| TidyRow {
                    method: m.method,
                    rho: self.config.rho,
                    censoring: self.config.censoring,
                    history: self.config.history,
                    replicate: r.replicate,
                    c: m.c,
                })
            })
            .collect()
    }

    pub fn mean(&self, method: Method) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method).map(|s| s.mean)
    }
}

pub fn summarize(records: &[ReplicateRecord]) -> Vec<MethodSummary> {
    Method::ALL
        .iter()
        .map(|&method| {
            let values: Vec<f64> =
                records.iter().flat_map(|r| r.results.iter().filter(|m| m.method == method).map(|m| m.c)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let sd = (values.len() > 1).then(|| sample_sd(&values));
            MethodSummary { method, mean, sd, replicates: values.len() }
        })
        .collect()
}

/// Runs every replicate of a study cell. Output depends only on the
/// configuration (including its seed), not on the thread count.
pub fn run_study(config: &SimConfig) -> Result<StudyResult> {
    config.validate()?;
    with_threads(config.threads, || {
        let dropout = dropout_rate(config)?;
        let records = (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(config, r, dropout))
            .collect::<Result<Vec<_>>>()?;
        Ok(StudyResult { config: config.clone(), dropout_rate: dropout, summary: summarize(&records), records })
    })
}
