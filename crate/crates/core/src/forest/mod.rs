//! Historical random forest over pseudo-observation outcomes.
//!
//! Each tree is grown on a two-stage bootstrap: subjects are drawn with
//! replacement and every check-in row of a drawn subject enters the bag
//! once per draw. Splits minimise the within-children sum of squared
//! errors over the distinct observed values of `mtry` randomly chosen
//! covariates, redrawn at every node.

mod format;
mod tree;

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, with_threads};

pub use format::{FORMAT_VERSION, MAGIC};
pub use tree::{best_split, SplitChoice, Tree, TreeNode};

/// Column-major training data with a subject label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub outcome: Vec<f64>,
    /// Distinct subjects in order of first appearance.
    pub subject_ids: Vec<String>,
    /// Index into `subject_ids` for every row.
    pub row_subject: Vec<u32>,
}

impl TrainingSet {
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        outcome: Vec<f64>,
        row_subjects: Vec<String>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::SchemaMismatch(format!("{} names for {} columns", names.len(), columns.len())));
        }
        let n = outcome.len();
        if row_subjects.len() != n || columns.iter().any(|c| c.len() != n) {
            return Err(Error::SchemaMismatch("column lengths differ from outcome length".into()));
        }
        let mut index: HashMap<&str, u32> = HashMap::new();
        let mut subject_ids = Vec::new();
        let mut row_subject = Vec::with_capacity(n);
        for s in &row_subjects {
            let next = subject_ids.len() as u32;
            let id = *index.entry(s.as_str()).or_insert_with(|| {
                subject_ids.push(s.clone());
                next
            });
            row_subject.push(id);
        }
        Ok(Self { names, columns, outcome, subject_ids, row_subject })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>], outcome: Vec<f64>, subjects: &[String]) -> Result<Self> {
        let p = names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::SchemaMismatch(format!("row has {} values, schema has {p}", bad.len())));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::new(names, columns, outcome, subjects.to_vec())
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Per-row bag weights from per-subject draw counts.
    pub fn row_weights(&self, subject_counts: &[u32]) -> Vec<u32> {
        self.row_subject.iter().map(|&s| subject_counts[s as usize]).collect()
    }
}

/// Draws `n_subjects` subjects with replacement; returns the draw count of
/// each subject. Subjects with count zero are out of bag.
pub fn two_stage_bootstrap<R: Rng>(n_subjects: usize, rng: &mut R) -> Vec<u32> {
    let mut counts = vec![0u32; n_subjects];
    for _ in 0..n_subjects {
        counts[rng.random_range(0..n_subjects)] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate variables per node; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    /// Minimum bagged weight of each child of a split.
    pub min_node: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 500, mtry: None, min_node: 40, max_depth: None, seed: 0, threads: 1 }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

pub fn schema_fingerprint(names: &[String]) -> u64 {
    fnv1a(names.join("\u{1f}").as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_node: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub trees: Vec<Tree>,
    /// Per-tree draw counts, aligned with `subject_ids`.
    pub bags: Vec<Vec<u32>>,
}

impl Forest {
    pub fn fit(data: &TrainingSet, config: &ForestConfig) -> Result<Self> {
        let p = data.n_features();
        if p == 0 {
            return Err(Error::NoCovariates);
        }
        if data.n_rows() == 0 {
            return Err(Error::EmptyInput);
        }
        let mtry = config.resolved_mtry(p);
        if mtry == 0 || mtry > p {
            return Err(Error::InvalidConfig(format!("mtry must lie in 1..={p}, got {mtry}")));
        }
        if config.min_node == 0 {
            return Err(Error::InvalidConfig("min_node must be at least 1".into()));
        }
        if config.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be positive".into()));
        }
        let params = tree::GrowParams { mtry, min_node: config.min_node, max_depth: config.max_depth };
        let grown: Vec<(Tree, Vec<u32>)> = with_threads(config.threads, || {
            (0..config.n_trees)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream(config.seed, &[b as u64]);
                    let counts = two_stage_bootstrap(data.n_subjects(), &mut rng);
                    let weights = data.row_weights(&counts);
                    (tree::grow(data, &weights, &params, &mut rng), counts)
                })
                .collect()
        });
        let (trees, bags) = grown.into_iter().unzip();
        Ok(Self {
            n_trees: config.n_trees,
            mtry,
            min_node: config.min_node,
            max_depth: config.max_depth,
            seed: config.seed,
            feature_names: data.names.clone(),
            subject_ids: data.subject_ids.clone(),
            trees,
            bags,
        })
    }

    pub fn schema_fingerprint(&self) -> u64 {
        schema_fingerprint(&self.feature_names)
    }

    pub fn config_fingerprint(&self) -> u64 {
        fnv1a(format!("{}|{}|{}|{:?}|{}", self.n_trees, self.mtry, self.min_node, self.max_depth, self.seed).as_bytes())
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.feature_names.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} covariates, got {width}",
                self.feature_names.len()
            )));
        }
        Ok(())
    }

    /// Mean of the tree outputs.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x.len())?;
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Prediction clamped to `[0, 1]`, for reporting only.
    pub fn predict_clamped(&self, x: &[f64]) -> Result<f64> {
        self.predict(x).map(|v| v.clamp(0.0, 1.0))
    }

    /// Predicts every row of `data`, matching covariates by name order.
    pub fn predict_set(&self, data: &TrainingSet) -> Result<Vec<f64>> {
        self.check_schema(data)?;
        let b = self.trees.len() as f64;
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|i| self.trees.iter().map(|t| t.predict_with(|v| data.columns[v][i])).sum::<f64>() / b)
            .collect())
    }

    pub fn check_schema(&self, data: &TrainingSet) -> Result<()> {
        if data.names != self.feature_names {
            return Err(Error::SchemaMismatch(format!(
                "model covariates {:?}, data covariates {:?}",
                self.feature_names, data.names
            )));
        }
        Ok(())
    }

    /// For each row of `data`, the forest subject index (or `None` when the
    /// subject never appeared in training and is out of every bag).
    pub(crate) fn subject_map(&self, data: &TrainingSet) -> Vec<Option<usize>> {
        let index: HashMap<&str, usize> = self.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let per_subject: Vec<Option<usize>> = data.subject_ids.iter().map(|s| index.get(s.as_str()).copied()).collect();
        data.row_subject.iter().map(|&s| per_subject[s as usize]).collect()
    }

    /// Out-of-bag predictions; `None` where every tree bagged the subject.
    pub fn oob_predict(&self, data: &TrainingSet) -> Result<Vec<Option<f64>>> {
        self.check_schema(data)?;
        let subjects = self.subject_map(data);
        Ok(self.oob_predict_inner(data, &subjects, None))
    }

    /// OOB predictions with column `var` replaced by `column`.
    pub(crate) fn oob_predict_inner(
        &self,
        data: &TrainingSet,
        subjects: &[Option<usize>],
        replace: Option<(usize, &[f64])>,
    ) -> Vec<Option<f64>> {
        (0..data.n_rows())
            .into_par_iter()
            .map(|i| {
                let value_of = |v: usize| match replace {
                    Some((var, col)) if var == v => col[i],
                    _ => data.columns[v][i],
                };
                let (mut sum, mut k) = (0.0, 0usize);
                for (tree, bag) in self.trees.iter().zip(&self.bags) {
                    if subjects[i].is_none_or(|s| bag[s] == 0) {
                        sum += tree.predict_with(value_of);
                        k += 1;
                    }
                }
                (k > 0).then(|| sum / k as f64)
            })
            .collect()
    }

    /// Number of trees for which each row is out of bag.
    pub fn oob_tree_counts(&self, data: &TrainingSet) -> Vec<usize> {
        let subjects = self.subject_map(data);
        subjects.iter().map(|s| self.bags.iter().filter(|bag| s.is_none_or(|s| bag[s] == 0)).count()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        format::decode(bytes)
    }
}
