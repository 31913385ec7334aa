//! Out-of-bag permutation tests of variable importance.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::evaluation::sample_sd;
use crate::forest::{Forest, TrainingSet};
use crate::rng::stream;

/// Scale of the z statistic's denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ZScale {
    /// `mean(delta) / sd(delta)`: the spread of the permutation
    /// distribution of error differences.
    #[default]
    PermutationSd,
    /// `mean(delta) / (sd(delta) / sqrt(d))`.
    StandardError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceOptions {
    pub permutations: usize,
    pub seed: u64,
    /// Permute only among rows sharing a value of this column (e.g. `t`).
    pub stratify_by: Option<usize>,
    pub scale: ZScale,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        Self { permutations: 100, seed: 0, stratify_by: None, scale: ZScale::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableImportance {
    pub variable: String,
    /// Mean increase in OOB mean squared error under permutation.
    pub statistic: f64,
    pub sd: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub permutations: usize,
    pub variables: Vec<VariableImportance>,
}

struct OobContext {
    rows: Vec<usize>,
    subjects: Vec<Option<usize>>,
}

fn oob_context(forest: &Forest, data: &TrainingSet) -> Result<OobContext> {
    forest.check_schema(data)?;
    let subjects = forest.subject_map(data);
    let rows: Vec<usize> =
        (0..data.n_rows()).filter(|&i| forest.bags.iter().any(|bag| subjects[i].is_none_or(|s| bag[s] == 0))).collect();
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no out-of-bag rows".into()));
    }
    Ok(OobContext { rows, subjects })
}

fn test_one(
    forest: &Forest,
    data: &TrainingSet,
    ctx: &OobContext,
    var: usize,
    opts: &ImportanceOptions,
) -> VariableImportance {
    let n = ctx.rows.len();
    let (using, fixed): (Vec<usize>, Vec<usize>) =
        (0..forest.trees.len()).partition(|&b| forest.trees[b].uses_variable(var));
    let is_oob = |b: usize, i: usize| ctx.subjects[i].is_none_or(|s| forest.bags[b][s] == 0);

    // contributions of trees that never split on `var` do not change
    let fixed_sum: Vec<(f64, usize)> = ctx
        .rows
        .par_iter()
        .map(|&i| {
            fixed
                .iter()
                .filter(|&&b| is_oob(b, i))
                .fold((0.0, 0), |(s, k), &b| (s + forest.trees[b].predict_with(|v| data.columns[v][i]), k + 1))
        })
        .collect();
    let mse = |column: &[f64]| -> f64 {
        // collect before summing so the result does not depend on how
        // rayon splits the rows
        let errors: Vec<f64> = ctx
            .rows
            .par_iter()
            .enumerate()
            .map(|(pos, &i)| {
                let (mut sum, mut k) = fixed_sum[pos];
                for &b in &using {
                    if is_oob(b, i) {
                        sum +=
                            forest.trees[b].predict_with(|v| if v == var { column[pos] } else { data.columns[v][i] });
                        k += 1;
                    }
                }
                let r = data.outcome[i] - sum / k as f64;
                r * r
            })
            .collect();
        errors.iter().sum::<f64>() / n as f64
    };

    let original: Vec<f64> = ctx.rows.iter().map(|&i| data.columns[var][i]).collect();
    let base = mse(&original);
    let strata: Vec<Vec<usize>> = match opts.stratify_by {
        None => vec![(0..n).collect()],
        Some(col) => {
            let mut groups: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
            for (pos, &i) in ctx.rows.iter().enumerate() {
                groups.entry(data.columns[col][i].to_bits()).or_default().push(pos);
            }
            groups.into_values().collect()
        }
    };
    let deltas: Vec<f64> = (0..opts.permutations)
        .map(|s| {
            let mut rng = stream(opts.seed, &[var as u64, s as u64]);
            let mut permuted = original.clone();
            for group in &strata {
                let mut values: Vec<f64> = group.iter().map(|&p| original[p]).collect();
                values.shuffle(&mut rng);
                for (&p, v) in group.iter().zip(values) {
                    permuted[p] = v;
                }
            }
            mse(&permuted) - base
        })
        .collect();

    let d = deltas.len() as f64;
    let statistic = deltas.iter().sum::<f64>() / d;
    let sd = sample_sd(&deltas);
    let (z, p) = if deltas.iter().all(|&x| x == 0.0) {
        (0.0, 1.0)
    } else if sd == 0.0 {
        (statistic.signum() * f64::MAX, 0.0)
    } else {
        let denom = match opts.scale {
            ZScale::PermutationSd => sd,
            ZScale::StandardError => sd / d.sqrt(),
        };
        let z = statistic / denom;
        (z, (2.0 * Normal::standard().cdf(-z.abs())).min(1.0))
    };
    VariableImportance { variable: data.names[var].clone(), statistic, sd, z, p }
}

/// Permutation test for one covariate on the out-of-bag rows.
///
/// Each permutation shuffles the covariate among the rows that have at
/// least one out-of-bag tree, recomputes their OOB predictions and records
/// the change in mean squared error against the pseudo-observations.
pub fn permutation_importance(
    forest: &Forest,
    data: &TrainingSet,
    var: usize,
    opts: &ImportanceOptions,
) -> Result<VariableImportance> {
    if opts.permutations < 2 {
        return Err(Error::InvalidConfig("at least 2 permutations required".into()));
    }
    if var >= data.n_features() {
        return Err(Error::SchemaMismatch(format!("no covariate with index {var}")));
    }
    let ctx = oob_context(forest, data)?;
    Ok(test_one(forest, data, &ctx, var, opts))
}

/// Permutation tests for every covariate.
pub fn importance_report(forest: &Forest, data: &TrainingSet, opts: &ImportanceOptions) -> Result<ImportanceReport> {
    if opts.permutations < 2 {
        return Err(Error::InvalidConfig("at least 2 permutations required".into()));
    }
    let ctx = oob_context(forest, data)?;
    let variables = (0..data.n_features()).map(|v| test_one(forest, data, &ctx, v, opts)).collect();
    Ok(ImportanceReport { permutations: opts.permutations, variables })
}
