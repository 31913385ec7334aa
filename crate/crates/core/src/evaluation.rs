//! Harrell's C on censored longitudinal rows, subject-bootstrap standard
//! errors and pooling across multiple imputations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use rand::Rng;

/// A longitudinal row with its predicted event-free probability. Higher
/// scores mean a longer expected residual time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub subject_id: String,
    pub t: f64,
    pub x: f64,
    pub delta: bool,
    pub score: f64,
}

/// Which row pairs enter the concordance count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PairScope {
    /// All rows form one pair universe, across check-in times and subjects.
    #[default]
    Pooled,
    /// Only rows sharing a check-in time are paired.
    WithinCheckin,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairCounts {
    concordant: u64,
    tied: u64,
    comparable: u64,
}

/// Fenwick tree over score ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }
    /// Count of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// O(n log n) pair counting: rows are processed from the longest time down,
/// each event row is compared against all rows with strictly longer time.
fn count_pairs(times: &[f64], events: &[bool], scores: &[f64]) -> PairCounts {
    let n = times.len();
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let rank: Vec<usize> = scores.iter().map(|s| distinct.partition_point(|d| d < s)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick(vec![0; distinct.len() + 1]);
    let mut inserted = 0u64;
    let mut counts = PairCounts::default();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && times[order[j]] == times[order[i]] {
            j += 1;
        }
        for &a in &order[i..j] {
            if events[a] {
                let below = tree.prefix(rank[a]);
                let at_or_below = tree.prefix(rank[a] + 1);
                counts.concordant += inserted - at_or_below;
                counts.tied += at_or_below - below;
                counts.comparable += inserted;
            }
        }
        for &a in &order[i..j] {
            tree.add(rank[a]);
            inserted += 1;
        }
        i = j;
    }
    counts
}

/// Harrell's C over all row pairs.
///
/// A pair is comparable when the shorter residual time is an observed event
/// and the times differ. It is concordant when that row has the strictly
/// lower score; score ties count one half.
pub fn harrell_c(rows: &[ScoredRow]) -> Result<f64> {
    harrell_c_scoped(rows, PairScope::Pooled)
}

pub fn harrell_c_scoped(rows: &[ScoredRow], scope: PairScope) -> Result<f64> {
    if rows.iter().any(|r| !r.score.is_finite()) {
        return Err(Error::InvalidConfig("scores must be finite".into()));
    }
    let counts = match scope {
        PairScope::Pooled => {
            let times: Vec<f64> = rows.iter().map(|r| r.x).collect();
            let events: Vec<bool> = rows.iter().map(|r| r.delta).collect();
            let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
            count_pairs(&times, &events, &scores)
        }
        PairScope::WithinCheckin => {
            let mut groups: BTreeMap<u64, Vec<&ScoredRow>> = BTreeMap::new();
            for r in rows {
                groups.entry(r.t.to_bits()).or_default().push(r);
            }
            groups.values().fold(PairCounts::default(), |acc, g| {
                let times: Vec<f64> = g.iter().map(|r| r.x).collect();
                let events: Vec<bool> = g.iter().map(|r| r.delta).collect();
                let scores: Vec<f64> = g.iter().map(|r| r.score).collect();
                let c = count_pairs(&times, &events, &scores);
                PairCounts {
                    concordant: acc.concordant + c.concordant,
                    tied: acc.tied + c.tied,
                    comparable: acc.comparable + c.comparable,
                }
            })
        }
    };
    if counts.comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok((counts.concordant as f64 + 0.5 * counts.tied as f64) / counts.comparable as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSe {
    pub se: f64,
    pub replicates: usize,
    /// Resamples discarded because the metric was undefined on them.
    pub redraws: usize,
}

/// Standard deviation of `metric` over `b` subject-level bootstrap
/// resamples; a subject's rows always move together.
///
/// Resample `k` uses its own substream of `seed`, so the result does not
/// depend on the thread count. Resamples where the metric fails are
/// redrawn, at most `10 b` times in total.
pub fn bootstrap_se<F>(metric: F, rows: &[ScoredRow], b: usize, seed: u64) -> Result<BootstrapSe>
where
    F: Fn(&[ScoredRow]) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidConfig("bootstrap needs b >= 2".into()));
    }
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_subject.entry(r.subject_id.as_str()).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_subject.values().collect();
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cap = 10 * b;
    let run = |k: usize| -> Result<(f64, usize)> {
        for attempt in 0..=cap {
            let mut rng = stream(seed, &[k as u64, attempt as u64]);
            let mut sample = Vec::with_capacity(rows.len());
            for _ in 0..groups.len() {
                let g = groups[rng.random_range(0..groups.len())];
                sample.extend(g.iter().map(|&i| rows[i].clone()));
            }
            if let Ok(v) = metric(&sample) {
                return Ok((v, attempt));
            }
        }
        Err(Error::InvalidConfig(format!("metric undefined on {cap} consecutive resamples")))
    };
    let results: Vec<(f64, usize)> = (0..b).into_par_iter().map(run).collect::<Result<_>>()?;
    let redraws: usize = results.iter().map(|r| r.1).sum();
    if redraws > cap {
        return Err(Error::InvalidConfig(format!("{redraws} redraws exceed the cap of {cap}")));
    }
    let values: Vec<f64> = results.iter().map(|r| r.0).collect();
    Ok(BootstrapSe { se: sample_sd(&values), replicates: b, redraws })
}

/// Sample standard deviation (n - 1 denominator); 0 when all values agree.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub estimate: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    pub m: usize,
}

/// Pools `m` imputed estimates: `T = W + (1 + 1/m) B`.
pub fn rubin_combine(estimates: &[f64], variances: &[f64]) -> Result<PooledEstimate> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidConfig(format!("pooling needs m >= 2 imputations, got {m}")));
    }
    if variances.len() != m {
        return Err(Error::InvalidConfig("one variance per estimate required".into()));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidConfig("variances must be non-negative".into()));
    }
    let mf = m as f64;
    let estimate = estimates.iter().sum::<f64>() / mf;
    let within = variances.iter().sum::<f64>() / mf;
    let between = estimates.iter().map(|e| (e - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
    Ok(PooledEstimate { estimate, within, between, total: within + (1.0 + 1.0 / mf) * between, m })
}
