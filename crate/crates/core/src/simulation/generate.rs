//! Subject-level generative law: covariates, hazard, copula-correlated
//! exponential gap times and exponential dropout.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::error::{Error, Result};

pub const HAZARD_MIN: f64 = 8.0 / 15.0;
pub const HAZARD_MAX: f64 = 15.0;
const MAX_ATTEMPTS: usize = 1_000_000;

/// `Z1..Z7` in a fixed-size array (index 0 holds `Z1`).
pub type Covariates = [f64; 7];

fn categorical<R: Rng>(rng: &mut R, support: &[f64], probs: &[f64]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in support.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *v;
        }
    }
    *support.last().expect("non-empty support")
}

/// Normal parameters are read as (mean, standard deviation).
pub fn draw_covariates<R: Rng>(rng: &mut R) -> Covariates {
    let z1 = Normal::new(0.0, 5.0).expect("valid normal").sample(rng);
    let z2 = Normal::new(2.0, 0.8).expect("valid normal").sample(rng);
    let z3 = Poisson::new(4.0).expect("valid poisson").sample(rng) - 2.0;
    let z4 = Beta::new(7.0, 1.0).expect("valid beta").sample(rng) + 0.1;
    let z5 = categorical(rng, &[0.0, 1.0, 2.0], &[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]);
    let z6 = categorical(rng, &[-5.0, -2.0, 2.0, 3.0], &[0.1, 1.0 / 3.0, 11.0 / 30.0, 0.2]);
    let z7 = f64::from(rng.random_range(0..4u8));
    [z1, z2, z3, z4, z5, z6, z7]
}

/// Event rate per year implied by the covariates.
pub fn hazard(z: &Covariates) -> f64 {
    let [z1, z2, z3, z4, _, z6, _] = *z;
    let z3_term = if z2 > 2.0 { -z3 } else { z3 };
    (z2 * (z1 / z6).sin() + z3_term + z1 * z6 + z2 * z2 * z4).exp()
}

pub fn hazard_accepted(lambda: f64) -> bool {
    (HAZARD_MIN..=HAZARD_MAX).contains(&lambda)
}

/// Draws covariates until the hazard falls in the accepted range.
/// Returns the covariates, hazard and number of rejected draws.
pub fn draw_accepted<R: Rng>(rng: &mut R) -> Result<(Covariates, f64, usize)> {
    for rejected in 0..MAX_ATTEMPTS {
        let z = draw_covariates(rng);
        let lambda = hazard(&z);
        if hazard_accepted(lambda) {
            return Ok((z, lambda, rejected));
        }
    }
    Err(Error::Simulation(format!("no accepted hazard in {MAX_ATTEMPTS} draws")))
}

/// Exponential(`lambda`) quantile of `Phi(z)`, evaluated on the tail that
/// keeps precision.
fn exp_from_normal(z: f64, lambda: f64) -> f64 {
    let normal = NormalCdf::standard();
    let g = if z < 0.0 { -(-normal.cdf(z)).ln_1p() } else { -normal.cdf(-z).ln() };
    (g / lambda).max(f64::MIN_POSITIVE)
}

/// Shared-factor Gaussian copula with exchangeable correlation `rho`.
#[derive(Debug, Clone, Copy)]
pub struct GapSampler {
    lambda: f64,
    shared: f64,
    rho: f64,
}

impl GapSampler {
    pub fn new<R: Rng>(lambda: f64, rho: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidConfig(format!("rho must lie in [0, 1), got {rho}")));
        }
        Ok(Self { lambda, shared: rng.sample(StandardNormal), rho })
    }

    /// The latent normal for the next gap.
    pub fn latent<R: Rng>(&self, rng: &mut R) -> f64 {
        let e: f64 = rng.sample(StandardNormal);
        self.rho.sqrt() * self.shared + (1.0 - self.rho).sqrt() * e
    }

    pub fn next_gap<R: Rng>(&self, rng: &mut R) -> f64 {
        exp_from_normal(self.latent(rng), self.lambda)
    }
}

/// `k` correlated Exponential(`lambda`) gap times.
pub fn draw_gap_times<R: Rng>(lambda: f64, rho: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let sampler = GapSampler::new(lambda, rho, rng)?;
    Ok((0..k).map(|_| sampler.next_gap(rng)).collect())
}

/// Bisection on the exponential dropout rate so that a Monte Carlo
/// estimate of `P(censored before end)` lands within 0.01 of `target`.
///
/// `censored(rate, rng)` simulates one subject under dropout rate `rate`.
pub fn calibrate_censoring<R, F>(target: f64, mut censored: F, subjects: usize, rng: &mut R) -> Result<f64>
where
    R: Rng,
    F: FnMut(f64, &mut R) -> bool,
{
    if !(0.0..1.0).contains(&target) {
        return Err(Error::InvalidConfig(format!("censoring target must lie in [0, 1), got {target}")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let mut estimate =
        |rate: f64, rng: &mut R| (0..subjects).filter(|_| censored(rate, rng)).count() as f64 / subjects as f64;
    let (mut lo, mut hi) = (0.0, 1.0);
    while estimate(hi, rng) < target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::Simulation("censoring calibration diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = estimate(mid, rng);
        if (f - target).abs() <= 0.01 * 0.5 {
            return Ok(mid);
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One simulated subject on the study time axis. Event times start at the
/// burn-in origin, which may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSubject {
    pub id: String,
    pub z: Covariates,
    pub lambda: f64,
    pub event_times: Vec<f64>,
    pub dropout: f64,
    pub censoring: f64,
    /// Covariate draws rejected before this subject was accepted.
    pub rejected: usize,
}

/// Generates one subject: events from `origin` onward until `horizon`,
/// dropout `Exponential(dropout_rate)` from time 0, censoring at
/// `min(dropout, end)`.
pub fn simulate_subject<R: Rng>(
    id: String,
    rho: f64,
    origin: f64,
    horizon: f64,
    end: f64,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<SimulatedSubject> {
    let (z, lambda, rejected) = draw_accepted(rng)?;
    let sampler = GapSampler::new(lambda, rho, rng)?;
    let mut events = Vec::new();
    let mut clock = origin;
    'batches: loop {
        for _ in 0..8 {
            clock += sampler.next_gap(rng);
            if clock > horizon {
                break 'batches;
            }
            events.push(clock);
        }
    }
    let dropout =
        if dropout_rate > 0.0 { Exp::new(dropout_rate).expect("positive rate").sample(rng) } else { f64::INFINITY };
    let censoring = dropout.min(end);
    events.retain(|&e| e <= censoring);
    Ok(SimulatedSubject { id, z, lambda, event_times: events, dropout, censoring, rejected })
}
