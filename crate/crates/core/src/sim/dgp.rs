//! Count-outcome data-generating process with an unobserved covariate.
//!
//! U ~ N(u_d, 1), W1 ~ N(w_d, 1), W2..W5 ~ N(0, 1), Y(a) ~ Poisson(m(U, W, a)).

use std::collections::HashMap;
use std::f64::consts::{FRAC_2_PI, PI};
use std::sync::{Mutex, OnceLock};

use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::scenario::{Parenthesization, ScenarioSpec, TrialScenario};
use crate::data::{Covariates, HistoricalDataset, TrialDataset};
use crate::error::Result;
use crate::rng::{self, Rng};

pub const N_COVARIATES: usize = 5;
pub const TRIAL_PI1: f64 = 0.5;

pub fn hinge(z: f64) -> f64 {
    z.max(0.0)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn m0_with_abs_u(abs_u: f64, w: &[f64]) -> f64 {
    0.1 + 2.0 * hinge(w[0] + 1.0) + w[1] * w[1] + hinge(w[0] * w[3]) + abs_u * hinge(w[2] + 2.0)
}

fn treated(m0: f64, w: &[f64], trial: &TrialScenario, paren: Parenthesization) -> f64 {
    let het = 2.0 * trial.heterogeneity * hinge(w[3]);
    match paren {
        Parenthesization::Inside => trial.zeta.exp() * (m0 + het),
        Parenthesization::LinkScale => (trial.zeta + het).exp() * m0,
    }
}

/// m(u, w, a).
pub fn conditional_mean_m(u: f64, w: &[f64], a: u8, trial: &TrialScenario, paren: Parenthesization) -> f64 {
    let m0 = m0_with_abs_u(u.abs(), w);
    if a == 0 {
        m0
    } else {
        treated(m0, w, trial, paren)
    }
}

/// E|X| for X ~ N(mean, 1).
pub fn expected_abs_normal(mean: f64) -> f64 {
    (FRAC_2_PI).sqrt() * (-0.5 * mean * mean).exp() + mean * (1.0 - 2.0 * std_normal().cdf(-mean))
}

/// E[Y | W = w, A = 0] in the trial population (U marginalized at u1).
pub fn oracle_score(w: &[f64], trial: &TrialScenario) -> f64 {
    m0_with_abs_u(expected_abs_normal(trial.u1), w)
}

pub struct Population {
    pub u: Vec<f64>,
    pub covariates: Covariates,
    pub arms: Vec<u8>,
    pub y: Vec<f64>,
}

fn covariate_names() -> Vec<String> {
    (1..=N_COVARIATES).map(|j| format!("w{j}")).collect()
}

/// Draws n units. `trial` selects the population (d = 1) or the historical
/// controls (d = 0).
pub fn sample_units(spec: &ScenarioSpec, trial: bool, n: usize, rng: &mut Rng) -> Population {
    let (u_mean, w_mean) = if trial {
        (spec.trial.u1, spec.trial.w1)
    } else {
        (spec.historical.u0, spec.historical.w0)
    };
    let coin = Bernoulli::new(TRIAL_PI1).expect("valid probability");
    let mut u = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * N_COVARIATES);
    let mut arms = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = [0.0; N_COVARIATES];
    for _ in 0..n {
        let ui = u_mean + rng.sample::<f64, _>(StandardNormal);
        for (j, wj) in w.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *wj = if j == 0 { w_mean + z } else { z };
        }
        let a = if trial { coin.sample(rng) as u8 } else { 0 };
        let m = conditional_mean_m(ui, &w, a, &spec.trial, spec.parenthesization);
        let yi: f64 = Poisson::new(m).expect("positive mean").sample(rng);
        u.push(ui);
        values.extend_from_slice(&w);
        arms.push(a);
        y.push(yi);
    }
    Population {
        u,
        covariates: Covariates::new(covariate_names(), values).expect("shape is consistent"),
        arms,
        y,
    }
}

fn ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

pub fn sample_trial(spec: &ScenarioSpec, n: usize, rng: &mut Rng) -> Result<TrialDataset> {
    let p = sample_units(spec, true, n, rng);
    TrialDataset::new(ids(n), p.covariates, p.arms, p.y, TRIAL_PI1)
}

pub fn sample_historical(spec: &ScenarioSpec, n: usize, rng: &mut Rng) -> Result<HistoricalDataset> {
    let p = sample_units(spec, false, n, rng);
    HistoricalDataset::new(ids(n), p.covariates, p.y)
}

/// Draws used for the Monte Carlo truth.
pub const TRUTH_DRAWS: usize = 10_000_000;
const TRUTH_SEED: u64 = 0x7275_7468;

/// E[m(U, W, 1)] / E[m(U, W, 0)] over the trial population by Monte Carlo
/// with common random numbers.
pub fn rate_ratio_monte_carlo(trial: &TrialScenario, paren: Parenthesization, draws: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let (mut s1, mut s0) = (0.0, 0.0);
    let mut w = [0.0; N_COVARIATES];
    for _ in 0..draws {
        let u = trial.u1 + rng.sample::<f64, _>(StandardNormal);
        for (j, wj) in w.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *wj = if j == 0 { trial.w1 + z } else { z };
        }
        let m0 = m0_with_abs_u(u.abs(), &w);
        s0 += m0;
        s1 += treated(m0, &w, trial, paren);
    }
    s1 / s0
}

/// The true marginal rate ratio, computed once per scenario by Monte Carlo
/// over `TRUTH_DRAWS` draws and cached.
pub fn true_rate_ratio(trial: &TrialScenario, paren: Parenthesization) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<[u64; 5], f64>>> = OnceLock::new();
    let key = [
        trial.u1.to_bits(),
        trial.w1.to_bits(),
        trial.heterogeneity.to_bits(),
        trial.zeta.to_bits(),
        paren as u64,
    ];
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&v) = cache.lock().expect("cache lock").get(&key) {
        return v;
    }
    // Without heterogeneity the ratio is exactly e^zeta under either reading.
    let v = if trial.heterogeneity == 0.0 {
        trial.zeta.exp()
    } else {
        rate_ratio_monte_carlo(trial, paren, TRUTH_DRAWS, TRUTH_SEED)
    };
    cache.lock().expect("cache lock").insert(key, v);
    v
}

/// E[h(X)] for X ~ N(mean, 1).
fn expected_hinge(mean: f64) -> f64 {
    let nd = std_normal();
    mean * nd.cdf(mean) + (-0.5 * mean * mean).exp() / (2.0 * PI).sqrt()
}

/// E[m(U, W, 0)] over the trial population in closed form.
pub fn expected_control_mean(trial: &TrialScenario) -> f64 {
    0.1 + 2.0 * expected_hinge(trial.w1 + 1.0)
        + 1.0
        // W1 * W4 is symmetric about 0 because W4 is, so E h = E|W1 W4| / 2.
        + 0.5 * expected_abs_normal(trial.w1) * expected_abs_normal(0.0)
        + expected_abs_normal(trial.u1) * expected_hinge(2.0)
}

/// Closed-form rate ratio for the inside-the-link reading.
pub fn rate_ratio_closed_form(trial: &TrialScenario) -> f64 {
    let m0 = expected_control_mean(trial);
    trial.zeta.exp() * (m0 + 2.0 * trial.heterogeneity * expected_hinge(0.0)) / m0
}
