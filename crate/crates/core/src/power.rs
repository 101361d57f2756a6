//! Prospective power and sample size from historical control data.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{make_plain_folds, HistoricalDataset};
use crate::effect::EffectMeasure;
use crate::error::{Error, Result};
use crate::glm::{build_design, fit_glm, DesignSpec, FamilyLink, IrlsOptions};
use crate::prognostic::{select_model_cv, LearnerConfig};

/// Whether the planned analysis adjusts for anything beyond the arm.
///
/// Without adjustment the limiting working model is the arm mean, so
/// kappa_a = sigma_a and the residual correlation equals tau. The cross term
/// of the reduced form then vanishes for every tau and the bound needs no
/// worst-case assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjustment {
    Unadjusted,
    Adjusted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationParams {
    pub kappa0_sq: f64,
    pub kappa1_sq: f64,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub psi0: f64,
    pub psi1: f64,
    pub pi0: f64,
    pub pi1: f64,
    /// Correlation of the two potential outcomes (diagnostic only).
    pub tau: f64,
    /// Correlation of the two arms' working-model residuals (diagnostic only).
    pub eta_resid: f64,
    pub inflation_kappa1: f64,
    pub inflation_sigma1: f64,
    pub adjustment: Adjustment,
}

impl PopulationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) || (self.pi0 + self.pi1 - 1.0).abs() > 1e-12 {
            return bad(format!("design probabilities must be in (0, 1) and sum to 1, got {} and {}", self.pi0, self.pi1));
        }
        for (name, v) in [
            ("kappa0_sq", self.kappa0_sq),
            ("kappa1_sq", self.kappa1_sq),
            ("sigma0_sq", self.sigma0_sq),
            ("sigma1_sq", self.sigma1_sq),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        for (name, v) in [("tau", self.tau), ("eta_resid", self.eta_resid)] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [-1, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PowerSpec {
    pub effect: EffectMeasure,
    /// The minimum clinically important effect.
    pub target_effect: f64,
    pub alpha: f64,
    pub target_power: f64,
    /// Effect value under no treatment difference.
    pub null_value: f64,
    pub one_sided: bool,
}

impl PowerSpec {
    pub fn new(effect: EffectMeasure, target_effect: f64) -> Self {
        let null_value = effect.null_value();
        PowerSpec {
            effect,
            target_effect,
            alpha: 0.05,
            target_power: 0.8,
            null_value,
            one_sided: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.target_power > 0.0 && self.target_power < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target power must lie in (0, 1), got {}",
                self.target_power
            )));
        }
        Ok(())
    }

    fn critical_value(&self) -> f64 {
        let q = if self.one_sided { 1.0 - self.alpha } else { 1.0 - self.alpha / 2.0 };
        std_normal().inverse_cdf(q)
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Where kappa-hat_0 comes from.
#[derive(Debug, Clone)]
pub enum KappaSource {
    /// No adjustment: kappa-hat_0 = sigma-hat_0.
    Unadjusted,
    /// Predictions of an already fitted model on held-out historical rows;
    /// kappa-hat_0^2 is their mean squared error.
    Predictions(Vec<f64>),
    /// A known root mean squared prediction error.
    Rmse(f64),
    /// Cross-validated prognostic learner selection on the historical data.
    Learner(LearnerConfig),
    /// Cross-validated GLM with the trial design minus its arm columns.
    Glm {
        family_link: FamilyLink,
        design: DesignSpec,
        k: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanningInputs {
    pub pi1: f64,
    pub inflation_kappa1: f64,
    pub inflation_sigma1: f64,
    /// Binary outcome: sigma_1^2 = psi1 (1 - psi1).
    pub binary: bool,
}

impl Default for PlanningInputs {
    fn default() -> Self {
        PlanningInputs {
            pi1: 0.5,
            inflation_kappa1: 1.0,
            inflation_sigma1: 1.0,
            binary: false,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / y.len() as f64
}

/// Cross-validated RMSE of a GLM fitted to control-only data.
pub fn glm_cv_rmse(
    historical: &HistoricalDataset,
    fl: &FamilyLink,
    design: &DesignSpec,
    k: usize,
    seed: u64,
) -> Result<f64> {
    if design.uses_prognostic() {
        return Err(Error::InvalidArgument(
            "a GLM kappa source cannot use the prognostic term; use a prognostic model instead".into(),
        ));
    }
    let resolved = design.resolve(historical.covariates().names())?.without_treatment();
    let x = build_design(&resolved, fl, historical.covariates(), &[], None, Some(0))?;
    let y = historical.outcomes();
    let folds = make_plain_folds(historical.len(), k, seed)?;
    let mut pred = vec![0.0; y.len()];
    for fold in 0..k {
        let train = folds.train_indices(fold);
        let test = folds.fold_indices(fold);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fit = fit_glm(fl, &resolved, &x.select_rows(&train), &yt, &IrlsOptions::default())
            .map_err(|e| e.in_fold(fold))?;
        for (&i, p) in test.iter().zip(fit.predict_rows(&x, &test)) {
            pred[i] = p;
        }
    }
    Ok(mse(&pred, y).sqrt())
}

/// Planning parameters from historical controls.
pub fn estimate_population_params(
    historical: &HistoricalDataset,
    source: &KappaSource,
    spec: &PowerSpec,
    inputs: &PlanningInputs,
) -> Result<PopulationParams> {
    if historical.is_empty() {
        return Err(Error::Degenerate("historical data has no rows".into()));
    }
    let y = historical.outcomes();
    let psi0 = mean(y);
    let sigma0_sq = y.iter().map(|v| (v - psi0) * (v - psi0)).sum::<f64>() / y.len() as f64;
    let (kappa0_sq, adjustment) = match source {
        KappaSource::Unadjusted => (sigma0_sq, Adjustment::Unadjusted),
        KappaSource::Predictions(pred) => {
            if pred.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    expected: y.len(),
                    got: pred.len(),
                });
            }
            (mse(pred, y), Adjustment::Adjusted)
        }
        KappaSource::Rmse(r) => {
            if !(*r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument(format!("RMSE must be finite and nonnegative, got {r}")));
            }
            (r * r, Adjustment::Adjusted)
        }
        KappaSource::Learner(cfg) => {
            let model = select_model_cv(historical, cfg)?;
            (model.cv_rmse * model.cv_rmse, Adjustment::Adjusted)
        }
        KappaSource::Glm {
            family_link,
            design,
            k,
            seed,
        } => {
            let r = glm_cv_rmse(historical, family_link, design, *k, *seed)?;
            (r * r, Adjustment::Adjusted)
        }
    };
    let psi1 = spec.effect.solve_psi1(psi0, spec.target_effect)?;
    let sigma1_sq = if inputs.binary {
        psi1 * (1.0 - psi1)
    } else {
        sigma0_sq * inputs.inflation_sigma1
    };
    let params = PopulationParams {
        kappa0_sq,
        kappa1_sq: kappa0_sq * inputs.inflation_kappa1,
        sigma0_sq,
        sigma1_sq,
        psi0,
        psi1,
        pi0: 1.0 - inputs.pi1,
        pi1: inputs.pi1,
        tau: 0.0,
        eta_resid: 1.0,
        inflation_kappa1: inputs.inflation_kappa1,
        inflation_sigma1: inputs.inflation_sigma1,
        adjustment,
    };
    params.validate()?;
    Ok(params)
}

fn abs_gradient(p: &PopulationParams, effect: &EffectMeasure) -> Result<(f64, f64)> {
    p.validate()?;
    let (r1, r0) = effect.monotone_gradient(p.psi1, p.psi0)?;
    Ok((r1.abs(), r0.abs()))
}

/// The reduced-form asymptotic variance at the supplied tau and eta.
pub fn reduced_variance(p: &PopulationParams, effect: &EffectMeasure) -> Result<f64> {
    let (r1, r0) = abs_gradient(p, effect)?;
    let (k0, k1, s0, s1) = (p.kappa0_sq.sqrt(), p.kappa1_sq.sqrt(), p.sigma0_sq.sqrt(), p.sigma1_sq.sqrt());
    let v = r0 * r0 * (p.pi1 / p.pi0 * p.kappa0_sq + p.sigma0_sq)
        + r1 * r1 * (p.pi0 / p.pi1 * p.kappa1_sq + p.sigma1_sq)
        - 2.0 * r0 * r1 * (p.tau * s0 * s1 - p.eta_resid * k0 * k1);
    Ok(v.max(0.0))
}

/// The conservative variance used for powering (tau >= 0, eta = 1 worst
/// case; for unadjusted analyses the cross term is exactly zero).
pub fn variance_bound(p: &PopulationParams, effect: &EffectMeasure) -> Result<f64> {
    let (r1, r0) = abs_gradient(p, effect)?;
    let base = r0 * r0 * p.sigma0_sq + r1 * r1 * p.sigma1_sq;
    match p.adjustment {
        Adjustment::Adjusted => {
            let s = r0 * p.kappa0_sq.sqrt() / p.pi0 + r1 * p.kappa1_sq.sqrt() / p.pi1;
            Ok(base + p.pi0 * p.pi1 * s * s)
        }
        Adjustment::Unadjusted => variance_without_cross_term(p, effect),
    }
}

/// The reduced form with its cross term set to zero, i.e. at
/// tau sigma0 sigma1 = eta kappa0 kappa1. Exact for unadjusted analyses;
/// for adjusted ones it is not a bound.
pub fn variance_without_cross_term(p: &PopulationParams, effect: &EffectMeasure) -> Result<f64> {
    let (r1, r0) = abs_gradient(p, effect)?;
    Ok(r0 * r0 * (p.sigma0_sq + p.pi1 / p.pi0 * p.kappa0_sq) + r1 * r1 * (p.sigma1_sq + p.pi0 / p.pi1 * p.kappa1_sq))
}

/// The adjusted bound in its expanded form, before completing the square.
pub fn variance_bound_expanded(p: &PopulationParams, effect: &EffectMeasure) -> Result<f64> {
    let (r1, r0) = abs_gradient(p, effect)?;
    Ok(r0 * r0 * (p.pi1 / p.pi0 * p.kappa0_sq + p.sigma0_sq)
        + r1 * r1 * (p.pi0 / p.pi1 * p.kappa1_sq + p.sigma1_sq)
        + 2.0 * r0 * r1 * (p.kappa0_sq * p.kappa1_sq).sqrt())
}

/// Power of the Wald test at total sample size `n` when the estimate is
/// N(target, v / n) and the test uses N(null, v / n).
pub fn power_at_n(v_up_sq: f64, spec: &PowerSpec, n: usize) -> Result<f64> {
    spec.validate()?;
    if !(v_up_sq > 0.0 && v_up_sq.is_finite()) {
        return Err(Error::Degenerate(format!("variance must be positive and finite, got {v_up_sq}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("sample size must be >= 2, got {n}")));
    }
    let s = (v_up_sq / n as f64).sqrt();
    let shift = (spec.target_effect - spec.null_value).abs() / s;
    Ok(1.0 - std_normal().cdf(spec.critical_value() - shift))
}

const MAX_N: usize = 1 << 40;

/// Smallest total n whose power meets the target under the conservative
/// variance bound.
pub fn required_sample_size(p: &PopulationParams, spec: &PowerSpec) -> Result<usize> {
    spec.validate()?;
    required_sample_size_for_variance(variance_bound(p, &spec.effect)?, spec)
}

/// Smallest total n whose power meets the target at per-observation
/// variance `v`.
pub fn required_sample_size_for_variance(v: f64, spec: &PowerSpec) -> Result<usize> {
    spec.validate()?;
    if spec.target_effect == spec.null_value {
        return Err(Error::Unattainable("the target effect equals the null value".into()));
    }
    let meets = |n: usize| power_at_n(v, spec, n).map(|pw| pw >= spec.target_power);
    if meets(2)? {
        return Ok(2);
    }
    let mut lo = 2;
    let mut hi = 4;
    while !meets(hi)? {
        lo = hi;
        hi *= 2;
        if hi > MAX_N {
            return Err(Error::Unattainable(format!("power stays below {} up to n = {MAX_N}", spec.target_power)));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
