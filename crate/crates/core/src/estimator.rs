//! GLM plug-in estimation of marginal effects with influence-function
//! variance, plain or cross-fit.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{make_folds, TrialDataset};
use crate::effect::EffectMeasure;
use crate::error::{Error, Result};
use crate::glm::{build_design, fit_glm, fit_trial, DesignSpec, FamilyLink, GlmFit, IrlsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    Plain,
    CrossFit { k: usize, seed: u64 },
}

/// Alternative hypothesis direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// H1: effect below the null value.
    Lower,
    /// H1: effect above the null value.
    Upper,
}

impl std::str::FromStr for Sidedness {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "two-sided" => Ok(Sidedness::TwoSided),
            "lower" => Ok(Sidedness::Lower),
            "upper" => Ok(Sidedness::Upper),
            other => Err(Error::InvalidArgument(format!(
                "unknown sidedness `{other}` (expected lower, upper or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub alpha: f64,
    /// Defaults to the effect's null value.
    pub null_value: Option<f64>,
    pub sidedness: Sidedness,
    /// Use the centered sample variance of the IF instead of its raw second
    /// moment.
    pub centered: bool,
    pub irls: IrlsOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            alpha: 0.05,
            null_value: None,
            sidedness: Sidedness::TwoSided,
            centered: false,
            irls: IrlsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub psi_hat: f64,
    pub psi1_hat: f64,
    pub psi0_hat: f64,
    /// Per-observation asymptotic variance v-hat.
    pub variance_vhat: f64,
    pub n: usize,
    pub se: f64,
    pub ci: (f64, f64),
    pub p_value: f64,
    pub null_value: f64,
    pub crossfit: bool,
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceVector {
    pub values: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi0: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Psi-hat_a: the average of mu-hat(W_i, a) over all rows.
pub fn estimate_counterfactual_mean(
    fit: &GlmFit,
    data: &TrialDataset,
    scores: Option<&[f64]>,
    a: u8,
) -> Result<f64> {
    Ok(mean(&fit.counterfactual_means(data.covariates(), scores, a)?))
}

/// Per-row influence values given counterfactual predictions for both arms.
pub fn influence_values(
    mu1: &[f64],
    mu0: &[f64],
    data: &TrialDataset,
    effect: &EffectMeasure,
    psi1: f64,
    psi0: f64,
) -> Result<InfluenceVector> {
    let n = data.len();
    for len in [mu1.len(), mu0.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let (r1, r0) = effect.gradient(psi1, psi0)?;
    let (pi1, pi0) = (data.pi1(), data.pi0());
    let y = data.outcomes();
    let arms = data.arms();
    let mut phi1 = Vec::with_capacity(n);
    let mut phi0 = Vec::with_capacity(n);
    for i in 0..n {
        let (t1, t0) = if arms[i] == 1 { (1.0 / pi1, 0.0) } else { (0.0, 1.0 / pi0) };
        phi1.push(t1 * (y[i] - mu1[i]) + mu1[i] - psi1);
        phi0.push(t0 * (y[i] - mu0[i]) + mu0[i] - psi0);
    }
    let values = phi1.iter().zip(&phi0).map(|(p1, p0)| r1 * p1 + r0 * p0).collect();
    Ok(InfluenceVector { values, phi1, phi0 })
}

/// Counterfactual predictions (mu-hat(W_i, 1), mu-hat(W_i, 0)) for every
/// row, in-sample or out-of-fold.
fn predictions(
    fl: &FamilyLink,
    spec: &DesignSpec,
    data: &TrialDataset,
    scores: Option<&[f64]>,
    mode: VarianceMode,
    irls: &IrlsOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match mode {
        VarianceMode::Plain => {
            let fit = fit_trial(fl, spec, data, scores, irls)?;
            let mu1 = fit.counterfactual_means(data.covariates(), scores, 1)?;
            let mu0 = fit.counterfactual_means(data.covariates(), scores, 0)?;
            Ok((mu1, mu0))
        }
        VarianceMode::CrossFit { k, seed } => {
            let n = data.len();
            let folds = make_folds(n, data.arms(), k, seed)?;
            let design = spec.resolve(data.covariates().names())?;
            let x = build_design(&design, fl, data.covariates(), data.arms(), scores, None)?;
            let x1 = build_design(&design, fl, data.covariates(), &[], scores, Some(1))?;
            let x0 = build_design(&design, fl, data.covariates(), &[], scores, Some(0))?;
            let mut mu1 = vec![0.0; n];
            let mut mu0 = vec![0.0; n];
            for fold in 0..k {
                let train = folds.train_indices(fold);
                let test = folds.fold_indices(fold);
                let xt = x.select_rows(&train);
                let yt: Vec<f64> = train.iter().map(|&i| data.outcomes()[i]).collect();
                let fit = fit_glm(fl, &design, &xt, &yt, irls).map_err(|e| e.in_fold(fold))?;
                for (&i, m) in test.iter().zip(fit.predict_rows(&x1, &test)) {
                    mu1[i] = m;
                }
                for (&i, m) in test.iter().zip(fit.predict_rows(&x0, &test)) {
                    mu0[i] = m;
                }
            }
            Ok((mu1, mu0))
        }
    }
}

/// The plug-in estimate r(Psi-hat_1, Psi-hat_0) with a Wald interval and test.
pub fn estimate_marginal_effect(
    fl: &FamilyLink,
    spec: &DesignSpec,
    effect: &EffectMeasure,
    data: &TrialDataset,
    scores: Option<&[f64]>,
    mode: VarianceMode,
    opts: &EstimateOptions,
) -> Result<EffectEstimate> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    data.require_both_arms()?;
    let (mu1, mu0) = predictions(fl, spec, data, scores, mode, &opts.irls)?;
    let psi1 = mean(&mu1);
    let psi0 = mean(&mu0);
    let psi = effect.evaluate(psi1, psi0)?;
    let inf = influence_values(&mu1, &mu0, data, effect, psi1, psi0)?;
    let n = data.len();
    let variance_vhat = if opts.centered {
        let m = mean(&inf.values);
        inf.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
    } else {
        inf.values.iter().map(|v| v * v).sum::<f64>() / n as f64
    };
    let null_value = opts.null_value.unwrap_or_else(|| effect.null_value());
    let se = (variance_vhat / n as f64).sqrt();
    let (ci, p_value) = wald(psi, se, null_value, opts.alpha, opts.sidedness);
    let (crossfit, folds) = match mode {
        VarianceMode::Plain => (false, None),
        VarianceMode::CrossFit { k, .. } => (true, Some(k)),
    };
    Ok(EffectEstimate {
        psi_hat: psi,
        psi1_hat: psi1,
        psi0_hat: psi0,
        variance_vhat,
        n,
        se,
        ci,
        p_value,
        null_value,
        crossfit,
        folds,
    })
}

/// Normal-approximation interval and p-value.
pub fn wald(psi: f64, se: f64, null_value: f64, alpha: f64, sided: Sidedness) -> ((f64, f64), f64) {
    let nd = std_normal();
    let z = if se > 0.0 {
        (psi - null_value) / se
    } else if psi == null_value {
        0.0
    } else {
        (psi - null_value).signum() * f64::INFINITY
    };
    match sided {
        Sidedness::TwoSided => {
            let q = nd.inverse_cdf(1.0 - alpha / 2.0);
            let p = if z == 0.0 { 1.0 } else { (2.0 * nd.cdf(-z.abs())).min(1.0) };
            ((psi - q * se, psi + q * se), p)
        }
        Sidedness::Lower => {
            let q = nd.inverse_cdf(1.0 - alpha);
            ((f64::NEG_INFINITY, psi + q * se), nd.cdf(z))
        }
        Sidedness::Upper => {
            let q = nd.inverse_cdf(1.0 - alpha);
            ((psi - q * se, f64::INFINITY), 1.0 - nd.cdf(z))
        }
    }
}

/// Generator description for the oracle pass-through check.
pub struct PassThroughInput<'a> {
    pub data: &'a TrialDataset,
    /// True control-arm conditional mean E[Y | W, A = 0] per row.
    pub true_mu0: &'a [f64],
    /// Link-scale treatment effect.
    pub zeta: f64,
    /// Whether the generator satisfies g(mu(W, 1)) = zeta + g(mu(W, 0)).
    pub link_additive: bool,
}

#[derive(Debug, Clone)]
pub struct PassThroughReport {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub target: Vec<f64>,
    /// (beta - target) / se per coefficient.
    pub z: Vec<f64>,
}

impl PassThroughReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0, |m, z| m.max(z.abs()))
    }

    pub fn within(&self, n_se: f64) -> bool {
        self.max_abs_z() <= n_se
    }
}

/// Fits (1, A, g(mu(W, 0)), W) with a canonical link and compares the
/// coefficients with (0, zeta, 1, 0, ...) using sandwich standard errors.
pub fn oracle_passthrough_check(fl: &FamilyLink, input: &PassThroughInput<'_>) -> Result<PassThroughReport> {
    if !input.link_additive {
        return Err(Error::Refused(
            "the generator's treatment effect is not additive on the link scale".into(),
        ));
    }
    if !fl.is_canonical() {
        return Err(Error::Refused(format!("{fl} is not a canonical family/link pair")));
    }
    let data = input.data;
    let mut terms = vec![crate::glm::Term::Prognostic];
    terms.push(crate::glm::Term::AllCovariates);
    let spec = DesignSpec::with_terms(terms);
    let design = spec.resolve(data.covariates().names())?;
    let x = build_design(&design, fl, data.covariates(), data.arms(), Some(input.true_mu0), None)?;
    let fit = fit_glm(fl, &design, &x, data.outcomes(), &IrlsOptions::default())?;
    let cov = fit.sandwich_covariance(&x, data.outcomes())?;
    let names = design.column_names();
    let target: Vec<f64> = design
        .columns()
        .iter()
        .map(|c| match c {
            crate::glm::Column::Treatment => input.zeta,
            crate::glm::Column::Prognostic => 1.0,
            _ => 0.0,
        })
        .collect();
    let se: Vec<f64> = (0..fit.beta.len()).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let z = fit
        .beta
        .iter()
        .zip(&target)
        .zip(&se)
        .map(|((b, t), s)| (b - t) / s)
        .collect();
    Ok(PassThroughReport {
        names,
        beta: fit.beta,
        se,
        target,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedVarianceReport {
    pub v_small: f64,
    pub v_big: f64,
}

impl NestedVarianceReport {
    /// (v_big - v_small) / v_small.
    pub fn relative_change(&self) -> f64 {
        (self.v_big - self.v_small) / self.v_small
    }
}

/// Compares the plain-mode variance of two nested least-squares working
/// models for the difference effect.
pub fn nested_variance_check(
    small: &DesignSpec,
    big: &DesignSpec,
    data: &TrialDataset,
) -> Result<NestedVarianceReport> {
    let names = data.covariates().names();
    let (rs, rb) = (small.resolve(names)?, big.resolve(names)?);
    if !rs.is_nested_in(&rb) {
        return Err(Error::Refused("the small design is not nested in the big one".into()));
    }
    if (data.pi1() - 0.5).abs() > 1e-12 {
        return Err(Error::Refused(format!(
            "the nesting result assumes 1:1 randomization, got pi1 = {}",
            data.pi1()
        )));
    }
    let fl = FamilyLink::normal();
    let opts = EstimateOptions::default();
    let est = |spec| {
        estimate_marginal_effect(&fl, spec, &EffectMeasure::Difference, data, None, VarianceMode::Plain, &opts)
    };
    Ok(NestedVarianceReport {
        v_small: est(small)?.variance_vhat,
        v_big: est(big)?.variance_vhat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariates;

    fn trial(arms: &[u8], y: &[f64], w: Option<&[f64]>) -> TrialDataset {
        let n = arms.len();
        let cov = match w {
            Some(w) => Covariates::new(vec!["w".into()], w.to_vec()).unwrap(),
            None => Covariates::empty(n),
        };
        TrialDataset::new((0..n).map(|i| i.to_string()).collect(), cov, arms.to_vec(), y.to_vec(), 0.5).unwrap()
    }

    #[test]
    fn treatment_only_identity_gives_arm_means() {
        let d = trial(&[0, 0, 0, 1, 1, 1], &[1.0, 2.0, 6.0, 5.0, 4.0, 9.0], None);
        let fit = fit_trial(&FamilyLink::normal(), &DesignSpec::treatment_only(), &d, None, &IrlsOptions::default()).unwrap();
        assert!((estimate_counterfactual_mean(&fit, &d, None, 1).unwrap() - 6.0).abs() < 1e-12);
        assert!((estimate_counterfactual_mean(&fit, &d, None, 0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unadjusted_difference_variance_is_the_two_sample_formula() {
        let y = [1.0, 2.0, 6.0, 3.5, 5.0, 4.0, 9.0, 2.5];
        let arms = [0, 0, 0, 0, 1, 1, 1, 1];
        let d = trial(&arms, &y, None);
        let est = estimate_marginal_effect(
            &FamilyLink::normal(),
            &DesignSpec::treatment_only(),
            &EffectMeasure::Difference,
            &d,
            None,
            VarianceMode::Plain,
            &EstimateOptions::default(),
        )
        .unwrap();
        let var = |a: u8| {
            let v: Vec<f64> = (0..8).filter(|&i| arms[i] == a).map(|i| y[i]).collect();
            let m = mean(&v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert!((est.psi_hat - (5.125 - 3.125)).abs() < 1e-12);
        assert!((est.variance_vhat - (var(0) / 0.5 + var(1) / 0.5)).abs() < 1e-10);
    }

    #[test]
    fn constant_outcome_ratio_has_zero_variance() {
        let d = trial(&[0, 1, 0, 1], &[3.0; 4], None);
        let est = estimate_marginal_effect(
            &FamilyLink::poisson(),
            &DesignSpec::treatment_only(),
            &EffectMeasure::Ratio,
            &d,
            None,
            VarianceMode::Plain,
            &EstimateOptions::default(),
        )
        .unwrap();
        assert!((est.psi_hat - 1.0).abs() < 1e-12);
        assert!(est.variance_vhat < 1e-20);
        assert_eq!(est.p_value, 1.0);
    }

    #[test]
    fn difference_influence_is_phi1_minus_phi0() {
        let d = trial(&[0, 1, 0, 1], &[1.0, 2.0, 3.0, 5.0], None);
        let mu1 = [3.5; 4];
        let mu0 = [2.0; 4];
        let inf = influence_values(&mu1, &mu0, &d, &EffectMeasure::Difference, 3.5, 2.0).unwrap();
        for i in 0..4 {
            assert_eq!(inf.values[i], inf.phi1[i] - inf.phi0[i]);
        }
        assert!(mean(&inf.phi1).abs() < 1e-12 && mean(&inf.phi0).abs() < 1e-12);
    }

    #[test]
    fn crossfit_is_deterministic_and_flagged() {
        let n = 60;
        let arms: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..n).map(|i| (2.0 + w[i] + arms[i] as f64 + (i % 3) as f64).round()).collect();
        let d = trial(&arms, &y, Some(&w));
        let spec = DesignSpec::parse("w:w").unwrap();
        let run = || {
            estimate_marginal_effect(
                &FamilyLink::poisson(),
                &spec,
                &EffectMeasure::Ratio,
                &d,
                None,
                VarianceMode::CrossFit { k: 5, seed: 4 },
                &EstimateOptions::default(),
            )
            .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.crossfit && a.folds == Some(5));
        assert!(a.ci.0 <= a.psi_hat && a.psi_hat <= a.ci.1);
    }

    #[test]
    fn one_sided_tests() {
        let ((lo, hi), p) = wald(0.9, 0.05, 1.0, 0.05, Sidedness::Lower);
        assert!(lo.is_infinite() && hi > 0.9);
        assert!((p - 0.0227501319).abs() < 1e-8);
        let (_, p_up) = wald(0.9, 0.05, 1.0, 0.05, Sidedness::Upper);
        assert!((p + p_up - 1.0).abs() < 1e-12);
        let ((lo, hi), p2) = wald(0.9, 0.05, 1.0, 0.05, Sidedness::TwoSided);
        assert!((p2 - 2.0 * p).abs() < 1e-12);
        assert!((hi - lo - 2.0 * 1.959963984540054 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn nested_check_refuses_non_nested() {
        let d = trial(&[0, 1, 0, 1, 0, 1], &[1.0, 2.0, 3.0, 5.0, 2.0, 2.0], Some(&[0.1, 0.5, 0.2, 0.9, 0.4, 0.3]));
        let big = DesignSpec::parse("w:w").unwrap();
        assert!(matches!(
            nested_variance_check(&big, &DesignSpec::treatment_only(), &d),
            Err(Error::Refused(_))
        ));
        let same = nested_variance_check(&big, &big, &d).unwrap();
        assert_eq!(same.v_small, same.v_big);
    }
}
