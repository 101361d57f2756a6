//! GLM working models: families, links, designs and IRLS fitting.

mod design;
mod family;
mod irls;

pub use design::{build_design, link_scores, Column, DesignSpec, ResolvedDesign, Term};
pub use family::{Family, FamilyLink, Link};
pub use irls::{check_rank, information, irls, score, IrlsOptions, IrlsOutput};

use nalgebra::{DMatrix, DVector};

use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};

/// A converged GLM fit bound to its design.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub family_link: FamilyLink,
    pub design: ResolvedDesign,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub bound_b: f64,
    pub score_norm: f64,
    pub log_likelihood: f64,
}

/// Fits `fl` to the design matrix `x` (built from `design`) and outcomes `y`.
pub fn fit_glm(
    fl: &FamilyLink,
    design: &ResolvedDesign,
    x: &DMatrix<f64>,
    y: &[f64],
    opts: &IrlsOptions,
) -> Result<GlmFit> {
    if x.ncols() != design.ncols() {
        return Err(Error::DimensionMismatch {
            expected: design.ncols(),
            got: x.ncols(),
        });
    }
    let out = irls(fl, x, y, opts)?;
    Ok(GlmFit {
        family_link: *fl,
        design: design.clone(),
        beta: out.beta,
        converged: true,
        iterations: out.iterations,
        bound_b: opts.bound_b,
        score_norm: out.score_norm,
        log_likelihood: out.log_likelihood,
    })
}

/// Builds the observed design for `data` and fits it.
pub fn fit_trial(
    fl: &FamilyLink,
    spec: &DesignSpec,
    data: &TrialDataset,
    scores: Option<&[f64]>,
    opts: &IrlsOptions,
) -> Result<GlmFit> {
    let design = spec.resolve(data.covariates().names())?;
    let x = build_design(&design, fl, data.covariates(), data.arms(), scores, None)?;
    fit_glm(fl, &design, &x, data.outcomes(), opts)
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.beta).map(|(x, b)| x * b).sum()
    }

    /// mu-hat(w, a) for one participant; `score` is on the outcome scale.
    pub fn predict_mean(&self, w: &[f64], a: u8, score: Option<f64>) -> Result<f64> {
        let g = match (self.design.uses_prognostic(), score) {
            (true, Some(s)) => Some(self.family_link.link(s)?),
            (true, None) => return Err(Error::MissingScores),
            (false, _) => None,
        };
        let row = self.design.row(w, a, g)?;
        Ok(self.family_link.inverse_link(self.linear_predictor(&row)))
    }

    /// Predicted means for every row of a design matrix.
    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.beta);
        (x * beta)
            .iter()
            .map(|&eta| self.family_link.inverse_link(eta))
            .collect()
    }

    /// Predicted means for selected rows of a design matrix.
    pub fn predict_rows(&self, x: &DMatrix<f64>, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&i| {
                let eta: f64 = (0..x.ncols()).map(|j| x[(i, j)] * self.beta[j]).sum();
                self.family_link.inverse_link(eta)
            })
            .collect()
    }

    /// mu-hat(W_i, a) for every row with the arm forced to `a`.
    pub fn counterfactual_means(
        &self,
        covariates: &Covariates,
        scores: Option<&[f64]>,
        a: u8,
    ) -> Result<Vec<f64>> {
        let x = build_design(&self.design, &self.family_link, covariates, &[], scores, Some(a))?;
        Ok(self.predict_matrix(&x))
    }

    /// Model-based covariance (X^T W X)^{-1}.
    pub fn model_covariance(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mu = self.predict_matrix(x);
        information(&self.family_link, x, &mu)
            .try_inverse()
            .ok_or(Error::SingularDesign { column: 0 })
    }

    /// Sandwich covariance B M B with B the inverse information and M the
    /// summed outer products of per-row scores.
    pub fn sandwich_covariance(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<DMatrix<f64>> {
        let bread = self.model_covariance(x)?;
        let mu = self.predict_matrix(x);
        let q = x.ncols();
        let mut meat = DMatrix::<f64>::zeros(q, q);
        for i in 0..x.nrows() {
            let fl = &self.family_link;
            let u = (y[i] - mu[i]) * fl.mu_eta(mu[i]) / fl.variance(mu[i]);
            for a in 0..q {
                for b in 0..q {
                    meat[(a, b)] += u * u * x[(i, a)] * x[(i, b)];
                }
            }
        }
        Ok(&bread * meat * &bread)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_intercept_only_is_log_mean() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let out = irls(&FamilyLink::poisson(), &x, &[1.0, 2.0, 3.0], &IrlsOptions::default()).unwrap();
        assert!((out.beta[0] - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn normal_treatment_only_is_difference_in_means() {
        let y = [1.0, 2.0, 3.0, 5.0, 4.0, 9.0];
        let arms = [0, 0, 0, 1, 1, 1];
        let data = TrialDataset::new(
            (0..6).map(|i| i.to_string()).collect(),
            Covariates::empty(6),
            arms.to_vec(),
            y.to_vec(),
            0.5,
        )
        .unwrap();
        let fit = fit_trial(&FamilyLink::normal(), &DesignSpec::treatment_only(), &data, None, &IrlsOptions::default()).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-12);
        assert!((fit.beta[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_coefficients_predict_link_inverse_of_zero() {
        let design = DesignSpec::treatment_only().resolve(&[]).unwrap();
        for (fl, expect) in [(FamilyLink::poisson(), 1.0), (FamilyLink::binomial(), 0.5)] {
            let fit = GlmFit {
                family_link: fl,
                design: design.clone(),
                beta: vec![0.0, 0.0],
                converged: true,
                iterations: 0,
                bound_b: 30.0,
                score_norm: 0.0,
                log_likelihood: 0.0,
            };
            assert_eq!(fit.predict_mean(&[], 1, None).unwrap(), expect);
        }
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let data = TrialDataset::new(
            (0..4).map(|i| i.to_string()).collect(),
            Covariates::new(vec!["w".into()], vec![0.0, 1.0, 0.0, 1.0]).unwrap(),
            vec![0, 1, 0, 1],
            vec![1.0, 2.0, 3.0, 4.0],
            0.5,
        )
        .unwrap();
        let spec = DesignSpec::parse("w:w").unwrap();
        let err = fit_trial(&FamilyLink::normal(), &spec, &data, None, &IrlsOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { column: 2 }));
    }
}
