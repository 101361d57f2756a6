//! Prognostic scores learned from historical control data.
//!
//! Every learner produces the same model shape: a weighted sum of basis
//! terms, each a product of hinge factors `h(+-(w_j - t))` or raw covariates.
//! The intercept is the term with no factors.

mod hinge;
mod persist;

pub use hinge::{gcv, GCV_PENALTY};
pub use persist::{read_model, write_model};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::data::{make_plain_folds, Covariates, FoldAssignment, HistoricalDataset};
use crate::error::{Error, Result};
use crate::glm::{FamilyLink, Link};
use crate::rng;

/// Positivity floor for scores entering a log or nb-canonical link.
pub const SCORE_FLOOR: f64 = 1e-6;
const MIN_TRAIN_ROWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    /// `h(x_var - knot)` for sign +1, `h(knot - x_var)` for sign -1.
    Hinge { var: usize, knot: f64, sign: i8 },
    Linear { var: usize },
}

impl Factor {
    pub fn var(&self) -> usize {
        match *self {
            Factor::Hinge { var, .. } | Factor::Linear { var } => var,
        }
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        match *self {
            Factor::Hinge { var, knot, sign } => (sign as f64 * (w[var] - knot)).max(0.0),
            Factor::Linear { var } => w[var],
        }
    }

    fn eval_column(&self, raw: &[Vec<f64>], i: usize) -> f64 {
        match *self {
            Factor::Hinge { var, knot, sign } => (sign as f64 * (raw[var][i] - knot)).max(0.0),
            Factor::Linear { var } => raw[var][i],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BasisTerm {
    pub factors: Vec<Factor>,
}

impl BasisTerm {
    pub fn intercept() -> Self {
        BasisTerm::default()
    }

    pub fn with(&self, f: Factor) -> Self {
        let mut factors = self.factors.clone();
        factors.push(f);
        BasisTerm { factors }
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn uses_var(&self, var: usize) -> bool {
        self.factors.iter().any(|f| f.var() == var)
    }

    pub fn eval(&self, w: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(w)).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    Hinge,
    GlmMainTerms,
    InterceptOnly,
}

impl Learner {
    pub fn name(self) -> &'static str {
        match self {
            Learner::Hinge => "hinge",
            Learner::GlmMainTerms => "glm-main-terms",
            Learner::InterceptOnly => "intercept-only",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hinge" | "mars" => Learner::Hinge,
            "glm-main-terms" | "glm" => Learner::GlmMainTerms,
            "intercept-only" | "mean" => Learner::InterceptOnly,
            other => return Err(Error::InvalidArgument(format!("unknown learner `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub max_degree: usize,
    /// Maximum number of terms in the pruned hinge model.
    pub num_terms: usize,
    /// Maximum number of terms grown by the forward pass; `None` uses
    /// min(200, max(20, 2p)) + 1 for p covariates.
    pub forward_terms: Option<usize>,
    pub library: Vec<Learner>,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            max_degree: 3,
            num_terms: 50,
            forward_terms: None,
            library: vec![Learner::Hinge, Learner::GlmMainTerms, Learner::InterceptOnly],
            cv_folds: 5,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    fn validate(&self) -> Result<()> {
        if self.library.is_empty() {
            return Err(Error::InvalidArgument("candidate library is empty".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "cv_folds must be >= 2, got {}",
                self.cv_folds
            )));
        }
        if self.max_degree == 0 || self.num_terms == 0 || self.forward_terms == Some(0) {
            return Err(Error::InvalidArgument(
                "max_degree and num_terms must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted prognostic score rho-hat: W -> predicted control outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PrognosticModel {
    pub learner: Learner,
    pub covariates: Vec<String>,
    pub terms: Vec<BasisTerm>,
    pub weights: Vec<f64>,
    pub n_train: usize,
    pub seed: u64,
    /// Cross-validated RMSE on the training data.
    pub cv_rmse: f64,
}

impl PrognosticModel {
    pub fn predict_row(&self, w: &[f64]) -> f64 {
        self.terms.iter().zip(&self.weights).map(|(t, b)| b * t.eval(w)).sum()
    }

    /// Raw predictions for every row. Columns are matched by name.
    pub fn predict(&self, covariates: &Covariates) -> Result<Vec<f64>> {
        if covariates.ncols() != self.covariates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.covariates.len(),
                got: covariates.ncols(),
            });
        }
        let map: Vec<usize> = self
            .covariates
            .iter()
            .map(|name| {
                covariates
                    .index_of(name)
                    .ok_or_else(|| Error::UnknownCovariate(name.clone()))
            })
            .collect::<Result<_>>()?;
        let mut w = vec![0.0; map.len()];
        Ok((0..covariates.nrows())
            .map(|i| {
                let row = covariates.row(i);
                for (dst, &src) in w.iter_mut().zip(&map) {
                    *dst = row[src];
                }
                self.predict_row(&w)
            })
            .collect())
    }
}

fn columns(cov: &Covariates) -> Vec<Vec<f64>> {
    (0..cov.ncols()).map(|j| cov.column(j)).collect()
}

fn least_squares_main_terms(raw: &[Vec<f64>], y: &[f64]) -> (Vec<BasisTerm>, Vec<f64>) {
    let n = y.len();
    let p = raw.len();
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { raw[j - 1][i] });
    let svd = x.svd(true, true);
    let beta = svd
        .solve(&DVector::from_column_slice(y), 1e-10)
        .expect("both SVD factors were requested");
    let mut terms = vec![BasisTerm::intercept()];
    terms.extend((0..p).map(|var| BasisTerm {
        factors: vec![Factor::Linear { var }],
    }));
    (terms, beta.iter().copied().collect())
}

fn fit_raw(learner: Learner, raw: &[Vec<f64>], y: &[f64], cfg: &LearnerConfig) -> Result<(Vec<BasisTerm>, Vec<f64>)> {
    if y.is_empty() {
        return Err(Error::Degenerate("no training rows".into()));
    }
    let out = match learner {
        Learner::Hinge => {
            let forward = cfg.forward_terms.unwrap_or_else(|| hinge::default_forward_terms(raw.len()));
            let f = hinge::fit(raw, y, cfg.max_degree, forward, cfg.num_terms);
            (f.terms, f.weights)
        }
        Learner::GlmMainTerms => least_squares_main_terms(raw, y),
        Learner::InterceptOnly => (
            vec![BasisTerm::intercept()],
            vec![y.iter().sum::<f64>() / y.len() as f64],
        ),
    };
    if out.1.iter().any(|b| !b.is_finite()) {
        return Err(Error::Degenerate(format!("{learner} produced non-finite weights")));
    }
    Ok(out)
}

/// Fits `learner` on all rows; `cv_rmse` is left as NaN.
pub fn fit_learner(learner: Learner, data: &HistoricalDataset, cfg: &LearnerConfig) -> Result<PrognosticModel> {
    let (terms, weights) = fit_raw(learner, &columns(data.covariates()), data.outcomes(), cfg)?;
    Ok(PrognosticModel {
        learner,
        covariates: data.covariates().names().to_vec(),
        terms,
        weights,
        n_train: data.len(),
        seed: cfg.seed,
        cv_rmse: f64::NAN,
    })
}

/// Out-of-fold predictions: row i is predicted by the model fitted without
/// its fold.
pub fn cv_predictions(
    learner: Learner,
    data: &HistoricalDataset,
    folds: &FoldAssignment,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    let mut pred = vec![f64::NAN; data.len()];
    for fold in 0..folds.k {
        let train = folds.train_indices(fold);
        let test = folds.fold_indices(fold);
        let sub = data.subset(&train);
        let (terms, weights) =
            fit_raw(learner, &columns(sub.covariates()), sub.outcomes(), cfg).map_err(|e| e.in_fold(fold))?;
        for &i in &test {
            let w = data.covariates().row(i);
            pred[i] = terms.iter().zip(&weights).map(|(t, b)| b * t.eval(w)).sum();
        }
    }
    Ok(pred)
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / y.len() as f64
}

/// Square root of the pooled out-of-fold mean squared error.
pub fn cv_rmse(learner: Learner, data: &HistoricalDataset, k: usize, seed: u64, cfg: &LearnerConfig) -> Result<f64> {
    let folds = make_plain_folds(data.len(), k, seed)?;
    let pred = cv_predictions(learner, data, &folds, cfg)?;
    Ok(mse(&pred, data.outcomes()).sqrt())
}

/// Trains the hinge learner on all rows and records its CV RMSE.
pub fn train_hinge_learner(train: &HistoricalDataset, cfg: &LearnerConfig) -> Result<PrognosticModel> {
    cfg.validate()?;
    if train.len() < MIN_TRAIN_ROWS {
        return Err(Error::InvalidArgument(format!(
            "hinge learner needs at least {MIN_TRAIN_ROWS} training rows, got {}",
            train.len()
        )));
    }
    let mut model = fit_learner(Learner::Hinge, train, cfg)?;
    model.cv_rmse = cv_rmse(Learner::Hinge, train, cfg.cv_folds, cfg.seed, cfg)?;
    Ok(model)
}

/// CV MSE of every library candidate on shared folds; failures are kept as
/// error messages.
pub fn library_cv_mse(data: &HistoricalDataset, cfg: &LearnerConfig) -> Result<Vec<(Learner, std::result::Result<f64, String>)>> {
    cfg.validate()?;
    let folds = make_plain_folds(data.len(), cfg.cv_folds, cfg.seed)?;
    Ok(cfg
        .library
        .iter()
        .map(|&learner| {
            let score = cv_predictions(learner, data, &folds, cfg)
                .map(|p| mse(&p, data.outcomes()))
                .map_err(|e| format!("{learner}: {e}"));
            (learner, score)
        })
        .collect())
}

/// Discrete selector: the candidate with the lowest CV MSE (ties go to the
/// earlier library entry), refitted on all rows.
pub fn select_model_cv(data: &HistoricalDataset, cfg: &LearnerConfig) -> Result<PrognosticModel> {
    let scores = library_cv_mse(data, cfg)?;
    let mut best: Option<(Learner, f64)> = None;
    let mut failures = Vec::new();
    for (learner, score) in scores {
        match score {
            Ok(s) if s.is_finite() => {
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((learner, s));
                }
            }
            Ok(s) => failures.push(format!("{learner}: CV MSE is {s}")),
            Err(e) => failures.push(e),
        }
    }
    let (learner, score) = best.ok_or(Error::AllCandidatesFailed(failures))?;
    let mut model = fit_learner(learner, data, cfg)?;
    model.cv_rmse = score.sqrt();
    Ok(model)
}

/// Raw predictions of `model` for the given covariate rows.
pub fn predict_scores(model: &PrognosticModel, covariates: &Covariates) -> Result<Vec<f64>> {
    model.predict(covariates)
}

/// Moves scores into the domain of `fl`'s link: a positivity floor for log
/// and nb-canonical, clipping to (0, 1) for logit.
pub fn floor_scores(scores: &[f64], fl: &FamilyLink) -> Vec<f64> {
    scores
        .iter()
        .map(|&s| match fl.link_kind() {
            Link::Identity => s,
            Link::Log | Link::NbCanonical => s.max(SCORE_FLOOR),
            Link::Logit => s.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR),
        })
        .collect()
}

/// A seeded permutation of `scores`.
pub fn shuffle_scores(scores: &[f64], seed: u64) -> Vec<f64> {
    let mut out = scores.to_vec();
    out.shuffle(&mut rng::seeded(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn dataset(rows: &[Vec<f64>], y: Vec<f64>) -> HistoricalDataset {
        let p = rows.first().map_or(0, Vec::len);
        let names = (1..=p).map(|j| format!("w{j}")).collect();
        let cov = Covariates::from_rows(names, rows).unwrap();
        HistoricalDataset::new((0..y.len()).map(|i| i.to_string()).collect(), cov, y).unwrap()
    }

    fn nonlinear(n: usize, noise: f64, seed: u64) -> HistoricalDataset {
        let mut r = rng::seeded(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let w: Vec<f64> = (0..3).map(|_| r.sample(StandardNormal)).collect();
            let e: f64 = r.sample(StandardNormal);
            y.push(2.0 * (w[0] + 1.0).max(0.0) + w[1] * w[1] + noise * e);
            rows.push(w);
        }
        dataset(&rows, y)
    }

    #[test]
    fn hinge_function_recovered_out_of_sample() {
        let mut r = rng::seeded(11);
        let make = |r: &mut rng::Rng, n: usize| {
            let mut rows = Vec::new();
            let mut y = Vec::new();
            for _ in 0..n {
                let w: Vec<f64> = (0..2).map(|_| r.sample(StandardNormal)).collect();
                let e: f64 = r.sample(StandardNormal);
                y.push(2.0 * (w[0] + 1.0).max(0.0) + 0.01 * e);
                rows.push(w);
            }
            dataset(&rows, y)
        };
        let train = make(&mut r, 1000);
        let test = make(&mut r, 500);
        let model = train_hinge_learner(&train, &LearnerConfig::default()).unwrap();
        let pred = model.predict(test.covariates()).unwrap();
        let rmse = mse(&pred, test.outcomes()).sqrt();
        // Decile knots cannot sit exactly at -1, so allow the knot offset.
        assert!(rmse < 0.05, "held-out rmse {rmse}");
    }

    #[test]
    fn constant_outcome_is_intercept_only() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let model = train_hinge_learner(&dataset(&rows, vec![5.0; 40]), &LearnerConfig::default()).unwrap();
        assert_eq!(model.terms, vec![BasisTerm::intercept()]);
        assert!(model.predict_row(&[100.0, -3.0]) == 5.0);
        assert_eq!(model.cv_rmse, 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let d = nonlinear(300, 0.5, 5);
        let cfg = LearnerConfig {
            seed: 9,
            ..LearnerConfig::default()
        };
        assert_eq!(train_hinge_learner(&d, &cfg).unwrap(), train_hinge_learner(&d, &cfg).unwrap());
    }

    #[test]
    fn empty_covariate_set_fits_the_mean() {
        let d = dataset(&vec![vec![]; 25], (0..25).map(|i| i as f64).collect());
        let model = train_hinge_learner(&d, &LearnerConfig::default()).unwrap();
        assert!((model.predict_row(&[]) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn hinge_wins_on_nonlinear_data() {
        let d = nonlinear(600, 0.5, 2);
        let cfg = LearnerConfig {
            library: vec![Learner::InterceptOnly, Learner::Hinge],
            ..LearnerConfig::default()
        };
        assert_eq!(select_model_cv(&d, &cfg).unwrap().learner, Learner::Hinge);
    }

    #[test]
    fn single_candidate_library() {
        let d = nonlinear(100, 0.5, 2);
        let cfg = LearnerConfig {
            library: vec![Learner::InterceptOnly],
            ..LearnerConfig::default()
        };
        let m = select_model_cv(&d, &cfg).unwrap();
        assert_eq!(m.learner, Learner::InterceptOnly);
        assert_eq!(m.terms.len(), 1);
    }

    #[test]
    fn pure_noise_selection_is_no_worse_than_the_mean() {
        let mut r = rng::seeded(4);
        let rows: Vec<Vec<f64>> = (0..500).map(|_| (0..3).map(|_| r.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..500).map(|_| r.sample(StandardNormal)).collect();
        let d = dataset(&rows, y);
        let cfg = LearnerConfig::default();
        let scores = library_cv_mse(&d, &cfg).unwrap();
        let intercept = scores.iter().find(|(l, _)| *l == Learner::InterceptOnly).unwrap().1.clone().unwrap();
        let winner = select_model_cv(&d, &cfg).unwrap();
        assert!(winner.cv_rmse.powi(2) <= intercept + 1e-12);
    }

    #[test]
    fn constant_predictor_cv_rmse_is_the_sd() {
        let mut r = rng::seeded(8);
        let y: Vec<f64> = (0..1000).map(|_| 3.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let mean = y.iter().sum::<f64>() / 1000.0;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0).sqrt();
        let d = dataset(&vec![vec![0.0]; 1000], y);
        let got = cv_rmse(Learner::InterceptOnly, &d, 5, 1, &LearnerConfig::default()).unwrap();
        assert!((got / sd - 1.0).abs() < 0.05, "{got} vs {sd}");
        assert_eq!(got, cv_rmse(Learner::InterceptOnly, &d, 5, 1, &LearnerConfig::default()).unwrap());
    }

    #[test]
    fn linear_candidate_interpolates_linear_data() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, ((i * 7) % 11) as f64]).collect();
        let y = rows.iter().map(|w| 1.0 + 2.0 * w[0] - 0.5 * w[1]).collect();
        let got = cv_rmse(Learner::GlmMainTerms, &dataset(&rows, y), 5, 3, &LearnerConfig::default()).unwrap();
        assert!(got <= 1e-6, "{got}");
    }

    #[test]
    fn hinge_zero_branch_predicts_intercept() {
        let model = PrognosticModel {
            learner: Learner::Hinge,
            covariates: vec!["w1".into()],
            terms: vec![
                BasisTerm::intercept(),
                BasisTerm::intercept().with(Factor::Hinge { var: 0, knot: 0.0, sign: 1 }),
            ],
            weights: vec![1.5, 2.0],
            n_train: 0,
            seed: 0,
            cv_rmse: 0.0,
        };
        assert_eq!(model.predict_row(&[-3.0]), 1.5);
        assert_eq!(model.predict_row(&[2.0]), 5.5);
    }

    #[test]
    fn in_sample_predictions_match_fitted_values() {
        let d = nonlinear(200, 0.3, 6);
        let m = fit_learner(Learner::Hinge, &d, &LearnerConfig::default()).unwrap();
        let a = m.predict(d.covariates()).unwrap();
        let b: Vec<f64> = (0..d.len()).map(|i| m.predict_row(d.covariates().row(i))).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = nonlinear(50, 0.3, 6);
        let m = fit_learner(Learner::InterceptOnly, &d, &LearnerConfig::default()).unwrap();
        let other = Covariates::from_rows(vec!["w1".into()], &[vec![0.0]]).unwrap();
        assert!(matches!(m.predict(&other), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let a = shuffle_scores(&s, 3);
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, s);
        assert_eq!(a, shuffle_scores(&s, 3));
    }

    #[test]
    fn shuffled_scores_lose_predictive_power() {
        let mut r = rng::seeded(12);
        let scores: Vec<f64> = (0..1000).map(|_| r.sample(StandardNormal)).collect();
        let y: Vec<f64> = scores.iter().map(|s| s + 0.1 * r.sample::<f64, _>(StandardNormal)).collect();
        let sh = shuffle_scores(&scores, 99);
        let corr = |a: &[f64], b: &[f64]| {
            let (ma, mb) = (a.iter().sum::<f64>() / 1000.0, b.iter().sum::<f64>() / 1000.0);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        assert!(corr(&scores, &y) > 0.9);
        assert!(corr(&sh, &y).abs() < 0.1);
    }

    #[test]
    fn floors_follow_the_link() {
        let nb = FamilyLink::new(crate::glm::Family::NegativeBinomial, Link::Log, Some(3.0)).unwrap();
        assert_eq!(floor_scores(&[-1.0, 2.0], &nb), vec![SCORE_FLOOR, 2.0]);
        assert_eq!(floor_scores(&[-1.0, 2.0], &FamilyLink::binomial()), vec![SCORE_FLOOR, 1.0 - SCORE_FLOOR]);
        assert_eq!(floor_scores(&[-1.0], &FamilyLink::normal()), vec![-1.0]);
    }
}
