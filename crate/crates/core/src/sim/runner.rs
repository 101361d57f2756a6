//! Replicate pipeline: historical draw, prognostic training, power step,
//! trial draw and the six estimates.

use rayon::prelude::*;

use super::dgp::{oracle_score, sample_historical, sample_trial, true_rate_ratio};
use super::scenario::{EstimatorId, ScenarioSpec};
use crate::data::TrialDataset;
use crate::effect::EffectMeasure;
use crate::error::{Error, Result};
use crate::estimator::{estimate_marginal_effect, EstimateOptions, VarianceMode};
use crate::glm::{DesignSpec, Family, FamilyLink, Link, Term};
use crate::power::{
    estimate_population_params, required_sample_size_for_variance, variance_bound, variance_without_cross_term,
    KappaSource, PlanningInputs, PowerSpec,
};
use crate::prognostic::{floor_scores, shuffle_scores, train_hinge_learner, LearnerConfig, PrognosticModel};
use crate::rng::{splitmix64, SeedStream};

// Stream tags below a replicate's stream.
const HISTORICAL: u64 = 1;
const LEARNER: u64 = 2;
const KAPPA: u64 = 3;
const TRIAL: u64 = 4;
const NOISE: u64 = 5;
const FOLDS: u64 = 6;

/// Which variance the power step plans with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanningRule {
    /// The conservative bound (tau >= 0, eta = 1).
    #[default]
    Bound,
    /// The reduced form with the cross term dropped.
    NoCrossTerm,
}

impl std::str::FromStr for PlanningRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bound" => Ok(PlanningRule::Bound),
            "no-cross-term" => Ok(PlanningRule::NoCrossTerm),
            other => Err(Error::InvalidArgument(format!(
                "unknown planning rule `{other}` (expected bound or no-cross-term)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_hist: usize,
    /// Cross-fit folds for the variance; `None` uses the in-sample variance.
    pub crossfit_folds: Option<usize>,
    pub nb_dispersion: f64,
    pub alpha: f64,
    pub target_power: f64,
    pub learner: LearnerConfig,
    /// Folds for the covariate GLM's CV RMSE in the power step.
    pub kappa_folds: usize,
    pub estimators: Vec<EstimatorId>,
    pub planning: PlanningRule,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_hist: 2500,
            crossfit_folds: Some(10),
            nb_dispersion: 3.0,
            alpha: 0.05,
            target_power: 0.8,
            learner: LearnerConfig::default(),
            kappa_folds: 5,
            estimators: EstimatorId::ALL.to_vec(),
            planning: PlanningRule::Bound,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hist < 20 {
            return Err(Error::InvalidArgument(format!("n_hist must be >= 20, got {}", self.n_hist)));
        }
        if let Some(k) = self.crossfit_folds {
            if k < 2 {
                return Err(Error::InvalidArgument(format!("cross-fit folds must be >= 2, got {k}")));
            }
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.target_power > 0.0 && self.target_power < 1.0) {
            return Err(Error::InvalidArgument("alpha and target power must lie in (0, 1)".into()));
        }
        self.family_link().map(|_| ())
    }

    pub fn family_link(&self) -> Result<FamilyLink> {
        FamilyLink::new(Family::NegativeBinomial, Link::Log, Some(self.nb_dispersion))
    }
}

/// The working-model design of each estimator.
pub fn estimator_design(id: EstimatorId) -> DesignSpec {
    let mut terms = Vec::new();
    if id.uses_score() {
        terms.push(Term::Prognostic);
    }
    if id.uses_covariates() {
        terms.push(Term::AllCovariates);
    }
    DesignSpec::with_terms(terms)
}

/// Deterministic stream for a scenario, keyed by its label and parameters.
pub fn scenario_stream(master: u64, spec: &ScenarioSpec) -> SeedStream {
    let mut h = 0u64;
    for b in spec.label().bytes() {
        h = splitmix64(h ^ b as u64);
    }
    let t = &spec.trial;
    let hs = &spec.historical;
    for v in [t.u1, t.w1, t.heterogeneity, t.zeta, hs.u0, hs.w0] {
        h = splitmix64(h ^ v.to_bits());
    }
    h = splitmix64(h ^ spec.parenthesization as u64);
    SeedStream::new(master).child(h)
}

/// The pre-trial part of a replicate.
#[derive(Debug, Clone)]
pub struct PreparedReplicate {
    pub rep: usize,
    stream: SeedStream,
    pub model: std::result::Result<PrognosticModel, String>,
    /// kappa-hat_0 per configured estimator.
    pub kappa0: Vec<std::result::Result<f64, String>>,
    /// Required n per configured estimator; `None` when unattainable.
    pub n_required: Vec<std::result::Result<Option<usize>, String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorId,
    pub psi_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub p_value: f64,
    pub significant: bool,
    pub covered_truth: bool,
    pub n_required: Option<usize>,
    /// Failure cause; the numeric fields are NaN when set.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub rep: usize,
    pub n_trial: usize,
    pub outcomes: Vec<EstimatorOutcome>,
}

impl ReplicateResult {
    pub fn outcome(&self, id: EstimatorId) -> Option<&EstimatorOutcome> {
        self.outcomes.iter().find(|o| o.estimator == id)
    }
}

fn kappa_source(
    id: EstimatorId,
    model: &std::result::Result<PrognosticModel, String>,
    oracle: &[f64],
    cfg: &SimConfig,
    fl: &FamilyLink,
    seed: u64,
) -> std::result::Result<KappaSource, String> {
    Ok(match id {
        EstimatorId::None => KappaSource::Unadjusted,
        EstimatorId::Covariates => KappaSource::Glm {
            family_link: *fl,
            design: estimator_design(EstimatorId::Covariates),
            k: cfg.kappa_folds,
            seed,
        },
        EstimatorId::OracleCovariates => KappaSource::Predictions(oracle.to_vec()),
        EstimatorId::NoiseCovariates | EstimatorId::PrognosticOnly | EstimatorId::PrognosticCovariates => {
            KappaSource::Rmse(model.as_ref().map_err(Clone::clone)?.cv_rmse)
        }
    })
}

/// Draws the historical data, trains the prognostic model and runs the power
/// step for every configured estimator.
pub fn prepare_replicate(spec: &ScenarioSpec, cfg: &SimConfig, scenario: SeedStream, rep: usize) -> Result<PreparedReplicate> {
    let fl = cfg.family_link()?;
    let stream = scenario.child(rep as u64);
    let historical = sample_historical(spec, cfg.n_hist, &mut stream.child(HISTORICAL).rng())?;
    let learner_cfg = LearnerConfig {
        seed: stream.child(LEARNER).seed(),
        ..cfg.learner.clone()
    };
    let model = train_hinge_learner(&historical, &learner_cfg).map_err(|e| format!("prognostic training: {e}"));
    let oracle: Vec<f64> = (0..historical.len())
        .map(|i| oracle_score(historical.covariates().row(i), &spec.trial))
        .collect();

    let truth = true_rate_ratio(&spec.trial, spec.parenthesization);
    let power_spec = PowerSpec {
        alpha: cfg.alpha,
        target_power: cfg.target_power,
        ..PowerSpec::new(EffectMeasure::Ratio, truth)
    };
    let kappa_seed = stream.child(KAPPA).seed();
    let mut kappa0 = Vec::with_capacity(cfg.estimators.len());
    let mut n_required = Vec::with_capacity(cfg.estimators.len());
    for &id in &cfg.estimators {
        let params = kappa_source(id, &model, &oracle, cfg, &fl, kappa_seed).and_then(|src| {
            estimate_population_params(&historical, &src, &power_spec, &PlanningInputs::default())
                .map_err(|e| e.to_string())
        });
        match params {
            Ok(p) => {
                kappa0.push(Ok(p.kappa0_sq.sqrt()));
                let v = match cfg.planning {
                    PlanningRule::Bound => variance_bound(&p, &EffectMeasure::Ratio),
                    PlanningRule::NoCrossTerm => variance_without_cross_term(&p, &EffectMeasure::Ratio),
                };
                n_required.push(match v.and_then(|v| required_sample_size_for_variance(v, &power_spec)) {
                    Ok(n) => Ok(Some(n)),
                    Err(Error::Unattainable(_)) => Ok(None),
                    Err(e) => Err(e.to_string()),
                });
            }
            Err(e) => {
                kappa0.push(Err(e.clone()));
                n_required.push(Err(e));
            }
        }
    }
    Ok(PreparedReplicate {
        rep,
        stream,
        model,
        kappa0,
        n_required,
    })
}

/// Score columns for the trial rows: (prognostic, noise, oracle).
pub struct TrialScores {
    pub prognostic: std::result::Result<Vec<f64>, String>,
    pub noise: std::result::Result<Vec<f64>, String>,
    pub oracle: Vec<f64>,
}

pub fn trial_scores(
    spec: &ScenarioSpec,
    model: &std::result::Result<PrognosticModel, String>,
    trial: &TrialDataset,
    fl: &FamilyLink,
    noise_seed: u64,
) -> TrialScores {
    let prognostic = model.clone().and_then(|m| {
        m.predict(trial.covariates())
            .map(|s| floor_scores(&s, fl))
            .map_err(|e| format!("prognostic prediction: {e}"))
    });
    let noise = prognostic.clone().map(|s| shuffle_scores(&s, noise_seed));
    let oracle = (0..trial.len())
        .map(|i| oracle_score(trial.covariates().row(i), &spec.trial))
        .collect();
    TrialScores {
        prognostic,
        noise,
        oracle,
    }
}

fn failed(id: EstimatorId, n_required: Option<usize>, error: String) -> EstimatorOutcome {
    EstimatorOutcome {
        estimator: id,
        psi_hat: f64::NAN,
        se: f64::NAN,
        ci: (f64::NAN, f64::NAN),
        p_value: f64::NAN,
        significant: false,
        covered_truth: false,
        n_required,
        error: Some(error),
    }
}

/// Draws a trial of size `n` and runs every configured estimator on it.
pub fn run_trial(spec: &ScenarioSpec, cfg: &SimConfig, prepared: &PreparedReplicate, n: usize) -> Result<ReplicateResult> {
    let fl = cfg.family_link()?;
    let n_tag = n as u64;
    let trial = sample_trial(spec, n, &mut prepared.stream.child(TRIAL).child(n_tag).rng())?;
    let scores = trial_scores(
        spec,
        &prepared.model,
        &trial,
        &fl,
        prepared.stream.child(NOISE).child(n_tag).seed(),
    );
    let truth = true_rate_ratio(&spec.trial, spec.parenthesization);
    let mode = match cfg.crossfit_folds {
        Some(k) => VarianceMode::CrossFit {
            k,
            seed: prepared.stream.child(FOLDS).child(n_tag).seed(),
        },
        None => VarianceMode::Plain,
    };
    let opts = EstimateOptions {
        alpha: cfg.alpha,
        ..EstimateOptions::default()
    };
    let outcomes = cfg
        .estimators
        .iter()
        .zip(&prepared.n_required)
        .map(|(&id, nreq)| {
            let nreq = nreq.clone().ok().flatten();
            let s = match id {
                EstimatorId::None | EstimatorId::Covariates => Ok(None),
                EstimatorId::OracleCovariates => Ok(Some(scores.oracle.as_slice())),
                EstimatorId::NoiseCovariates => scores.noise.as_deref().map(Some).map_err(Clone::clone),
                EstimatorId::PrognosticOnly | EstimatorId::PrognosticCovariates => {
                    scores.prognostic.as_deref().map(Some).map_err(Clone::clone)
                }
            };
            let s = match s {
                Ok(s) => s,
                Err(e) => return failed(id, nreq, e),
            };
            match estimate_marginal_effect(&fl, &estimator_design(id), &EffectMeasure::Ratio, &trial, s, mode, &opts) {
                Ok(est) => EstimatorOutcome {
                    estimator: id,
                    psi_hat: est.psi_hat,
                    se: est.se,
                    ci: est.ci,
                    p_value: est.p_value,
                    significant: est.p_value < cfg.alpha,
                    covered_truth: est.ci.0 <= truth && truth <= est.ci.1,
                    n_required: nreq,
                    error: None,
                },
                Err(e) => failed(id, nreq, e.to_string()),
            }
        })
        .collect();
    Ok(ReplicateResult {
        rep: prepared.rep,
        n_trial: n,
        outcomes,
    })
}

/// One full replicate at a single trial size.
pub fn run_replicate(spec: &ScenarioSpec, cfg: &SimConfig, master_seed: u64, rep: usize, n: usize) -> Result<ReplicateResult> {
    let prepared = prepare_replicate(spec, cfg, scenario_stream(master_seed, spec), rep)?;
    run_trial(spec, cfg, &prepared, n)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Runs `f` over replicate indices on `workers` threads (0 = all cores),
/// returning results in index order.
pub fn par_map<T: Send>(workers: usize, reps: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    pool(workers)?.install(|| (0..reps).into_par_iter().map(f).collect())
}

pub fn prepare_replicates(
    spec: &ScenarioSpec,
    cfg: &SimConfig,
    master_seed: u64,
    reps: usize,
    workers: usize,
) -> Result<Vec<PreparedReplicate>> {
    spec.validate()?;
    cfg.validate()?;
    let stream = scenario_stream(master_seed, spec);
    // Compute the cached truth once before fanning out.
    true_rate_ratio(&spec.trial, spec.parenthesization);
    par_map(workers, reps, |rep| prepare_replicate(spec, cfg, stream, rep))
}

pub fn run_trials(
    spec: &ScenarioSpec,
    cfg: &SimConfig,
    prepared: &[PreparedReplicate],
    n: usize,
    workers: usize,
) -> Result<Vec<ReplicateResult>> {
    par_map(workers, prepared.len(), |i| run_trial(spec, cfg, &prepared[i], n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig {
            n_hist: 400,
            crossfit_folds: Some(5),
            learner: LearnerConfig {
                num_terms: 15,
                max_degree: 2,
                ..LearnerConfig::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn designs_enumerate_the_adjustment_sets() {
        let names: Vec<String> = (1..=5).map(|j| format!("w{j}")).collect();
        let ncols: Vec<usize> = EstimatorId::ALL
            .iter()
            .map(|&e| estimator_design(e).resolve(&names).unwrap().ncols())
            .collect();
        assert_eq!(ncols, vec![2, 7, 8, 8, 3, 8]);
    }

    #[test]
    fn same_seed_same_result() {
        let spec = ScenarioSpec::named("additive").unwrap();
        let cfg = small_cfg();
        let a = run_replicate(&spec, &cfg, 11, 3, 120).unwrap();
        let b = run_replicate(&spec, &cfg, 11, 3, 120).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = run_replicate(&spec, &cfg, 11, 4, 120).unwrap();
        assert_ne!(a.outcomes[0].psi_hat, c.outcomes[0].psi_hat);
        assert!(a.outcomes.iter().all(|o| o.error.is_none()), "{a:?}");
    }

    #[test]
    fn score_columns_are_constructed_as_specified() {
        let spec = ScenarioSpec::named("additive").unwrap();
        let cfg = small_cfg();
        let fl = cfg.family_link().unwrap();
        let prepared = prepare_replicate(&spec, &cfg, scenario_stream(1, &spec), 0).unwrap();
        let trial = sample_trial(&spec, 150, &mut crate::rng::seeded(2)).unwrap();
        let s = trial_scores(&spec, &prepared.model, &trial, &fl, 9);
        let mut p = s.prognostic.unwrap();
        let mut q = s.noise.unwrap();
        assert_ne!(p, q);
        p.sort_by(f64::total_cmp);
        q.sort_by(f64::total_cmp);
        assert_eq!(p, q);
        for i in 0..trial.len() {
            assert_eq!(s.oracle[i], oracle_score(trial.covariates().row(i), &spec.trial));
        }
    }

    #[test]
    fn power_step_orders_estimators() {
        let spec = ScenarioSpec::named("additive").unwrap();
        let cfg = SimConfig {
            n_hist: 1500,
            ..small_cfg()
        };
        let p = prepare_replicate(&spec, &cfg, scenario_stream(5, &spec), 0).unwrap();
        let n = |id: EstimatorId| {
            let i = cfg.estimators.iter().position(|&e| e == id).unwrap();
            p.n_required[i].clone().unwrap().unwrap()
        };
        assert!(n(EstimatorId::OracleCovariates) < n(EstimatorId::Covariates));
        assert!(n(EstimatorId::PrognosticCovariates) < n(EstimatorId::Covariates));
        assert_eq!(n(EstimatorId::PrognosticOnly), n(EstimatorId::PrognosticCovariates));
        assert_eq!(n(EstimatorId::NoiseCovariates), n(EstimatorId::PrognosticCovariates));
    }

    #[test]
    fn null_scenario_has_no_required_n() {
        let spec = ScenarioSpec::named("null").unwrap();
        let p = prepare_replicate(&spec, &small_cfg(), scenario_stream(5, &spec), 0).unwrap();
        assert!(p.n_required.iter().all(|r| matches!(r, Ok(None))));
    }

    #[test]
    fn replicate_order_is_worker_invariant() {
        let spec = ScenarioSpec::named("heterogeneous").unwrap();
        let cfg = SimConfig {
            estimators: vec![EstimatorId::None, EstimatorId::Covariates],
            ..small_cfg()
        };
        let run = |workers| {
            let prep = prepare_replicates(&spec, &cfg, 3, 6, workers).unwrap();
            format!("{:?}", run_trials(&spec, &cfg, &prep, 100, workers).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn plain_variance_mode_runs() {
        let spec = ScenarioSpec::named("additive").unwrap();
        let cfg = SimConfig {
            crossfit_folds: None,
            ..small_cfg()
        };
        let r = run_replicate(&spec, &cfg, 2, 0, 200).unwrap();
        assert!(r.outcomes.iter().all(|o| o.error.is_none() && o.se > 0.0));
    }
}
