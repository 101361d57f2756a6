//! Simulation laboratory: count-outcome DGP, named scenarios, the six
//! adjustment sets and a parallel replicate runner.
//!
//! Each replicate redraws its historical data, trains the prognostic model,
//! runs the power step for every estimator and then draws one trial per
//! requested size. All randomness comes from streams keyed by (master seed,
//! scenario, replicate, purpose, n), so outputs do not depend on the worker
//! count.

pub mod dgp;
pub mod report;
pub mod runner;
pub mod scenario;

use std::path::Path;

pub use dgp::{
    conditional_mean_m, expected_abs_normal, oracle_score, rate_ratio_closed_form, rate_ratio_monte_carlo,
    sample_historical, sample_trial, true_rate_ratio,
};
pub use report::{Cell, SummaryRow};
pub use runner::{
    estimator_design, prepare_replicates, run_replicate, run_trials, EstimatorOutcome, PlanningRule, PreparedReplicate,
    ReplicateResult, SimConfig,
};
pub use scenario::{EstimatorId, HistoricalScenario, Parenthesization, ScenarioSpec, TrialScenario};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub scenarios: Vec<ScenarioSpec>,
    pub n_trials: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub config: SimConfig,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.n_trials.is_empty() {
            return Err(Error::InvalidArgument("the experiment grid is empty".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be positive".into()));
        }
        if let Some(&n) = self.n_trials.iter().find(|&&n| n < 4) {
            return Err(Error::InvalidArgument(format!("trial size {n} is too small")));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        self.config.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub cells: Vec<Cell>,
    pub summary: Vec<SummaryRow>,
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<Experiment> {
    plan.validate()?;
    let mut cells = Vec::new();
    for spec in &plan.scenarios {
        let truth = true_rate_ratio(&spec.trial, spec.parenthesization);
        let prepared = prepare_replicates(spec, &plan.config, plan.seed, plan.reps, plan.workers)?;
        for &n in &plan.n_trials {
            cells.push(Cell {
                scenario: spec.clone(),
                truth,
                n_trial: n,
                results: run_trials(spec, &plan.config, &prepared, n, plan.workers)?,
            });
        }
    }
    let summary = cells
        .iter()
        .flat_map(|c| report::summarize_cell(c, &plan.config.estimators))
        .collect();
    Ok(Experiment { cells, summary })
}

impl Experiment {
    /// Writes replicates.csv, summary.csv and the SVG charts into `dir`.
    pub fn write(&self, dir: &Path, estimators: &[EstimatorId], alpha: f64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        report::write_replicates_csv(&dir.join("replicates.csv"), &self.cells)?;
        report::write_summary_csv(&dir.join("summary.csv"), &self.summary)?;
        report::write_charts(dir, &self.summary, estimators, 1.0 - alpha)
    }
}
