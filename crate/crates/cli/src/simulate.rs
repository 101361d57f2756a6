use std::path::{Path, PathBuf};

use glmprog::sim::{
    run_experiment, EstimatorId, ExperimentPlan, Parenthesization, PlanningRule, ScenarioSpec, SimConfig,
};
use serde_json::{json, Value};

use crate::args::SimulateArgs;
use crate::{config, manifest, parse_flag, print_stdout, usage, CliResult};

const DEFAULT_SCENARIO: &str = "additive/no-shift";
const DEFAULT_N_TRIAL: [usize; 3] = [100, 250, 400];
const DEFAULT_REPS: usize = 500;
const DEFAULT_OUT: &str = "sim-output";
const CHARTS: [&str; 3] = ["coverage.svg", "power.svg", "relative_efficiency.svg"];

/// A scenario argument is a label such as `additive/no-shift`, or a JSON file
/// holding one scenario object or an array of them.
fn load_scenarios(arg: &str) -> CliResult<Vec<ScenarioSpec>> {
    let path = Path::new(arg);
    if arg.ends_with(".json") || path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("--scenario: cannot read {arg}: {e}")))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("--scenario {arg}: {e}")))?;
        let parsed = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|s| vec![s])
        };
        return parsed.map_err(|e| usage(format!("--scenario {arg}: {e}")));
    }
    Ok(vec![ScenarioSpec::named(arg).map_err(|e| usage(format!("--scenario: {e}")))?])
}

pub fn run(flags: SimulateArgs) -> CliResult<()> {
    let (a, seed) = config::resolve(&flags, flags.config.as_deref(), flags.seed, "simulate")?;
    let (plan, out, resolved) = build_plan(&a, seed)?;

    let experiment = run_experiment(&plan)?;
    experiment.write(&out, &plan.config.estimators, plan.config.alpha)?;
    let config_path = out.join("config.json");
    manifest::write_json(&config_path, &resolved)?;
    let mut artifacts = vec![config_path, out.join("replicates.csv"), out.join("summary.csv")];
    artifacts.extend(CHARTS.iter().map(|c| out.join(c)));
    manifest::write(&out.join("manifest.json"), &resolved, &artifacts)?;

    let mut text = String::from("scenario,n_trial,estimator,coverage,power,rel_se_median,mean_n_required\n");
    for r in &experiment.summary {
        text.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.1}\n",
            r.scenario, r.n_trial, r.estimator, r.coverage, r.power, r.rel_se_median, r.mean_n_required
        ));
    }
    print_stdout(&text)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Fills defaults and validates; returns the plan, output directory and the
/// resolved configuration.
fn build_plan(a: &SimulateArgs, seed: u64) -> CliResult<(ExperimentPlan, PathBuf, Value)> {
    let scenario_args = a.scenario.clone().unwrap_or_else(|| vec![DEFAULT_SCENARIO.into()]);
    let mut scenarios = Vec::new();
    for s in &scenario_args {
        scenarios.extend(load_scenarios(s.trim())?);
    }
    if let Some(raw) = &a.parenthesization {
        let p: Parenthesization = parse_flag("parenthesization", raw)?;
        for s in &mut scenarios {
            s.parenthesization = p;
        }
    }
    let defaults = SimConfig::default();
    let folds = a.folds.unwrap_or(10);
    let estimators = match &a.estimators {
        Some(list) => list
            .iter()
            .map(|s| parse_flag::<EstimatorId>("estimators", s.trim()))
            .collect::<CliResult<Vec<_>>>()?,
        None => defaults.estimators.clone(),
    };
    let planning = match &a.planning {
        Some(raw) => parse_flag::<PlanningRule>("planning", raw)?,
        None => defaults.planning,
    };
    let cfg = SimConfig {
        n_hist: a.n_hist.unwrap_or(defaults.n_hist),
        crossfit_folds: if a.no_crossfit { None } else { Some(folds) },
        nb_dispersion: a.nb_dispersion.unwrap_or(defaults.nb_dispersion),
        estimators,
        planning,
        ..defaults
    };
    let plan = ExperimentPlan {
        scenarios,
        n_trials: a.n_trial.clone().unwrap_or_else(|| DEFAULT_N_TRIAL.to_vec()),
        reps: a.reps.unwrap_or(DEFAULT_REPS),
        seed,
        workers: a.workers.unwrap_or(0),
        config: cfg,
    };
    plan.validate().map_err(|e| usage(e.to_string()))?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let resolved = config::resolved(
        "simulate",
        seed,
        json!({
            "scenario": plan.scenarios,
            "n-trial": plan.n_trials,
            "n-hist": plan.config.n_hist,
            "reps": plan.reps,
            "workers": plan.workers,
            "out": out,
            "no-crossfit": a.no_crossfit,
            "folds": folds,
            "estimators": plan.config.estimators.iter().map(|e| e.name()).collect::<Vec<_>>(),
            "planning": match plan.config.planning {
                PlanningRule::Bound => "bound",
                PlanningRule::NoCrossTerm => "no-cross-term",
            },
            "nb-dispersion": plan.config.nb_dispersion,
        }),
    );
    Ok((plan, out, resolved))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_file(json: &str, flags: SimulateArgs) -> (ExperimentPlan, Value) {
        let file = config::parse::<SimulateArgs>(json, "simulate").unwrap();
        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let merged = config::merge(&flags, file.block).unwrap();
        let (plan, _, resolved) = build_plan(&merged, seed).unwrap();
        (plan, resolved)
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let (plan, resolved) = from_file(r#"{"schema_version": 1, "simulate": {}}"#, SimulateArgs::default());
        assert_eq!(plan.reps, 500);
        assert_eq!(plan.config.crossfit_folds, Some(10));
        assert_eq!(plan.n_trials, vec![100, 250, 400]);
        assert_eq!(plan.scenarios[0].label(), "additive/no-shift");
        assert_eq!(resolved["simulate"]["reps"], 500);
        assert_eq!(resolved["simulate"]["folds"], 10);
    }

    #[test]
    fn flags_override_file_values() {
        let flags = SimulateArgs {
            reps: Some(50),
            seed: Some(9),
            no_crossfit: true,
            ..SimulateArgs::default()
        };
        let (plan, resolved) = from_file(
            r#"{"schema_version": 1, "seed": 3, "simulate": {"reps": 500, "n-trial": [60], "folds": 5}}"#,
            flags,
        );
        assert_eq!(plan.reps, 50);
        assert_eq!(plan.seed, 9);
        assert_eq!(plan.n_trials, vec![60]);
        assert_eq!(plan.config.crossfit_folds, None);
        assert_eq!(resolved["seed"], 9);
    }

    #[test]
    fn scenario_files_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let spec = ScenarioSpec::named("heterogeneous/large-observed").unwrap();
        std::fs::write(&path, serde_json::to_string(&vec![spec.clone()]).unwrap()).unwrap();
        let args = SimulateArgs {
            scenario: Some(vec![path.display().to_string(), "null".into()]),
            parenthesization: Some("link-scale".into()),
            ..SimulateArgs::default()
        };
        let (plan, _, _) = build_plan(&args, 0).unwrap();
        assert_eq!(plan.scenarios.len(), 2);
        assert_eq!(plan.scenarios[0].label(), spec.label());
        assert_eq!(plan.scenarios[1].label(), "null/no-shift");
        assert!(plan.scenarios.iter().all(|s| s.parenthesization == Parenthesization::LinkScale));
        let bad = SimulateArgs {
            scenario: Some(vec!["nonsense/no-shift".into()]),
            ..SimulateArgs::default()
        };
        assert!(matches!(build_plan(&bad, 0), Err(crate::CliError::Usage(_))));
    }
}
