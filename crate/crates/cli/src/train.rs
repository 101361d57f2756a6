use anyhow::Context;
use glmprog::data::{load_historical_csv, split_historical};
use glmprog::prognostic::{select_model_cv, write_model, Learner, LearnerConfig};
use serde_json::json;

use crate::args::TrainArgs;
use crate::{config, manifest, parse_flag, print_stdout, require_file, required, usage, CliResult};

pub fn run(flags: TrainArgs) -> CliResult<()> {
    let (a, seed) = config::resolve(&flags, flags.config.as_deref(), flags.seed, "train")?;
    let hist_path = required(a.historical.clone(), "historical")?;
    let out = required(a.out.clone(), "out")?;
    let defaults = LearnerConfig::default();
    let library_raw: Vec<String> = a
        .library
        .clone()
        .unwrap_or_else(|| defaults.library.iter().map(|l| l.name().to_string()).collect());
    let library = library_raw
        .iter()
        .map(|s| parse_flag::<Learner>("library", s.trim()))
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = LearnerConfig {
        max_degree: a.max_degree.unwrap_or(defaults.max_degree),
        num_terms: a.num_terms.unwrap_or(defaults.num_terms),
        forward_terms: a.forward_terms,
        library,
        cv_folds: a.cv_folds.unwrap_or(defaults.cv_folds),
        seed,
    };
    if a.test_out.is_some() && a.train_frac.is_none() {
        return Err(usage("--test-out needs --train-frac"));
    }
    require_file(&hist_path, "historical")?;

    let historical = load_historical_csv(&hist_path)?;
    let (train, test) = match a.train_frac {
        Some(frac) => {
            let (train, test) = split_historical(&historical, frac, seed)?;
            (train, Some(test))
        }
        None => (historical, None),
    };
    let model = select_model_cv(&train, &cfg)?;
    write_model(&model, &out)?;
    let mut artifacts = vec![out.clone()];
    let mut test_rmse = None;
    if let Some(test) = &test {
        let pred = model.predict(test.covariates())?;
        let mse = pred
            .iter()
            .zip(test.outcomes())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / test.len() as f64;
        test_rmse = Some(mse.sqrt());
        if let Some(path) = &a.test_out {
            test.write_csv(path).with_context(|| "writing held-out rows")?;
            artifacts.push(path.clone());
        }
    }

    print_stdout(&format!(
        "learner,terms,n_train,cv_rmse,test_rmse\n{},{},{},{},{}\n",
        model.learner,
        model.terms.len(),
        model.n_train,
        model.cv_rmse,
        test_rmse.map(|r| r.to_string()).unwrap_or_default()
    ))?;
    let resolved = config::resolved(
        "train",
        seed,
        json!({
            "historical": hist_path,
            "out": out,
            "library": library_raw,
            "max-degree": cfg.max_degree,
            "num-terms": cfg.num_terms,
            "forward-terms": cfg.forward_terms,
            "cv-folds": cfg.cv_folds,
            "train-frac": a.train_frac,
            "test-out": a.test_out,
        }),
    );
    manifest::write(&manifest::sidecar(&out), &resolved, &artifacts)?;
    Ok(())
}
