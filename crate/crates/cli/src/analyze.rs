use glmprog::data::{load_trial_csv, TrialDataset};
use glmprog::effect::EffectMeasure;
use glmprog::estimator::{estimate_marginal_effect, EstimateOptions, Sidedness, VarianceMode};
use glmprog::glm::{DesignSpec, Family, FamilyLink, Link};
use glmprog::prognostic::{floor_scores, read_model};
use serde_json::json;

use crate::args::AnalyzeArgs;
use crate::{config, emit_csv, fmt_opt, parse_flag, require_file, required, usage, CliResult};

pub fn run(flags: AnalyzeArgs) -> CliResult<()> {
    let (a, seed) = config::resolve(&flags, flags.config.as_deref(), flags.seed, "analyze")?;
    let trial_path = required(a.trial.clone(), "trial")?;
    let family_raw = required(a.family.clone(), "family")?;
    let family: Family = parse_flag("family", &family_raw)?;
    let link: Link = match &a.link {
        Some(l) => parse_flag("link", l)?,
        None => family.canonical_link(),
    };
    let fl = FamilyLink::new(family, link, a.nb_dispersion).map_err(|e| usage(e.to_string()))?;
    let effect_raw = a.effect.clone().unwrap_or_else(|| "difference".into());
    let effect: EffectMeasure = parse_flag("effect", &effect_raw)?;
    let design_raw = a
        .design
        .clone()
        .unwrap_or_else(|| if a.prognostic_model.is_some() { "prognostic".into() } else { String::new() });
    let design = DesignSpec::parse(&design_raw).map_err(|e| usage(format!("--design: {e}")))?;
    if design.uses_prognostic() && a.prognostic_model.is_none() {
        return Err(usage("--design uses the prognostic score but no --prognostic-model was given"));
    }
    let sided_raw = a.one_sided.clone().unwrap_or_else(|| "none".into());
    let sidedness: Sidedness = parse_flag("one-sided", &sided_raw)?;
    let crossfit = a.crossfit.unwrap_or(10);
    let alpha = a.alpha.unwrap_or(0.05);
    if let Some(pi1) = a.pi1 {
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(usage(format!("--pi1 must lie in (0, 1), got {pi1}")));
        }
    }
    require_file(&trial_path, "trial")?;
    if let Some(m) = &a.prognostic_model {
        require_file(m, "prognostic-model")?;
    }

    let data = load_trial(&trial_path, a.pi1)?;
    let scores = match &a.prognostic_model {
        Some(path) if design.uses_prognostic() => {
            let model = read_model(path)?;
            Some(floor_scores(&model.predict(data.covariates())?, &fl))
        }
        _ => None,
    };
    let mode = if crossfit == 0 {
        VarianceMode::Plain
    } else {
        VarianceMode::CrossFit { k: crossfit, seed }
    };
    let opts = EstimateOptions {
        alpha,
        null_value: a.null,
        sidedness,
        centered: a.centered,
        ..EstimateOptions::default()
    };
    let est = estimate_marginal_effect(&fl, &design, &effect, &data, scores.as_deref(), mode, &opts)?;

    let text = format!(
        "psi,se,ci_lo,ci_hi,p,n,crossfit\n{},{},{},{},{},{},{}\n",
        est.psi_hat,
        est.se,
        est.ci.0,
        est.ci.1,
        est.p_value,
        est.n,
        est.folds.unwrap_or(0)
    );
    let resolved = config::resolved(
        "analyze",
        seed,
        json!({
            "trial": trial_path,
            "pi1": data.pi1(),
            "family": family.name(),
            "link": link.name(),
            "nb-dispersion": a.nb_dispersion,
            "effect": effect_raw,
            "design": design_raw,
            "prognostic-model": a.prognostic_model,
            "crossfit": crossfit,
            "alpha": alpha,
            "null": est.null_value,
            "one-sided": sided_raw,
            "centered": a.centered,
            "out": fmt_opt(a.out.as_ref().map(|p| p.display())),
        }),
    );
    emit_csv(&text, a.out.as_deref(), &resolved)
}

/// Loads the trial; without `pi1` the observed treated fraction is used.
fn load_trial(path: &std::path::Path, pi1: Option<f64>) -> CliResult<TrialDataset> {
    if let Some(pi1) = pi1 {
        return Ok(load_trial_csv(path, pi1)?);
    }
    let data = load_trial_csv(path, 0.5)?;
    let observed = data.n_treated() as f64 / data.len() as f64;
    Ok(TrialDataset::new(
        data.ids().to_vec(),
        data.covariates().clone(),
        data.arms().to_vec(),
        data.outcomes().to_vec(),
        observed,
    )?)
}
