use glmprog::data::load_historical_csv;
use glmprog::effect::EffectMeasure;
use glmprog::glm::{DesignSpec, Family, FamilyLink, Link};
use glmprog::power::{estimate_population_params, required_sample_size, variance_bound, KappaSource, PlanningInputs, PowerSpec};
use glmprog::prognostic::read_model;
use serde_json::json;

use crate::args::PowerArgs;
use crate::{config, emit_csv, fmt_opt, parse_flag, require_file, required, usage, CliResult};

pub fn run(flags: PowerArgs) -> CliResult<()> {
    let (a, seed) = config::resolve(&flags, flags.config.as_deref(), flags.seed, "power")?;
    let hist_path = required(a.historical.clone(), "historical")?;
    let target = required(a.target, "target")?;
    let chosen = [a.prognostic_model.is_some(), a.design.is_some(), a.unadjusted]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen != 1 {
        return Err(usage(
            "exactly one of --prognostic-model, --design and --unadjusted is required",
        ));
    }
    let effect_raw = a.effect.clone().unwrap_or_else(|| "difference".into());
    let effect: EffectMeasure = parse_flag("effect", &effect_raw)?;
    let cv_folds = a.cv_folds.unwrap_or(5);
    let mut spec = PowerSpec::new(effect, target);
    spec.alpha = a.alpha.unwrap_or(spec.alpha);
    spec.target_power = a.power.unwrap_or(spec.target_power);
    spec.null_value = a.null.unwrap_or(spec.null_value);
    spec.one_sided = a.one_sided;
    let inputs = PlanningInputs {
        pi1: a.pi1.unwrap_or(0.5),
        inflation_kappa1: a.inflate_kappa1.unwrap_or(1.0),
        inflation_sigma1: a.inflate_sigma1.unwrap_or(1.0),
        binary: a.binary,
    };
    if !(inputs.pi1 > 0.0 && inputs.pi1 < 1.0) {
        return Err(usage(format!("--pi1 must lie in (0, 1), got {}", inputs.pi1)));
    }
    let mut working = json!(null);
    let glm = match &a.design {
        Some(raw) => {
            let family_raw = required(a.family.clone(), "family")?;
            let family: Family = parse_flag("family", &family_raw)?;
            let link: Link = match &a.link {
                Some(l) => parse_flag("link", l)?,
                None => family.canonical_link(),
            };
            let fl = FamilyLink::new(family, link, a.nb_dispersion).map_err(|e| usage(e.to_string()))?;
            let design = DesignSpec::parse(raw).map_err(|e| usage(format!("--design: {e}")))?;
            if design.uses_prognostic() {
                return Err(usage("--design for power planning cannot use the prognostic score"));
            }
            working = json!({"family": family.name(), "link": link.name(), "nb-dispersion": a.nb_dispersion});
            Some((fl, design))
        }
        None => None,
    };
    require_file(&hist_path, "historical")?;
    if let Some(m) = &a.prognostic_model {
        require_file(m, "prognostic-model")?;
    }

    let historical = load_historical_csv(&hist_path)?;
    let source = if let Some(path) = &a.prognostic_model {
        let model = read_model(path)?;
        KappaSource::Predictions(model.predict(historical.covariates())?)
    } else if let Some((family_link, design)) = glm {
        KappaSource::Glm {
            family_link,
            design,
            k: cv_folds,
            seed,
        }
    } else {
        KappaSource::Unadjusted
    };
    let params = estimate_population_params(&historical, &source, &spec, &inputs)?;
    let v = variance_bound(&params, &spec.effect)?;
    let n = required_sample_size(&params, &spec)?;

    let text = format!(
        "kappa0,sigma0,psi0,psi1,v_up_sq,n_required\n{},{},{},{},{},{}\n",
        params.kappa0_sq.sqrt(),
        params.sigma0_sq.sqrt(),
        params.psi0,
        params.psi1,
        v,
        n
    );
    let resolved = config::resolved(
        "power",
        seed,
        json!({
            "historical": hist_path,
            "prognostic-model": a.prognostic_model,
            "design": a.design,
            "unadjusted": a.unadjusted,
            "working-model": working,
            "effect": effect_raw,
            "target": target,
            "null": spec.null_value,
            "alpha": spec.alpha,
            "power": spec.target_power,
            "pi1": inputs.pi1,
            "inflate-kappa1": inputs.inflation_kappa1,
            "inflate-sigma1": inputs.inflation_sigma1,
            "binary": inputs.binary,
            "one-sided": spec.one_sided,
            "cv-folds": cv_folds,
            "out": fmt_opt(a.out.as_ref().map(|p| p.display())),
        }),
    );
    emit_csv(&text, a.out.as_deref(), &resolved)
}
