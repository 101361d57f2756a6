use glmprog::sim::{
    conditional_mean_m, run_experiment, ExperimentPlan, Parenthesization, ScenarioSpec, SimConfig, TrialScenario,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn link_additive_means_scale_by_exp_zeta() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let additive = TrialScenario::named("additive").unwrap();
    for trial in [additive.clone(), TrialScenario { zeta: -0.7, ..additive }] {
        for paren in [Parenthesization::Inside, Parenthesization::LinkScale] {
            for _ in 0..10_000 {
                let u: f64 = rng.random_range(-4.0..4.0);
                let w: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();
                let m0 = conditional_mean_m(u, &w, 0, &trial, paren);
                let m1 = conditional_mean_m(u, &w, 1, &trial, paren);
                assert!((m1 - trial.zeta.exp() * m0).abs() <= 1e-12 * m1.abs().max(1.0));
            }
        }
    }
}

fn read_all(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn experiment_outputs_do_not_depend_on_parallelism() {
    let base = ExperimentPlan {
        scenarios: vec![
            ScenarioSpec::named("heterogeneous/small-unobserved").unwrap(),
            ScenarioSpec::named("null").unwrap(),
        ],
        n_trials: vec![80, 120],
        reps: 4,
        seed: 2024,
        workers: 1,
        config: SimConfig {
            n_hist: 300,
            ..SimConfig::default()
        },
    };
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, workers) in [1, 1, 3].into_iter().enumerate() {
        let plan = ExperimentPlan { workers, ..base.clone() };
        let dir = root.path().join(i.to_string());
        run_experiment(&plan).unwrap().write(&dir, &plan.config.estimators, plan.config.alpha).unwrap();
        outputs.push(read_all(&dir));
    }
    assert_eq!(outputs[0].len(), 5);
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}
