use glmprog::data::{make_plain_folds, Covariates, HistoricalDataset};
use glmprog::prognostic::{cv_predictions, library_cv_mse, shuffle_scores, Learner, LearnerConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn historical(n: usize, seed: u64) -> HistoricalDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let y = rows
        .iter()
        .map(|w| (w[0] - 0.5).max(0.0) * 2.0 + 0.3 * w[1] + rng.random_range(-0.5..0.5))
        .collect();
    let cov = Covariates::from_rows(vec!["w1".into(), "w2".into()], &rows).unwrap();
    HistoricalDataset::new((0..n).map(|i| i.to_string()).collect(), cov, y).unwrap()
}

fn small_cfg(library: Vec<Learner>, seed: u64) -> LearnerConfig {
    LearnerConfig {
        max_degree: 2,
        num_terms: 10,
        library,
        seed,
        ..LearnerConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shuffling_preserves_the_multiset(scores in prop::collection::vec(-1e6f64..1e6, 0..200), seed in any::<u64>()) {
        let mut a = scores.clone();
        let mut b = shuffle_scores(&scores, seed);
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }

    /// Perturbing a row's own outcome never moves its out-of-fold prediction:
    /// the model that predicts row i was fitted without it.
    #[test]
    fn out_of_fold_predictions_ignore_the_evaluated_row(n in 60usize..150, seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let data = historical(n, seed);
        let cfg = small_cfg(vec![Learner::Hinge], seed);
        let folds = make_plain_folds(n, 5, seed).unwrap();
        let base = cv_predictions(Learner::Hinge, &data, &folds, &cfg).unwrap();
        let i = pick.index(n);
        prop_assert!(!folds.train_indices(folds.fold_of[i]).contains(&i));
        let mut y = data.outcomes().to_vec();
        y[i] += 1e3;
        let perturbed = HistoricalDataset::new(data.ids().to_vec(), data.covariates().clone(), y).unwrap();
        let moved = cv_predictions(Learner::Hinge, &perturbed, &folds, &cfg).unwrap();
        prop_assert_eq!(base[i], moved[i]);
    }

    #[test]
    fn adding_the_hinge_learner_never_raises_the_winning_cv_mse(n in 60usize..150, seed in any::<u64>()) {
        let data = historical(n, seed);
        let best = |lib: Vec<Learner>| {
            library_cv_mse(&data, &small_cfg(lib, seed))
                .unwrap()
                .into_iter()
                .filter_map(|(_, s)| s.ok())
                .fold(f64::INFINITY, f64::min)
        };
        let without = best(vec![Learner::GlmMainTerms, Learner::InterceptOnly]);
        let with = best(vec![Learner::Hinge, Learner::GlmMainTerms, Learner::InterceptOnly]);
        prop_assert!(with <= without);
    }
}
