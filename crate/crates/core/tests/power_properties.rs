use glmprog::effect::EffectMeasure;
use glmprog::power::{
    power_at_n, reduced_variance, required_sample_size, variance_bound, variance_bound_expanded, Adjustment,
    PopulationParams, PowerSpec,
};
use proptest::prelude::*;

fn measure(i: usize) -> EffectMeasure {
    [EffectMeasure::Difference, EffectMeasure::Ratio, EffectMeasure::OddsRatio][i].clone()
}

prop_compose! {
    fn params()(
        k0 in 0.05f64..3.0, k1 in 0.05f64..3.0, s0 in 0.05f64..3.0, s1 in 0.05f64..3.0,
        pi1 in 0.1f64..0.9, tau in 0.0f64..=1.0, eta in -1.0f64..=1.0,
        psi0 in 0.1f64..0.9, psi1 in 0.1f64..0.9,
    ) -> PopulationParams {
        PopulationParams {
            kappa0_sq: k0 * k0,
            kappa1_sq: k1 * k1,
            sigma0_sq: s0 * s0,
            sigma1_sq: s1 * s1,
            psi0,
            psi1,
            pi0: 1.0 - pi1,
            pi1,
            tau,
            eta_resid: eta,
            inflation_kappa1: 1.0,
            inflation_sigma1: 1.0,
            adjustment: Adjustment::Adjusted,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bound_dominates_the_reduced_form(p in params(), m in 0usize..3) {
        let effect = measure(m);
        let v = reduced_variance(&p, &effect).unwrap();
        let bound = variance_bound(&p, &effect).unwrap();
        prop_assert!(bound >= v - 1e-12 * v.max(1.0), "bound {} < reduced {}", bound, v);
    }

    #[test]
    fn expanded_and_completed_square_forms_agree(p in params(), m in 0usize..3) {
        let effect = measure(m);
        let a = variance_bound(&p, &effect).unwrap();
        let b = variance_bound_expanded(&p, &effect).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{} vs {}", a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn power_increases_in_n_and_decreases_in_variance(
        v in 0.1f64..20.0,
        target in 0.05f64..0.5,
        n in 2usize..2000,
        dn in 1usize..50,
        scale in 1.01f64..3.0,
    ) {
        let spec = PowerSpec::new(EffectMeasure::Difference, target);
        let p = power_at_n(v, &spec, n).unwrap();
        prop_assume!(p < 0.999_999);
        prop_assert!(power_at_n(v, &spec, n + dn).unwrap() > p);
        prop_assert!(power_at_n(v * scale, &spec, n).unwrap() < p);
    }

    #[test]
    fn required_n_is_the_first_n_meeting_the_target(p in params(), target_power in 0.5f64..0.95, alpha in 0.01f64..0.1) {
        let mut spec = PowerSpec::new(EffectMeasure::Difference, p.psi1 - p.psi0);
        prop_assume!((p.psi1 - p.psi0).abs() > 0.02);
        spec.target_power = target_power;
        spec.alpha = alpha;
        let n = required_sample_size(&p, &spec).unwrap();
        let v = variance_bound(&p, &spec.effect).unwrap();
        prop_assert!(power_at_n(v, &spec, n).unwrap() >= target_power);
        if n > 2 {
            prop_assert!(power_at_n(v, &spec, n - 1).unwrap() < target_power);
        }
    }

    /// Linear working model on one Gaussian covariate: Y_a = b_a W + e_a with
    /// Var W = 1, b_a = rho_a sigma_a, kappa_a^2 = (1 - rho_a^2) sigma_a^2 and
    /// Corr(e_0, e_1) = eta. The reduced form must reproduce the closed-form
    /// variance of the regression-adjusted difference.
    #[test]
    fn linear_regression_special_case(
        s0 in 0.2f64..3.0, s1 in 0.2f64..3.0,
        rho0 in -0.95f64..0.95, rho1 in -0.95f64..0.95,
        eta in -1.0f64..=1.0, pi1 in 0.1f64..0.9,
    ) {
        let (b0, b1) = (rho0 * s0, rho1 * s1);
        let (k0, k1) = (((1.0 - rho0 * rho0) * s0 * s0).sqrt(), ((1.0 - rho1 * rho1) * s1 * s1).sqrt());
        let cov01 = b0 * b1 + eta * k0 * k1;
        let pi0 = 1.0 - pi1;
        let p = PopulationParams {
            kappa0_sq: k0 * k0,
            kappa1_sq: k1 * k1,
            sigma0_sq: s0 * s0,
            sigma1_sq: s1 * s1,
            psi0: 0.0,
            psi1: 0.0,
            pi0,
            pi1,
            tau: cov01 / (s0 * s1),
            eta_resid: eta,
            inflation_kappa1: 1.0,
            inflation_sigma1: 1.0,
            adjustment: Adjustment::Adjusted,
        };
        let v = reduced_variance(&p, &EffectMeasure::Difference).unwrap();
        let c = rho0 * s0 / pi0 + rho1 * s1 / pi1;
        let expected = s0 * s0 / pi0 + s1 * s1 / pi1 - pi1 * pi0 * c * c;
        prop_assert!((v - expected).abs() <= 1e-10 * expected.max(1.0), "{} vs {}", v, expected);
    }
}
