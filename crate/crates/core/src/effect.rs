//! Marginal effect contrasts r(psi1, psi0) and their derivatives.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A user-supplied contrast. Registration checks the gradient numerically.
pub trait CustomContrast: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, psi1: f64, psi0: f64) -> f64;
    /// Returns (dr/dpsi1, dr/dpsi0).
    fn gradient(&self, psi1: f64, psi0: f64) -> (f64, f64);
    fn null_value(&self) -> f64;
    fn in_domain(&self, psi1: f64, psi0: f64) -> bool {
        psi1.is_finite() && psi0.is_finite()
    }
}

type EvalFn = dyn Fn(f64, f64) -> f64 + Send + Sync;
type GradFn = dyn Fn(f64, f64) -> (f64, f64) + Send + Sync;

/// Closure-backed [`CustomContrast`] defined on all finite points.
pub struct FnContrast {
    pub name: String,
    pub evaluate: Box<EvalFn>,
    pub gradient: Box<GradFn>,
    pub null_value: f64,
}

impl CustomContrast for FnContrast {
    fn name(&self) -> &str {
        &self.name
    }
    fn evaluate(&self, psi1: f64, psi0: f64) -> f64 {
        (self.evaluate)(psi1, psi0)
    }
    fn gradient(&self, psi1: f64, psi0: f64) -> (f64, f64) {
        (self.gradient)(psi1, psi0)
    }
    fn null_value(&self) -> f64 {
        self.null_value
    }
}

#[derive(Clone)]
pub enum EffectMeasure {
    Difference,
    Ratio,
    OddsRatio,
    Custom(Arc<dyn CustomContrast>),
}

impl fmt::Debug for EffectMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EffectMeasure({})", self.name())
    }
}

impl FromStr for EffectMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" => Ok(EffectMeasure::Difference),
            "ratio" => Ok(EffectMeasure::Ratio),
            "odds-ratio" => Ok(EffectMeasure::OddsRatio),
            other => Err(Error::InvalidArgument(format!(
                "unknown effect `{other}` (expected difference, ratio or odds-ratio)"
            ))),
        }
    }
}

/// A grid point where the monotonicity condition fails.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityViolation {
    pub psi1: f64,
    pub psi0: f64,
    pub r1_prime: f64,
    pub r0_prime: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonotonicityReport {
    pub checked: usize,
    pub skipped_out_of_domain: usize,
    pub violations: Vec<MonotonicityViolation>,
}

impl MonotonicityReport {
    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

const FD_STEP: f64 = 1e-5;
const SOLVE_TOL: f64 = 1e-10;
const SOLVE_MAX_ITER: usize = 200;

fn odds(p: f64) -> f64 {
    p / (1.0 - p)
}

impl EffectMeasure {
    /// Registers a custom contrast after checking its null value and its
    /// gradient against central differences on a default grid.
    pub fn custom(contrast: Arc<dyn CustomContrast>) -> Result<Self> {
        let grid: Vec<f64> = (0..5).map(|i| 0.1 + 0.2 * i as f64).collect();
        let mut checked = 0;
        for &psi1 in &grid {
            for &psi0 in &grid {
                if !contrast.in_domain(psi1, psi0) {
                    continue;
                }
                checked += 1;
                let (g1, g0) = contrast.gradient(psi1, psi0);
                let (f1, f0) = central_difference(&*contrast, psi1, psi0);
                for (analytic, numeric, which) in [(g1, f1, "psi1"), (g0, f0, "psi0")] {
                    if (analytic - numeric).abs() > 1e-6 * analytic.abs().max(1.0) {
                        return Err(Error::InvalidEffect(format!(
                            "{}: gradient wrt {which} at ({psi1}, {psi0}) is {analytic}, finite differences give {numeric}",
                            contrast.name()
                        )));
                    }
                }
                if contrast.in_domain(psi1, psi1) {
                    let at_null = contrast.evaluate(psi1, psi1);
                    if (at_null - contrast.null_value()).abs() > 1e-12 * at_null.abs().max(1.0) {
                        return Err(Error::InvalidEffect(format!(
                            "{}: r({psi1}, {psi1}) = {at_null} differs from the null value {}",
                            contrast.name(),
                            contrast.null_value()
                        )));
                    }
                }
            }
        }
        if checked == 0 {
            return Err(Error::InvalidEffect(format!(
                "{}: no point of the default grid lies in the domain",
                contrast.name()
            )));
        }
        Ok(EffectMeasure::Custom(contrast))
    }

    pub fn name(&self) -> String {
        match self {
            EffectMeasure::Difference => "difference".into(),
            EffectMeasure::Ratio => "ratio".into(),
            EffectMeasure::OddsRatio => "odds-ratio".into(),
            EffectMeasure::Custom(c) => c.name().to_string(),
        }
    }

    pub fn null_value(&self) -> f64 {
        match self {
            EffectMeasure::Difference => 0.0,
            EffectMeasure::Ratio | EffectMeasure::OddsRatio => 1.0,
            EffectMeasure::Custom(c) => c.null_value(),
        }
    }

    pub fn in_domain(&self, psi1: f64, psi0: f64) -> bool {
        let finite = psi1.is_finite() && psi0.is_finite();
        match self {
            EffectMeasure::Difference => finite,
            EffectMeasure::Ratio => finite && psi0 > 0.0,
            EffectMeasure::OddsRatio => {
                finite && psi1 > 0.0 && psi1 < 1.0 && psi0 > 0.0 && psi0 < 1.0
            }
            EffectMeasure::Custom(c) => finite && c.in_domain(psi1, psi0),
        }
    }

    fn check_domain(&self, psi1: f64, psi0: f64) -> Result<()> {
        if self.in_domain(psi1, psi0) {
            Ok(())
        } else {
            Err(Error::EffectDomain {
                measure: self.name(),
                psi1,
                psi0,
            })
        }
    }

    pub fn evaluate(&self, psi1: f64, psi0: f64) -> Result<f64> {
        self.check_domain(psi1, psi0)?;
        Ok(self.evaluate_unchecked(psi1, psi0))
    }

    fn evaluate_unchecked(&self, psi1: f64, psi0: f64) -> f64 {
        match self {
            EffectMeasure::Difference => psi1 - psi0,
            EffectMeasure::Ratio => psi1 / psi0,
            EffectMeasure::OddsRatio => odds(psi1) / odds(psi0),
            EffectMeasure::Custom(c) => c.evaluate(psi1, psi0),
        }
    }

    /// Returns (r1', r0'), the partial derivatives wrt psi1 and psi0.
    pub fn gradient(&self, psi1: f64, psi0: f64) -> Result<(f64, f64)> {
        self.check_domain(psi1, psi0)?;
        Ok(match self {
            EffectMeasure::Difference => (1.0, -1.0),
            EffectMeasure::Ratio => (1.0 / psi0, -psi1 / (psi0 * psi0)),
            EffectMeasure::OddsRatio => {
                let inv_odds0 = (1.0 - psi0) / psi0;
                let d1 = inv_odds0 / ((1.0 - psi1) * (1.0 - psi1));
                let d0 = -odds(psi1) / (psi0 * psi0);
                (d1, d0)
            }
            EffectMeasure::Custom(c) => c.gradient(psi1, psi0),
        })
    }

    /// Solves r(psi1, psi0) = target for psi1.
    pub fn solve_psi1(&self, psi0: f64, target: f64) -> Result<f64> {
        let no_solution = || Error::NoSolution {
            measure: self.name(),
            psi0,
            target,
        };
        if !target.is_finite() {
            return Err(no_solution());
        }
        let psi1 = match self {
            EffectMeasure::Difference => psi0 + target,
            EffectMeasure::Ratio => {
                if !(psi0 > 0.0) {
                    return Err(no_solution());
                }
                target * psi0
            }
            EffectMeasure::OddsRatio => {
                if !(psi0 > 0.0 && psi0 < 1.0 && target > 0.0) {
                    return Err(no_solution());
                }
                let o1 = target * odds(psi0);
                o1 / (1.0 + o1)
            }
            EffectMeasure::Custom(c) => return solve_by_bisection(&**c, psi0, target).ok_or_else(no_solution),
        };
        if !self.in_domain(psi1, psi0) {
            return Err(no_solution());
        }
        Ok(psi1)
    }

    pub fn check_monotonicity(&self, grid: &[(f64, f64)]) -> MonotonicityReport {
        let mut report = MonotonicityReport::default();
        for &(psi1, psi0) in grid {
            match self.gradient(psi1, psi0) {
                Ok((r1, r0)) => {
                    report.checked += 1;
                    if r1 < 0.0 || r0 > 0.0 {
                        report.violations.push(MonotonicityViolation {
                            psi1,
                            psi0,
                            r1_prime: r1,
                            r0_prime: r0,
                        });
                    }
                }
                Err(_) => report.skipped_out_of_domain += 1,
            }
        }
        report
    }

    /// Gradient at a point, refusing points that break monotonicity.
    pub fn monotone_gradient(&self, psi1: f64, psi0: f64) -> Result<(f64, f64)> {
        let (r1, r0) = self.gradient(psi1, psi0)?;
        if r1 < 0.0 || r0 > 0.0 {
            return Err(Error::NonMonotone {
                measure: self.name(),
                psi1,
                psi0,
                r1,
                r0,
            });
        }
        Ok((r1, r0))
    }
}

fn central_difference(c: &dyn CustomContrast, psi1: f64, psi0: f64) -> (f64, f64) {
    let h1 = FD_STEP * psi1.abs().max(1.0);
    let h0 = FD_STEP * psi0.abs().max(1.0);
    let d1 = (c.evaluate(psi1 + h1, psi0) - c.evaluate(psi1 - h1, psi0)) / (2.0 * h1);
    let d0 = (c.evaluate(psi1, psi0 + h0) - c.evaluate(psi1, psi0 - h0)) / (2.0 * h0);
    (d1, d0)
}

/// Bracket outward from psi1 = psi0 (where r equals the null value), then
/// bisect. Assumes r is monotone in psi1.
fn solve_by_bisection(c: &dyn CustomContrast, psi0: f64, target: f64) -> Option<f64> {
    let f = |x: f64| c.evaluate(x, psi0) - target;
    let start = psi0;
    if !c.in_domain(start, psi0) {
        return None;
    }
    let f_start = f(start);
    if f_start == 0.0 {
        return Some(start);
    }
    // r increasing in psi1: move up when below target.
    let dir = if f_start < 0.0 { 1.0 } else { -1.0 };
    let mut inner = start;
    let mut f_inner = f_start;
    let mut step = 0.5 * psi0.abs().max(1.0);
    let mut bracket = None;
    for _ in 0..SOLVE_MAX_ITER {
        let cand = inner + dir * step;
        if !c.in_domain(cand, psi0) || !f(cand).is_finite() {
            step *= 0.5;
            if step < f64::EPSILON * inner.abs().max(1.0) {
                break;
            }
            continue;
        }
        let f_cand = f(cand);
        if f_cand.signum() != f_inner.signum() || f_cand == 0.0 {
            bracket = Some((inner, cand));
            break;
        }
        inner = cand;
        f_inner = f_cand;
        step *= 2.0;
    }
    let (mut lo, mut hi) = bracket?;
    let f_lo_sign = f(lo).signum();
    for _ in 0..SOLVE_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= SOLVE_TOL {
            return Some(mid);
        }
        if fm.signum() == f_lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let best = if f(lo).abs() < f(hi).abs() { lo } else { hi };
    (f(best).abs() <= SOLVE_TOL).then_some(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reversed() -> EffectMeasure {
        EffectMeasure::custom(Arc::new(FnContrast {
            name: "reversed".into(),
            evaluate: Box::new(|p1, p0| p0 - p1),
            gradient: Box::new(|_, _| (-1.0, 1.0)),
            null_value: 0.0,
        }))
        .unwrap()
    }

    fn log_ratio() -> EffectMeasure {
        struct LogRatio;
        impl CustomContrast for LogRatio {
            fn name(&self) -> &str {
                "log-ratio"
            }
            fn evaluate(&self, p1: f64, p0: f64) -> f64 {
                (p1 / p0).ln()
            }
            fn gradient(&self, p1: f64, p0: f64) -> (f64, f64) {
                (1.0 / p1, -1.0 / p0)
            }
            fn null_value(&self) -> f64 {
                0.0
            }
            fn in_domain(&self, p1: f64, p0: f64) -> bool {
                p1 > 0.0 && p0 > 0.0
            }
        }
        EffectMeasure::custom(Arc::new(LogRatio)).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let m = 2.7;
        let rr = EffectMeasure::Ratio.evaluate(0.2f64.exp() * m, m).unwrap();
        assert!((rr - 1.2214027581601699).abs() < 1e-12);
        assert_eq!(format!("{rr:.2}"), "1.22");
        assert_eq!(EffectMeasure::Difference.evaluate(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(EffectMeasure::OddsRatio.evaluate(0.5, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn domain_errors_name_the_measure() {
        match EffectMeasure::Ratio.evaluate(1.0, 0.0) {
            Err(Error::EffectDomain { measure, .. }) => assert_eq!(measure, "ratio"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(EffectMeasure::OddsRatio.evaluate(1.0, 0.5).is_err());
        assert!(EffectMeasure::OddsRatio.gradient(0.5, 0.0).is_err());
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(EffectMeasure::Difference.gradient(3.0, -2.0).unwrap(), (1.0, -1.0));
        let (r1, r0) = EffectMeasure::Ratio.gradient(2.0, 4.0).unwrap();
        assert!((r1 - 0.25).abs() < 1e-15 && (r0 + 0.125).abs() < 1e-15);
        let (r1, r0) = EffectMeasure::OddsRatio.gradient(0.5, 0.5).unwrap();
        assert!((r1 - 4.0).abs() < 1e-12 && (r0 + 4.0).abs() < 1e-12);
    }

    #[test]
    fn solve_examples() {
        let p1 = EffectMeasure::Ratio.solve_psi1(3.0, 1.22).unwrap();
        assert!((p1 - 3.66).abs() < 1e-12);
        assert!((EffectMeasure::Ratio.evaluate(p1, 3.0).unwrap() - 1.22).abs() < 1e-10);
        assert_eq!(EffectMeasure::Difference.solve_psi1(1.5, 0.0).unwrap(), 1.5);
        assert!((EffectMeasure::OddsRatio.solve_psi1(0.5, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            EffectMeasure::OddsRatio.solve_psi1(0.0, 2.0),
            Err(Error::NoSolution { .. })
        ));
        assert!(EffectMeasure::Ratio.solve_psi1(0.0, 2.0).is_err());
    }

    #[test]
    fn custom_solve_uses_bisection() {
        let lr = log_ratio();
        let p1 = lr.solve_psi1(2.0, 0.3).unwrap();
        assert!((lr.evaluate(p1, 2.0).unwrap() - 0.3).abs() <= 1e-10);
        let p1 = lr.solve_psi1(2.0, -1.5).unwrap();
        assert!((lr.evaluate(p1, 2.0).unwrap() + 1.5).abs() <= 1e-10);
    }

    #[test]
    fn custom_registration_rejects_wrong_gradient() {
        let bad = EffectMeasure::custom(Arc::new(FnContrast {
            name: "bad".into(),
            evaluate: Box::new(|p1, p0| p1 - p0),
            gradient: Box::new(|_, _| (2.0, -1.0)),
            null_value: 0.0,
        }));
        assert!(matches!(bad, Err(Error::InvalidEffect(_))));
        let bad_null = EffectMeasure::custom(Arc::new(FnContrast {
            name: "bad-null".into(),
            evaluate: Box::new(|p1, p0| p1 - p0),
            gradient: Box::new(|_, _| (1.0, -1.0)),
            null_value: 1.0,
        }));
        assert!(bad_null.is_err());
    }

    fn grid(lo: f64, hi: f64, steps: usize) -> Vec<(f64, f64)> {
        let pts: Vec<f64> = (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect();
        pts.iter().flat_map(|&a| pts.iter().map(move |&b| (a, b))).collect()
    }

    #[test]
    fn monotonicity_examples() {
        let r = EffectMeasure::Ratio.check_monotonicity(&grid(0.1, 5.0, 25));
        assert!(r.is_monotone());
        assert_eq!(r.checked, 625);
        let r = EffectMeasure::OddsRatio.check_monotonicity(&grid(0.05, 0.95, 25));
        assert!(r.is_monotone());
        let g = grid(-2.0, 2.0, 7);
        let r = reversed().check_monotonicity(&g);
        assert_eq!(r.violations.len(), g.len());
        assert!(reversed().monotone_gradient(0.3, 0.4).is_err());
    }

    #[test]
    fn parses_cli_names() {
        for name in ["difference", "ratio", "odds-ratio"] {
            assert_eq!(name.parse::<EffectMeasure>().unwrap().name(), name);
        }
        assert!("risk".parse::<EffectMeasure>().is_err());
    }
}
