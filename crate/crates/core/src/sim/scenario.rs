use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the heterogeneity term enters the treated mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parenthesization {
    /// m(u, w, 1) = e^zeta (m(u, w, 0) + 2 eta h(w4)).
    #[default]
    Inside,
    /// m(u, w, 1) = e^(zeta + 2 eta h(w4)) m(u, w, 0).
    LinkScale,
}

impl FromStr for Parenthesization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inside" => Ok(Parenthesization::Inside),
            "link-scale" => Ok(Parenthesization::LinkScale),
            other => Err(Error::InvalidArgument(format!(
                "unknown parenthesization `{other}` (expected inside or link-scale)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialScenario {
    pub name: String,
    pub u1: f64,
    pub w1: f64,
    /// The heterogeneity flag eta (0 or 1 in the named scenarios).
    pub heterogeneity: f64,
    pub zeta: f64,
    /// Nominal rate ratio, used as the acceptance target. Coverage is checked
    /// against the computed truth.
    pub nominal_rate_ratio: f64,
}

impl TrialScenario {
    pub const NAMES: [&'static str; 3] = ["null", "additive", "heterogeneous"];

    pub fn named(name: &str) -> Result<Self> {
        let (heterogeneity, zeta, rr) = match name {
            "null" => (0.0, 0.0, 1.0),
            "additive" => (0.0, 0.2, 1.22),
            "heterogeneous" => (1.0, 0.057, 1.22),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown trial scenario `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(TrialScenario {
            name: name.to_string(),
            u1: 0.0,
            w1: 0.0,
            heterogeneity,
            zeta,
            nominal_rate_ratio: rr,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoricalScenario {
    pub name: String,
    pub u0: f64,
    pub w0: f64,
}

impl HistoricalScenario {
    pub const NAMES: [&'static str; 5] = [
        "no-shift",
        "small-unobserved",
        "small-observed",
        "large-unobserved",
        "large-observed",
    ];

    pub fn named(name: &str) -> Result<Self> {
        let (u0, w0) = match name {
            "no-shift" => (0.0, 0.0),
            "small-unobserved" => (1.5, 0.0),
            "small-observed" => (0.0, 1.5),
            "large-unobserved" => (3.0, 0.0),
            "large-observed" => (0.0, 3.0),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown historical scenario `{other}` (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(HistoricalScenario {
            name: name.to_string(),
            u0,
            w0,
        })
    }
}

/// A trial population paired with a historical population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub trial: TrialScenario,
    pub historical: HistoricalScenario,
    #[serde(default)]
    pub parenthesization: Parenthesization,
}

impl ScenarioSpec {
    pub fn new(trial: TrialScenario, historical: HistoricalScenario) -> Self {
        ScenarioSpec {
            trial,
            historical,
            parenthesization: Parenthesization::Inside,
        }
    }

    /// Parses `trial/historical`, e.g. `additive/no-shift`. A bare trial name
    /// pairs with `no-shift`.
    pub fn named(name: &str) -> Result<Self> {
        let (t, h) = name.split_once('/').unwrap_or((name, "no-shift"));
        Ok(Self::new(TrialScenario::named(t)?, HistoricalScenario::named(h)?))
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.trial.name, self.historical.name)
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trial;
        let h = &self.historical;
        for (what, v) in [
            ("u1", t.u1),
            ("w1", t.w1),
            ("heterogeneity", t.heterogeneity),
            ("zeta", t.zeta),
            ("u0", h.u0),
            ("w0", h.w0),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("scenario parameter {what} must be finite, got {v}")));
            }
        }
        if t.heterogeneity < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "heterogeneity must be nonnegative to keep the treated mean positive, got {}",
                t.heterogeneity
            )));
        }
        for name in [&t.name, &h.name] {
            if name.is_empty() || name.contains(['/', ',', '"', '\n']) {
                return Err(Error::InvalidArgument(format!("invalid scenario name `{name}`")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The six adjustment sets compared in the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorId {
    None,
    Covariates,
    NoiseCovariates,
    OracleCovariates,
    PrognosticOnly,
    PrognosticCovariates,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 6] = [
        EstimatorId::None,
        EstimatorId::Covariates,
        EstimatorId::NoiseCovariates,
        EstimatorId::OracleCovariates,
        EstimatorId::PrognosticOnly,
        EstimatorId::PrognosticCovariates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::None => "none",
            EstimatorId::Covariates => "covariates",
            EstimatorId::NoiseCovariates => "noise+covariates",
            EstimatorId::OracleCovariates => "oracle+covariates",
            EstimatorId::PrognosticOnly => "prognostic-only",
            EstimatorId::PrognosticCovariates => "prognostic+covariates",
        }
    }

    pub fn uses_covariates(self) -> bool {
        matches!(
            self,
            EstimatorId::Covariates
                | EstimatorId::NoiseCovariates
                | EstimatorId::OracleCovariates
                | EstimatorId::PrognosticCovariates
        )
    }

    /// Whether the design carries a score column.
    pub fn uses_score(self) -> bool {
        !matches!(self, EstimatorId::None | EstimatorId::Covariates)
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_scenarios_match_tables() {
        let h = TrialScenario::named("heterogeneous").unwrap();
        assert_eq!((h.u1, h.w1, h.heterogeneity, h.zeta, h.nominal_rate_ratio), (0.0, 0.0, 1.0, 0.057, 1.22));
        let a = TrialScenario::named("additive").unwrap();
        assert_eq!((a.heterogeneity, a.zeta), (0.0, 0.2));
        let l = HistoricalScenario::named("large-observed").unwrap();
        assert_eq!((l.u0, l.w0), (0.0, 3.0));
        assert!(TrialScenario::named("huge").is_err());
        assert!(HistoricalScenario::named("tiny-shift").is_err());
    }

    #[test]
    fn scenario_labels_parse() {
        let s = ScenarioSpec::named("additive/large-unobserved").unwrap();
        assert_eq!(s.historical.u0, 3.0);
        assert_eq!(s.label(), "additive/large-unobserved");
        assert_eq!(ScenarioSpec::named("null").unwrap().historical.name, "no-shift");
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in EstimatorId::ALL {
            assert_eq!(e.name().parse::<EstimatorId>().unwrap(), e);
        }
    }

    #[test]
    fn validation_rejects_bad_custom_values() {
        let mut s = ScenarioSpec::named("additive").unwrap();
        assert!(s.validate().is_ok());
        s.trial.zeta = f64::NAN;
        assert!(s.validate().is_err());
        let mut s = ScenarioSpec::named("heterogeneous").unwrap();
        s.trial.heterogeneity = -1.0;
        assert!(s.validate().is_err());
        let mut s = ScenarioSpec::named("null").unwrap();
        s.historical.name = "a/b".into();
        assert!(s.validate().is_err());
    }
}
