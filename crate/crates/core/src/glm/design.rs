//! Design specifications and design-matrix construction.
//!
//! The intercept and treatment columns are always present, in that order.
//! Further columns come from a term list such as
//! `w:age, prognostic, interact(treatment, w:age), transform(log, w:dose)`.

use std::fmt;

use nalgebra::DMatrix;

use crate::data::Covariates;
use crate::error::{Error, Result};
use crate::glm::FamilyLink;

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// A covariate by name; `w:*` expands to every covariate.
    Covariate(String),
    AllCovariates,
    /// g(score): the prognostic score on the working model's link scale.
    Prognostic,
    LogCovariate(String),
    /// Treatment times the inner term.
    Interact(Box<Term>),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Covariate(name) => write!(f, "w:{name}"),
            Term::AllCovariates => write!(f, "w:*"),
            Term::Prognostic => write!(f, "prognostic"),
            Term::LogCovariate(name) => write!(f, "transform(log, w:{name})"),
            Term::Interact(inner) => write!(f, "interact(treatment, {inner})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignSpec {
    pub terms: Vec<Term>,
}

impl DesignSpec {
    /// Intercept and treatment only.
    pub fn treatment_only() -> Self {
        DesignSpec { terms: Vec::new() }
    }

    pub fn with_terms(terms: Vec<Term>) -> Self {
        DesignSpec { terms }
    }

    /// Parses a comma-separated term list. `intercept` and `treatment` are
    /// accepted and ignored since both are implicit.
    pub fn parse(list: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for raw in split_top_level(list)? {
            let raw = raw.trim();
            if raw.is_empty() || raw == "intercept" || raw == "treatment" {
                continue;
            }
            terms.push(parse_term(raw)?);
        }
        Ok(DesignSpec { terms })
    }

    pub fn uses_prognostic(&self) -> bool {
        fn uses(t: &Term) -> bool {
            match t {
                Term::Prognostic => true,
                Term::Interact(inner) => uses(inner),
                _ => false,
            }
        }
        self.terms.iter().any(uses)
    }

    pub fn resolve(&self, names: &[String]) -> Result<ResolvedDesign> {
        let mut columns = vec![Column::Intercept, Column::Treatment];
        for term in &self.terms {
            for col in resolve_term(term, names)? {
                if !columns.contains(&col) {
                    columns.push(col);
                }
            }
        }
        Ok(ResolvedDesign {
            columns,
            names: names.to_vec(),
        })
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

fn split_top_level(list: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in list.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::UnknownTerm(list.to_string()));
                }
            }
            ',' if depth == 0 => {
                out.push(&list[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::UnknownTerm(list.to_string()));
    }
    out.push(&list[start..]);
    Ok(out)
}

fn parse_term(raw: &str) -> Result<Term> {
    let raw = raw.trim();
    if raw == "prognostic" {
        return Ok(Term::Prognostic);
    }
    if let Some(name) = raw.strip_prefix("w:") {
        let name = name.trim();
        if name == "*" {
            return Ok(Term::AllCovariates);
        }
        if name.is_empty() {
            return Err(Error::UnknownTerm(raw.to_string()));
        }
        return Ok(Term::Covariate(name.to_string()));
    }
    let call = |prefix: &str| -> Option<Vec<String>> {
        let body = raw.strip_prefix(prefix)?.trim_start().strip_prefix('(')?;
        let body = body.strip_suffix(')')?;
        split_top_level(body)
            .ok()
            .map(|parts| parts.into_iter().map(|p| p.trim().to_string()).collect())
    };
    if let Some(args) = call("interact") {
        if args.len() == 2 && args[0] == "treatment" {
            let inner = parse_term(&args[1])?;
            return Ok(Term::Interact(Box::new(inner)));
        }
    }
    if let Some(args) = call("transform") {
        if args.len() == 2 && args[0] == "log" {
            if let Term::Covariate(name) = parse_term(&args[1])? {
                return Ok(Term::LogCovariate(name));
            }
        }
    }
    Err(Error::UnknownTerm(raw.to_string()))
}

/// A concrete design column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Intercept,
    Treatment,
    Covariate(usize),
    LogCovariate(usize),
    Prognostic,
    TreatmentTimes(Box<Column>),
}

fn resolve_term(term: &Term, names: &[String]) -> Result<Vec<Column>> {
    let lookup = |name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    };
    Ok(match term {
        Term::Covariate(name) => vec![Column::Covariate(lookup(name)?)],
        Term::AllCovariates => (0..names.len()).map(Column::Covariate).collect(),
        Term::Prognostic => vec![Column::Prognostic],
        Term::LogCovariate(name) => vec![Column::LogCovariate(lookup(name)?)],
        Term::Interact(inner) => resolve_term(inner, names)?
            .into_iter()
            .map(|c| Column::TreatmentTimes(Box::new(c)))
            .collect(),
    })
}

/// A design specification bound to a covariate table's column names.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedDesign {
    columns: Vec<Column>,
    names: Vec<String>,
}

impl ResolvedDesign {
    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn uses_prognostic(&self) -> bool {
        self.columns.iter().any(|c| match c {
            Column::Prognostic => true,
            Column::TreatmentTimes(inner) => **inner == Column::Prognostic,
            _ => false,
        })
    }

    pub fn column_names(&self) -> Vec<String> {
        fn label(c: &Column, names: &[String]) -> String {
            match c {
                Column::Intercept => "intercept".into(),
                Column::Treatment => "treatment".into(),
                Column::Covariate(j) => names[*j].clone(),
                Column::LogCovariate(j) => format!("log({})", names[*j]),
                Column::Prognostic => "g(prognostic)".into(),
                Column::TreatmentTimes(inner) => format!("treatment:{}", label(inner, names)),
            }
        }
        self.columns.iter().map(|c| label(c, &self.names)).collect()
    }

    /// The design restricted to columns that do not involve the arm, for
    /// fitting to control-only data.
    pub fn without_treatment(&self) -> ResolvedDesign {
        ResolvedDesign {
            columns: self
                .columns
                .iter()
                .filter(|c| !matches!(c, Column::Treatment | Column::TreatmentTimes(_)))
                .cloned()
                .collect(),
            names: self.names.clone(),
        }
    }

    /// True when every column of `self` also appears in `other`.
    pub fn is_nested_in(&self, other: &ResolvedDesign) -> bool {
        self.columns.iter().all(|c| other.columns.contains(c))
    }

    /// One design row. `g_score` is the prognostic score already on the link scale.
    pub fn row_into(&self, w: &[f64], a: u8, g_score: Option<f64>, out: &mut [f64]) -> Result<()> {
        for (slot, col) in out.iter_mut().zip(&self.columns) {
            *slot = column_value(col, w, a, g_score)?;
        }
        Ok(())
    }

    pub fn row(&self, w: &[f64], a: u8, g_score: Option<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.ncols()];
        self.row_into(w, a, g_score, &mut out)?;
        Ok(out)
    }
}

fn column_value(col: &Column, w: &[f64], a: u8, g_score: Option<f64>) -> Result<f64> {
    Ok(match col {
        Column::Intercept => 1.0,
        Column::Treatment => a as f64,
        Column::Covariate(j) => w[*j],
        Column::LogCovariate(j) => {
            let v = w[*j];
            if !(v > 0.0) {
                return Err(Error::LinkDomain {
                    link: "log",
                    value: v,
                });
            }
            v.ln()
        }
        Column::Prognostic => g_score.ok_or(Error::MissingScores)?,
        Column::TreatmentTimes(inner) => a as f64 * column_value(inner, w, a, g_score)?,
    })
}

/// Maps prognostic scores onto the link scale, rejecting out-of-domain values.
pub fn link_scores(fl: &FamilyLink, scores: &[f64]) -> Result<Vec<f64>> {
    scores.iter().map(|&s| fl.link(s)).collect()
}

/// Builds the n x q design matrix. Supplying `arm_override` forces every
/// row's treatment value (counterfactual designs).
pub fn build_design(
    design: &ResolvedDesign,
    fl: &FamilyLink,
    covariates: &Covariates,
    arms: &[u8],
    scores: Option<&[f64]>,
    arm_override: Option<u8>,
) -> Result<DMatrix<f64>> {
    let n = covariates.nrows();
    if arms.len() != n && arm_override.is_none() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: arms.len(),
        });
    }
    let g_scores = match (design.uses_prognostic(), scores) {
        (true, None) => return Err(Error::MissingScores),
        (true, Some(s)) => {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: s.len(),
                });
            }
            Some(link_scores(fl, s)?)
        }
        (false, Some(_)) => {
            return Err(Error::InvalidArgument(
                "prognostic scores supplied but the design has no prognostic term".into(),
            ))
        }
        (false, None) => None,
    };
    let q = design.ncols();
    let mut x = DMatrix::zeros(n, q);
    let mut row = vec![0.0; q];
    for i in 0..n {
        let a = arm_override.unwrap_or_else(|| arms[i]);
        design.row_into(covariates.row(i), a, g_scores.as_ref().map(|g| g[i]), &mut row)?;
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov(n: usize) -> Covariates {
        Covariates::new(
            vec!["age".into(), "dose".into()],
            (0..n).flat_map(|i| [i as f64, 1.0 + i as f64]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn treatment_only_matrix() {
        let d = DesignSpec::treatment_only().resolve(&[]).unwrap();
        let x = build_design(&d, &FamilyLink::normal(), &Covariates::empty(4), &[0, 1, 0, 1], None, None).unwrap();
        let expect = DMatrix::from_row_slice(4, 2, &[1., 0., 1., 1., 1., 0., 1., 1.]);
        assert_eq!(x, expect);
    }

    #[test]
    fn prognostic_column_is_link_of_score() {
        let spec = DesignSpec::parse("prognostic").unwrap();
        let d = spec.resolve(&[]).unwrap();
        let x = build_design(&d, &FamilyLink::poisson(), &Covariates::empty(1), &[1], Some(&[1.0]), None).unwrap();
        assert_eq!(x[(0, 2)], 0.0);
        let err = build_design(&d, &FamilyLink::poisson(), &Covariates::empty(1), &[1], Some(&[0.0]), None);
        assert!(matches!(err, Err(Error::LinkDomain { .. })));
        let err = build_design(&d, &FamilyLink::poisson(), &Covariates::empty(1), &[1], None, None);
        assert!(matches!(err, Err(Error::MissingScores)));
    }

    #[test]
    fn parses_term_list() {
        let spec = DesignSpec::parse(
            "intercept, treatment, w:age, prognostic, interact(treatment, w:age), transform(log, w:dose)",
        )
        .unwrap();
        assert_eq!(
            spec.terms,
            vec![
                Term::Covariate("age".into()),
                Term::Prognostic,
                Term::Interact(Box::new(Term::Covariate("age".into()))),
                Term::LogCovariate("dose".into()),
            ]
        );
        assert_eq!(DesignSpec::parse(&spec.to_string()).unwrap(), spec);
        assert!(DesignSpec::parse("w:age, bogus").is_err());
        assert!(DesignSpec::parse("interact(treatment, w:age").is_err());
    }

    #[test]
    fn interaction_and_counterfactual_arm() {
        let spec = DesignSpec::parse("w:*, interact(treatment, w:age), transform(log, w:dose)").unwrap();
        let names = vec!["age".to_string(), "dose".to_string()];
        let d = spec.resolve(&names).unwrap();
        assert_eq!(
            d.column_names(),
            vec!["intercept", "treatment", "age", "dose", "treatment:age", "log(dose)"]
        );
        let c = cov(3);
        let x1 = build_design(&d, &FamilyLink::normal(), &c, &[0, 0, 0], None, Some(1)).unwrap();
        assert_eq!(x1[(2, 1)], 1.0);
        assert_eq!(x1[(2, 4)], 2.0);
        assert!((x1[(2, 5)] - 3f64.ln()).abs() < 1e-15);
        let x0 = build_design(&d, &FamilyLink::normal(), &c, &[1, 1, 1], None, Some(0)).unwrap();
        assert_eq!(x0[(2, 4)], 0.0);
        assert!(matches!(
            DesignSpec::parse("w:height").unwrap().resolve(&names),
            Err(Error::UnknownCovariate(_))
        ));
    }

    #[test]
    fn nesting() {
        let names = vec!["age".to_string(), "dose".to_string()];
        let small = DesignSpec::parse("w:age").unwrap().resolve(&names).unwrap();
        let big = DesignSpec::parse("w:*").unwrap().resolve(&names).unwrap();
        assert!(small.is_nested_in(&big));
        assert!(!big.is_nested_in(&small));
    }
}
