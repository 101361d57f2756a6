//! Versioned flat-text persistence for prognostic models.
//!
//! ```text
//! prognostic-model 1
//! learner hinge
//! n_train 2000
//! seed 42
//! cv_rmse 1.234
//! covariates 2
//! w1
//! w2
//! terms 3
//! 0.5
//! -1.2 h+0@0.31 h-1@1.2
//! 0.7 x1
//! ```
//!
//! Each term line is the weight followed by its factors: `h+<j>@<knot>`,
//! `h-<j>@<knot>` or `x<j>`, with `j` a 0-based covariate index. Floats use
//! the shortest representation that round-trips.

use std::fmt::Write as _;
use std::path::Path;

use super::{BasisTerm, Factor, PrognosticModel};
use crate::error::{Error, Result};

const MAGIC: &str = "prognostic-model";
const VERSION: u32 = 1;

impl PrognosticModel {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        let _ = writeln!(s, "learner {}", self.learner);
        let _ = writeln!(s, "n_train {}", self.n_train);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "cv_rmse {:?}", self.cv_rmse);
        let _ = writeln!(s, "covariates {}", self.covariates.len());
        for name in &self.covariates {
            let _ = writeln!(s, "{name}");
        }
        let _ = writeln!(s, "terms {}", self.terms.len());
        for (t, w) in self.terms.iter().zip(&self.weights) {
            let _ = write!(s, "{w:?}");
            for f in &t.factors {
                match *f {
                    Factor::Hinge { var, knot, sign } => {
                        let c = if sign > 0 { '+' } else { '-' };
                        let _ = write!(s, " h{c}{var}@{knot:?}");
                    }
                    Factor::Linear { var } => {
                        let _ = write!(s, " x{var}");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
        };
        let (ln, header) = r.next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad(ln, "not a prognostic model file".into()))?;
        if version != VERSION.to_string() {
            return Err(bad(ln, format!("unsupported version `{version}` (expected {VERSION})")));
        }

        let (ln, v) = r.field("learner")?;
        let learner = v.parse().map_err(|e: Error| bad(ln, e.to_string()))?;
        let (ln, v) = r.field("n_train")?;
        let n_train = parse(ln, v, "count")?;
        let (ln, v) = r.field("seed")?;
        let seed = parse(ln, v, "seed")?;
        let (ln, v) = r.field("cv_rmse")?;
        let cv_rmse = parse(ln, v, "number")?;
        let (ln, v) = r.field("covariates")?;
        let p: usize = parse(ln, v, "count")?;
        let mut covariates = Vec::with_capacity(p);
        for _ in 0..p {
            covariates.push(r.next("covariate name")?.1.to_string());
        }
        let (ln, v) = r.field("terms")?;
        let m: usize = parse(ln, v, "count")?;
        let mut terms = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, l) = r.next("term")?;
            let mut parts = l.split_whitespace();
            weights.push(parse(ln, parts.next().unwrap_or(""), "weight")?);
            let mut factors = Vec::new();
            for tok in parts {
                let f = parse_factor(tok).ok_or_else(|| bad(ln, format!("invalid factor `{tok}`")))?;
                if f.var() >= p {
                    return Err(bad(ln, format!("factor `{tok}` refers to covariate {} of {p}", f.var())));
                }
                factors.push(f);
            }
            terms.push(BasisTerm { factors });
        }
        for (i, l) in r.lines {
            if !l.trim().is_empty() {
                return Err(bad(i + 1, "trailing content".into()));
            }
        }
        Ok(PrognosticModel {
            learner,
            covariates,
            terms,
            weights,
            n_train,
            seed,
            cv_rmse,
        })
    }
}

fn bad(line: usize, message: String) -> Error {
    Error::ModelFormat { line, message }
}

fn parse<T: std::str::FromStr>(line: usize, v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| bad(line, format!("invalid {what} `{v}`")))
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| bad(0, format!("unexpected end of file, expected {what}")))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (ln, l) = self.next(key)?;
        let rest = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(ln, format!("expected `{key} <value>`")))?;
        Ok((ln, rest))
    }
}

fn parse_factor(tok: &str) -> Option<Factor> {
    if let Some(rest) = tok.strip_prefix('x') {
        return Some(Factor::Linear { var: rest.parse().ok()? });
    }
    let rest = tok.strip_prefix('h')?;
    let sign = match rest.chars().next()? {
        '+' => 1,
        '-' => -1,
        _ => return None,
    };
    let (var, knot) = rest[1..].split_once('@')?;
    Some(Factor::Hinge {
        var: var.parse().ok()?,
        knot: knot.parse().ok()?,
        sign,
    })
}

pub fn write_model(model: &PrognosticModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_text()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_model(path: &Path) -> Result<PrognosticModel> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    PrognosticModel::from_text(&text)
}
