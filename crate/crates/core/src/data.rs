//! Trial and historical datasets, CSV ingestion, folds and splits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// One participant: baseline covariates, arm and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: String,
    pub w: Vec<f64>,
    pub a: u8,
    pub y: f64,
}

/// Row-major covariate table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    names: Vec<String>,
    values: Vec<f64>,
    n: usize,
}

impl Covariates {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let p = names.len();
        let n = if p == 0 {
            0
        } else {
            if values.len() % p != 0 {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: values.len() % p,
                });
            }
            values.len() / p
        };
        Ok(Covariates { names, values, n })
    }

    /// Covariate table with no columns but `n` rows.
    pub fn empty(n: usize) -> Self {
        Covariates {
            names: Vec::new(),
            values: Vec::new(),
            n,
        }
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        let mut values = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(Covariates {
            names,
            values,
            n: rows.len(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.ncols();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ncols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Covariates {
        let p = self.ncols();
        let mut values = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Covariates {
            names: self.names.clone(),
            values,
            n: idx.len(),
        }
    }
}

/// Randomized trial data (D = 1) with known design probability of treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    ids: Vec<String>,
    covariates: Covariates,
    arms: Vec<u8>,
    y: Vec<f64>,
    pi1: f64,
}

impl TrialDataset {
    pub fn new(
        ids: Vec<String>,
        covariates: Covariates,
        arms: Vec<u8>,
        y: Vec<f64>,
        pi1: f64,
    ) -> Result<Self> {
        if !(pi1 > 0.0 && pi1 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pi1 must lie in (0, 1), got {pi1}"
            )));
        }
        let n = y.len();
        for len in [ids.len(), arms.len(), covariates.nrows()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        for (i, &a) in arms.iter().enumerate() {
            if a > 1 {
                return Err(Error::ArmDomain {
                    row: i + 1,
                    value: a.to_string(),
                });
            }
        }
        check_finite(&y, "y")?;
        check_finite(&covariates.values, "w")?;
        Ok(TrialDataset {
            ids,
            covariates,
            arms,
            y,
            pi1,
        })
    }

    pub fn from_observations(obs: Vec<Observation>, names: Vec<String>, pi1: f64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = obs.iter().map(|o| o.w.clone()).collect();
        let covariates = Covariates::from_rows(names, &rows)?;
        let covariates = if covariates.ncols() == 0 {
            Covariates::empty(obs.len())
        } else {
            covariates
        };
        let ids = obs.iter().map(|o| o.id.clone()).collect();
        let arms = obs.iter().map(|o| o.a).collect();
        let y = obs.iter().map(|o| o.y).collect();
        TrialDataset::new(ids, covariates, arms, y, pi1)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.arms.iter().filter(|&&a| a == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    pub fn pi1(&self) -> f64 {
        self.pi1
    }

    pub fn pi0(&self) -> f64 {
        1.0 - self.pi1
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn arms(&self) -> &[u8] {
        &self.arms
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            id: self.ids[i].clone(),
            w: self.covariates.row(i).to_vec(),
            a: self.arms[i],
            y: self.y[i],
        }
    }

    pub fn subset(&self, idx: &[usize]) -> TrialDataset {
        TrialDataset {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            covariates: self.covariates.select_rows(idx),
            arms: idx.iter().map(|&i| self.arms[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            pi1: self.pi1,
        }
    }

    /// Analysis operations need both arms represented.
    pub fn require_both_arms(&self) -> Result<()> {
        if self.n_treated() == 0 || self.n_control() == 0 {
            return Err(Error::Degenerate(
                "both arms must be nonempty for analysis".into(),
            ));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("id,a,y");
        for name in self.covariates.names() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{},{},{}", self.ids[i], self.arms[i], self.y[i]));
            for v in self.covariates.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        write_file(path, &out)
    }
}

/// Historical control-only data (D = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalDataset {
    ids: Vec<String>,
    covariates: Covariates,
    y: Vec<f64>,
}

impl HistoricalDataset {
    pub fn new(ids: Vec<String>, covariates: Covariates, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        for len in [ids.len(), covariates.nrows()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        check_finite(&y, "y")?;
        check_finite(&covariates.values, "w")?;
        Ok(HistoricalDataset { ids, covariates, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn subset(&self, idx: &[usize]) -> HistoricalDataset {
        HistoricalDataset {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            covariates: self.covariates.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,y");
        for name in self.covariates.names() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&format!("{},{}", self.ids[i], self.y[i]));
            for v in self.covariates.row(i) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        write_file(path, &out)
    }
}

fn check_finite(values: &[f64], column: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i + 1,
            column: column.to_string(),
            value: values[i].to_string(),
        });
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)
}

struct ParsedCsv {
    ids: Vec<String>,
    arms: Option<Vec<u8>>,
    y: Vec<f64>,
    covariates: Covariates,
}

fn parse_number(field: Option<&str>, row: usize, column: &str) -> Result<f64> {
    let raw = field.unwrap_or("");
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonFinite {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Parses the shared `id,[a,]y,w...` layout. Columns are located by header
/// name; every non-reserved column is a covariate, in header order.
fn parse_csv<R: Read>(reader: R, require_arm: bool) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers.get(0) == Some("")) {
        return Err(Error::EmptyFile);
    }
    let mut seen = HashSet::new();
    for h in headers.iter() {
        if !seen.insert(h) {
            return Err(Error::DuplicateColumn(h.to_string()));
        }
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| Error::MissingColumn("id".into()))?;
    let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let a_col = find("a");
    if require_arm && a_col.is_none() {
        return Err(Error::MissingColumn("a".into()));
    }
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != id_col && j != y_col && Some(j) != a_col)
        .collect();
    let names: Vec<String> = cov_cols.iter().map(|&j| headers[j].to_string()).collect();

    let mut ids = Vec::new();
    let mut arms = a_col.map(|_| Vec::new());
    let mut y = Vec::new();
    let mut values = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Csv {
            row,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Csv {
                row,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let id = record.get(id_col).unwrap_or("");
        if id.is_empty() {
            return Err(Error::Csv {
                row,
                message: "empty id".into(),
            });
        }
        ids.push(id.to_string());
        if let (Some(col), Some(arms)) = (a_col, arms.as_mut()) {
            let raw = record.get(col).unwrap_or("");
            match raw {
                "0" => arms.push(0),
                "1" => arms.push(1),
                other => {
                    return Err(Error::ArmDomain {
                        row,
                        value: other.to_string(),
                    })
                }
            }
        }
        y.push(parse_number(record.get(y_col), row, "y")?);
        for (&j, name) in cov_cols.iter().zip(&names) {
            values.push(parse_number(record.get(j), row, name)?);
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyFile);
    }
    let covariates = if names.is_empty() {
        Covariates::empty(y.len())
    } else {
        Covariates::new(names, values)?
    };
    Ok(ParsedCsv {
        ids,
        arms,
        y,
        covariates,
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a trial CSV with header `id,a,y,<covariates...>`.
pub fn load_trial_csv(path: &Path, pi1: f64) -> Result<TrialDataset> {
    let parsed = parse_csv(open(path)?, true)?;
    let arms = parsed.arms.expect("arm column required");
    TrialDataset::new(parsed.ids, parsed.covariates, arms, parsed.y, pi1)
}

/// Loads a historical control CSV; an arm column is optional but must be all 0.
pub fn load_historical_csv(path: &Path) -> Result<HistoricalDataset> {
    let parsed = parse_csv(open(path)?, false)?;
    if let Some(arms) = &parsed.arms {
        if let Some(i) = arms.iter().position(|&a| a != 0) {
            return Err(Error::ControlOnly { row: i + 1 });
        }
    }
    HistoricalDataset::new(parsed.ids, parsed.covariates, parsed.y)
}

/// Assignment of rows to `k` cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Arm-stratified fold assignment.
///
/// Within each arm the rows are shuffled and dealt round-robin; the treated
/// arm continues the deal where the control arm stopped so overall fold sizes
/// also differ by at most one.
pub fn make_folds(n: usize, arms: &[u8], k: usize, seed: u64) -> Result<FoldAssignment> {
    if arms.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: arms.len(),
        });
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("fold count must be >= 2, got {k}")));
    }
    let mut by_arm: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &a) in arms.iter().enumerate() {
        if a > 1 {
            return Err(Error::ArmDomain {
                row: i + 1,
                value: a.to_string(),
            });
        }
        by_arm[a as usize].push(i);
    }
    let nonempty: Vec<usize> = by_arm.iter().map(Vec::len).filter(|&m| m > 0).collect();
    let min_arm = nonempty.iter().copied().min().unwrap_or(0);
    if min_arm < k {
        return Err(Error::InfeasibleFolds { k, min_arm });
    }
    let mut rng = rng::seeded(seed);
    let mut fold_of = vec![0; n];
    let mut offset = 0;
    for members in by_arm.iter_mut() {
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = (offset + pos) % k;
        }
        offset += members.len();
    }
    Ok(FoldAssignment { k, fold_of, seed })
}

/// Unstratified k-fold assignment for control-only data.
pub fn make_plain_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    make_folds(n, &vec![0; n], k, seed)
}

/// Random disjoint train/test split of historical data.
pub fn split_historical(
    data: &HistoricalDataset,
    train_frac: f64,
    seed: u64,
) -> Result<(HistoricalDataset, HistoricalDataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let n = data.len();
    let n_train = (train_frac * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::EmptySplit {
            train: n_train,
            test: n.saturating_sub(n_train),
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let (train, test) = idx.split_at(n_train);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}
