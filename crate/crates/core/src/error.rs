use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("empty file: no data rows")]
    EmptyFile,

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("row {row}: arm value `{value}` is not 0 or 1")]
    ArmDomain { row: usize, value: String },

    #[error("row {row}: column `{column}` is missing or not a finite number (`{value}`)")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: historical data must be control-only but arm is 1")]
    ControlOnly { row: usize },

    #[error("row {row}: outcome {value} is outside the {family} domain")]
    OutcomeDomain {
        row: usize,
        value: f64,
        family: &'static str,
    },

    #[error("cannot build {k} folds: smallest arm has {min_arm} members")]
    InfeasibleFolds { k: usize, min_arm: usize },

    #[error("split leaves an empty part ({train} train / {test} test)")]
    EmptySplit { train: usize, test: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("({psi1}, {psi0}) is outside the domain of the {measure} effect")]
    EffectDomain {
        measure: String,
        psi1: f64,
        psi0: f64,
    },

    #[error("no psi1 attains {measure} = {target} at psi0 = {psi0}")]
    NoSolution {
        measure: String,
        psi0: f64,
        target: f64,
    },

    #[error("{measure} effect is not monotone at ({psi1}, {psi0}): r1' = {r1}, r0' = {r0}")]
    NonMonotone {
        measure: String,
        psi1: f64,
        psi0: f64,
        r1: f64,
        r0: f64,
    },

    #[error("custom effect failed registration: {0}")]
    InvalidEffect(String),

    #[error("value {value} is outside the domain of the {link} link")]
    LinkDomain { link: &'static str, value: f64 },

    #[error("unsupported family/link pair: {family}/{link}")]
    UnsupportedFamilyLink {
        family: &'static str,
        link: &'static str,
    },

    #[error("design matrix is rank deficient (column {column} is collinear with earlier columns)")]
    SingularDesign { column: usize },

    #[error("coefficient {index} = {value} exceeds the bound b = {bound} of the bounded-coefficient regularity condition; the fit is diverging")]
    Divergence {
        index: usize,
        value: f64,
        bound: f64,
    },

    #[error("IRLS did not converge after {iterations} iterations (score max-norm {score_norm:e})")]
    Convergence { iterations: usize, score_norm: f64 },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown design term `{0}`")]
    UnknownTerm(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("prognostic scores are required by the design but were not supplied")]
    MissingScores,

    #[error("every candidate learner failed: {}", .0.join("; "))]
    AllCandidatesFailed(Vec<String>),

    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("target is unattainable: {0}")]
    Unattainable(String),

    #[error("check refused: {0}")]
    Refused(String),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }
}
