use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "glmprog", version, about = "GLM plug-in estimation, prognostic adjustment and power planning for randomized trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a marginal treatment effect from trial data.
    Analyze(AnalyzeArgs),
    /// Required sample size from historical controls.
    Power(PowerArgs),
    /// Train a prognostic model on historical controls.
    Train(TrainArgs),
    /// Run the simulation study.
    Simulate(SimulateArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

// Every field is optional on the command line so that a config file can
// supply it; required values are checked after merging.

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalyzeArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    /// Trial CSV with columns id,a,y and covariates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<PathBuf>,
    /// Treatment probability; defaults to the observed treated fraction.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi1: Option<f64>,
    /// normal, binomial, poisson or negative-binomial.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Defaults to the family's canonical link.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    /// Negative-binomial dispersion r.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nb_dispersion: Option<f64>,
    /// difference, ratio or odds-ratio.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<String>,
    /// Comma-separated working-model terms, e.g. `w:*,prognostic`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prognostic_model: Option<PathBuf>,
    /// Cross-fitting folds; 0 fits once on all rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossfit: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Effect value under the null hypothesis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null: Option<f64>,
    /// lower, upper or none.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_sided: Option<String>,
    /// Centered variance of the influence values.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub centered: bool,
    /// Also write the result CSV and its manifest here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PowerArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    /// Historical control CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub historical: Option<PathBuf>,
    /// kappa from this model's predictions on the historical data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prognostic_model: Option<PathBuf>,
    /// kappa from the cross-validated RMSE of this GLM design.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
    /// Plan an unadjusted analysis.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub unadjusted: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nb_dispersion: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<String>,
    /// Minimum clinically important effect.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Target power.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi1: Option<f64>,
    /// Multiplier for kappa_1^2 relative to kappa_0^2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inflate_kappa1: Option<f64>,
    /// Multiplier for sigma_1^2 relative to sigma_0^2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inflate_sigma1: Option<f64>,
    /// Binary outcome: sigma_1^2 = psi1 (1 - psi1).
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub binary: bool,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub one_sided: bool,
    /// Folds for the GLM kappa estimate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub historical: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Candidate learners: hinge, glm-main-terms, intercept-only.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub library: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_terms: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward_terms: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
    /// Train on this fraction and hold out the rest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_frac: Option<f64>,
    /// Where to write the held-out rows.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
    /// Scenario labels such as `additive/no-shift`, or JSON scenario files.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trial: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_hist: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Fit each working model once instead of cross-fitting.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub no_crossfit: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<String>>,
    /// inside or link-scale.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parenthesization: Option<String>,
    /// bound or no-cross-term.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planning: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nb_dispersion: Option<f64>,
}
