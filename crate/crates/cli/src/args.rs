//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (model format 1)");

#[derive(Debug, Parser)]
#[command(name = "rfre", version = VERSION, about = "Recurrent-event-free probability prediction with pseudo-observation forests")]
pub struct Cli {
    /// Sectioned `key = value` settings file; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads. Outputs do not depend on this value.
    #[arg(long, global = true, env = "RFRE_THREADS")]
    pub threads: Option<usize>,
    /// Seed for every stochastic step (config key `run.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Event table to censored longitudinal rows `subject_id,t,x,delta`.
    Transform(TransformArgs),
    /// Jackknife pseudo-observations joined with covariates.
    Pseudo(PseudoArgs),
    /// Grow a forest on a pseudo-observation table.
    Fit(FitArgs),
    /// Predict event-free probabilities at check-in times.
    Predict(PredictArgs),
    /// Out-of-bag permutation importance tests.
    Importance(ImportanceArgs),
    /// Pseudo-value logistic regression with robust standard errors.
    Glm(GlmArgs),
    /// Harrell's C with a subject-bootstrap standard error.
    Evaluate(EvaluateArgs),
    /// Run one cell of the simulation study.
    Simulate(SimulateArgs),
    /// Transform, pseudo, fit, predict, evaluate and importance in one run.
    Pipeline(PipelineArgs),
    /// Merge per-replicate simulation rows and summarize them.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    /// First check-in time (`grid.start`, default 0).
    #[arg(long)]
    pub grid_start: Option<f64>,
    /// Check-in spacing (`grid.step`).
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Window length (`grid.tau`).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Administrative end of follow-up (`grid.end`).
    #[arg(long)]
    pub end: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ForestArgs {
    /// Number of trees (`forest.trees`, default 500).
    #[arg(long)]
    pub trees: Option<usize>,
    /// Candidate variables per node (`forest.mtry`, default ceil(sqrt(p))).
    #[arg(long)]
    pub mtry: Option<usize>,
    /// Minimum bagged weight per child (`forest.min_node`, default 40).
    #[arg(long)]
    pub min_node: Option<usize>,
    /// Depth limit (`forest.max_depth`, default none).
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TestArgs {
    /// Permutations per variable (`importance.permutations`, default 100).
    #[arg(long)]
    pub permutations: Option<usize>,
    /// `permutation-sd` (default) or `standard-error` (`importance.z_scale`).
    #[arg(long)]
    pub z_scale: Option<String>,
    /// Permute only within check-in times (`importance.stratify_t`).
    #[arg(long)]
    pub stratify_t: Option<bool>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoreArgs {
    /// Bootstrap resamples for the standard error (`evaluation.bootstrap`, default 100).
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// `pooled` (default) or `within-checkin` (`evaluation.scope`).
    #[arg(long)]
    pub scope: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TransformArgs {
    /// `subject_id,time,is_event` table (`paths.events`).
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Hold out this fraction of subjects (`evaluation.validation_fraction`).
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Rows of held-out subjects.
    #[arg(long)]
    pub validation_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PseudoArgs {
    /// Output of `transform`.
    #[arg(long)]
    pub rows: PathBuf,
    /// `subject_id[,t],z1,...` table (`paths.covariates`).
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// `name,kind` table (`paths.schema`); default reads every column as continuous.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Window length (`grid.tau`).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Output of `pseudo`.
    #[arg(long)]
    pub pseudo: PathBuf,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Covariate table (`paths.covariates`). Without `--rows` every row with
    /// a `t` value is a query point.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Query points from a `transform` output.
    #[arg(long)]
    pub rows: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ImportanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// The pseudo-observation table the model was fitted on.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub test: TestArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GlmArgs {
    #[arg(long)]
    pub pseudo: PathBuf,
    /// `model_a`, `model_b` or a comma-separated column list (`t` allowed).
    #[arg(long)]
    pub design: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// `transform` rows holding residual times and event indicators.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Gap-time rank correlation (`simulation.rho`, default 0).
    #[arg(long)]
    pub rho: Option<f64>,
    /// `none`, `light`, `moderate` or `heavy` (`simulation.censoring`).
    #[arg(long)]
    pub censoring: Option<String>,
    /// `none`, `full` or `partial` (`simulation.history`).
    #[arg(long)]
    pub history: Option<String>,
    /// Subjects per cohort (`simulation.n`, default 500).
    #[arg(long)]
    pub n: Option<usize>,
    /// `simulation.replicates`, default 30.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Imputations under partial history (`simulation.imputations`, default 10).
    #[arg(long)]
    pub imputations: Option<usize>,
    /// Monte Carlo subjects for dropout calibration (`simulation.calibration_subjects`).
    #[arg(long)]
    pub calibration_subjects: Option<usize>,
    /// `pooled` (default) or `within-checkin` (`evaluation.scope`).
    #[arg(long)]
    pub scope: Option<String>,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Summary `method,rho,censoring,history,replicates,mean,sd`.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-replicate rows `method,rho,censoring,history,replicate,c`.
    #[arg(long)]
    pub emit_raw: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output directory (`paths.output`).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[command(flatten)]
    pub score: ScoreArgs,
    /// `evaluation.validation_fraction`, default 0.3; 0 evaluates in-sample.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[command(flatten)]
    pub test: TestArgs,
    /// Skip the importance stage (`importance.enabled = false`).
    #[arg(long)]
    pub no_importance: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Per-replicate files from `simulate --emit-raw`.
    #[arg(long, required = true, num_args = 1..)]
    pub raw: Vec<PathBuf>,
    /// Merged long-format rows.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-cell mean and sd.
    #[arg(long)]
    pub summary: PathBuf,
}
