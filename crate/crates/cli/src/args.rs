//! Command-line surface. Every flag is long-form; unknown flags are hard
//! errors. Relative paths resolve against BASKET_TOPICS_DATA_DIR when set.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "basket-topics",
    version,
    about = "Mine latent topics from transaction baskets and run the downstream analyses",
    after_help = "Relative input/output paths resolve against the BASKET_TOPICS_DATA_DIR \
                  environment variable when it is set.\n\nExit codes: 0 success, 1 usage \
                  error, 2 data or validation error, 3 internal error."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a corpus file from a raw transactions CSV or JSONL stream.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with known topics, optionally with
    /// seasonal dating and customer groups.
    Simulate(SimulateArgs),
    /// Fit a topic model to a corpus.
    Train(TrainArgs),
    /// Sweep the topic count and report train/held-out log-perplexity.
    Eval(EvalArgs),
    /// Export the per-topic relevance table.
    Topics(TopicsArgs),
    /// Rank one topic's products by relevance.
    Rank(RankArgs),
    /// Month or weekday prevalence indices for each topic.
    Seasonal(SeasonalArgs),
    /// Fit and cross-validate a demographic classifier on customer
    /// topic mixtures.
    Predict(PredictArgs),
    /// Generate or score topic-validation survey tasks.
    Survey(SurveyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw transactions file.
    #[arg(long)]
    pub input: PathBuf,
    /// Input encoding; inferred from the file extension when omitted.
    #[arg(long, value_parser = ["csv", "jsonl"])]
    pub format: Option<String>,
    /// Keep products selling strictly more than this many units.
    #[arg(long = "min-units", default_value_t = 50_000)]
    pub min_units: u64,
    /// Keep baskets with at least this many surviving items.
    #[arg(long = "min-basket", default_value_t = 20)]
    pub min_basket: u32,
    /// Held-out fraction in (0,1); also writes .train/.test split files.
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of topics.
    #[arg(long)]
    pub k: usize,
    /// Vocabulary size.
    #[arg(long)]
    pub v: usize,
    /// Number of baskets.
    #[arg(long)]
    pub d: usize,
    /// Dirichlet concentration for basket mixtures.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Dirichlet concentration for topic rows.
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    /// Mean basket size for the shifted-Poisson sampler.
    #[arg(long = "mean-basket", default_value_t = 25.0)]
    pub mean_basket: f64,
    /// Fixed basket size; overrides --mean-basket.
    #[arg(long = "basket-size")]
    pub basket_size: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth output; defaults to the corpus path with a .truth tag.
    #[arg(long = "truth-out")]
    pub truth_out: Option<PathBuf>,
    /// Topic that receives a seasonal month profile.
    #[arg(long = "seasonal-topic")]
    pub seasonal_topic: Option<usize>,
    /// Peak months (1-12) for the seasonal topic.
    #[arg(long = "seasonal-months", value_delimiter = ',')]
    pub seasonal_months: Vec<u32>,
    /// Multiplier applied to the peak months.
    #[arg(long = "seasonal-boost", default_value_t = 3.0)]
    pub seasonal_boost: f64,
    /// Calendar year used for basket dates.
    #[arg(long, default_value_t = 2014)]
    pub year: i32,
    /// Number of customer groups with distinct topic priors.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Factor boosting each group's preferred topic in its prior.
    #[arg(long = "group-boost", default_value_t = 8.0)]
    pub group_boost: f64,
    #[arg(long = "baskets-per-customer", default_value_t = 5)]
    pub baskets_per_customer: usize,
    /// Demographic attribute the groups map onto, in canonical class order.
    #[arg(long, value_parser = ["age", "region", "gender"], default_value = "gender")]
    pub attribute: String,
    /// Demographics CSV output; defaults to the corpus path with a
    /// .demographics.csv tag. Only written when --groups is set.
    #[arg(long = "demographics-out")]
    pub demographics_out: Option<PathBuf>,
}

/// Training flags shared by train and eval. Unset values fall back to the
/// library defaults for the chosen K.
#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Topic-row smoothing; defaults to 1/K.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "max-epochs")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// tau0 in the online learning-rate schedule.
    #[arg(long = "learning-offset")]
    pub learning_offset: Option<f64>,
    /// kappa in the online learning-rate schedule.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Relative log-perplexity change that stops training.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Number of topics.
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, value_parser = ["vb", "gibbs"], default_value = "vb")]
    pub algorithm: String,
    /// Gibbs burn-in sweeps (gibbs only).
    #[arg(long = "burn-in", default_value_t = 200)]
    pub burn_in: usize,
    /// Gibbs post-burn-in sweeps (gibbs only).
    #[arg(long, default_value_t = 300)]
    pub samples: usize,
    /// Model output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated topic counts to sweep.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    /// Held-out fraction in (0,1).
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Sweep CSV output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Relevance weight between log probability (1) and log lift (0).
    #[arg(long, default_value_t = 0.6)]
    pub lambda: f64,
    /// Products listed per topic.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Relevance table CSV output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Topic index to rank.
    #[arg(long)]
    pub topic: usize,
    /// Relevance weight between log probability (1) and log lift (0).
    #[arg(long, default_value_t = 0.6)]
    pub lambda: f64,
    /// Number of products to list.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Optional CSV output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeasonalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Aggregation period.
    #[arg(long, value_parser = ["month", "weekday"], default_value = "month")]
    pub period: String,
    /// Prevalence CSV output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Demographics CSV (customer_id,age_band,region,gender).
    #[arg(long)]
    pub demographics: PathBuf,
    /// Attribute to predict.
    #[arg(long, value_parser = ["age", "region", "gender"])]
    pub task: String,
    /// Comma-separated L2 strengths for the grid search.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
    )]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-validation report JSON output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-customer predictions CSV.
    #[arg(long = "predictions-out")]
    pub predictions_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SurveyArgs {
    #[command(subcommand)]
    pub action: SurveyAction,
}

#[derive(Debug, Subcommand)]
pub enum SurveyAction {
    /// Generate label and intruder tasks from a trained model.
    Gen(SurveyGenArgs),
    /// Score a responses CSV against a task file.
    Score(SurveyScoreArgs),
}

#[derive(Debug, Args)]
pub struct SurveyGenArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Task family to generate.
    #[arg(long, value_parser = ["label", "intruder", "both"], default_value = "both")]
    pub kind: String,
    /// Tasks generated per topic and family.
    #[arg(long = "per-topic", default_value_t = 1)]
    pub per_topic: usize,
    /// File with one human topic label per line; required for label tasks.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Task JSON output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SurveyScoreArgs {
    /// Task JSON file from `survey gen`.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Responses CSV (task_id,respondent_id,chosen_index).
    #[arg(long)]
    pub responses: PathBuf,
    /// Score sheet JSON output file.
    #[arg(long)]
    pub out: PathBuf,
}
