use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kernel_pool::survey::PercentMode;
use kernel_pool::Rule;

mod commands;
mod error;
mod input;
mod output;

use error::{CliError, EXIT_INPUT};
use output::Format;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Parser, Debug)]
#[command(name = "kernel-pool", version, about = "Kernel scores, linear pools and disagreement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Output file; stdout if omitted.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct BinArgs {
    /// Interior cut points (header `cut`); the ten survey bins if omitted.
    #[arg(long)]
    pub bins: Option<String>,
    /// Truncation of the two outer bins.
    #[arg(long, value_name = "LO,HI", default_value = "-25,25", allow_hyphen_values = true)]
    pub truncate: String,
    /// Whether probabilities are percentages.
    #[arg(long, value_enum, default_value = "auto")]
    pub percent: PercentArg,
    /// Allowed distance of a probability sum from one.
    #[arg(long, default_value_t = kernel_pool::survey::DEFAULT_SUM_TOL)]
    pub sum_tolerance: f64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PercentArg {
    Auto,
    Percent,
    Fraction,
}

impl From<PercentArg> for PercentMode {
    fn from(p: PercentArg) -> Self {
        match p {
            PercentArg::Auto => PercentMode::Auto,
            PercentArg::Percent => PercentMode::Percent,
            PercentArg::Fraction => PercentMode::Fraction,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score forecasts, with entropies and optional pairwise divergences.
    Score(ScoreArgs),
    /// Decompose a linear pool's entropy into average entropy and disagreement.
    Decompose(DecomposeArgs),
    /// Run the randomized invariant suite.
    Check(CheckArgs),
    /// Per-period survey panel analysis.
    Panel(PanelArgs),
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub rule: Rule,
    /// Forecast file: samples for real-valued rules, probabilities for brier/rps.
    #[arg(long)]
    pub forecasts: String,
    /// Quadratic-form matrix for mse; identity if omitted.
    #[arg(long)]
    pub a_matrix: Option<String>,
    /// Outcome for every forecast: a number, comma-separated vector, or 1-based category.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "outcomes")]
    pub outcome: Option<String>,
    /// Per-forecast outcomes (`forecast_id,y1,...`).
    #[arg(long)]
    pub outcomes: Option<String>,
    /// Write pairwise divergences here.
    #[arg(long)]
    pub divergences: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub rule: Rule,
    /// Pool components as a forecast file.
    #[arg(long, required_unless_present = "panel", conflicts_with = "panel")]
    pub forecasts: Option<String>,
    /// Panel file; one decomposition per period.
    #[arg(long)]
    pub panel: Option<String>,
    #[arg(long)]
    pub a_matrix: Option<String>,
    /// `equal` or a weights file.
    #[arg(long, default_value = "equal")]
    pub weights: String,
    /// Write per-component entropies and divergences here.
    #[arg(long)]
    pub components: Option<String>,
    #[command(flatten)]
    pub bins: BinArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Number of random instances.
    #[arg(long, default_value_t = 1000)]
    pub random: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Add a quartic-kernel pool, which must fail the minimization check.
    #[arg(long)]
    pub inject_broken_kernel: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct PanelArgs {
    /// Panel file (`period,respondent,p1,...,pk`).
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub panel: Option<String>,
    /// Use the built-in synthetic panel generator.
    #[arg(long)]
    pub synthetic: bool,
    /// Periods for the synthetic panel.
    #[arg(long, default_value_t = 60)]
    pub synthetic_periods: usize,
    /// Write the synthetic panel here as a panel file.
    #[arg(long, requires = "synthetic")]
    pub synthetic_out: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// `equal` or a weights file (`period,respondent,weight`).
    #[arg(long, default_value = "equal")]
    pub weights: String,
    /// Realized values (`period,value`).
    #[arg(long)]
    pub outcomes: Option<String>,
    /// Months from forecast period to outcome period.
    #[arg(long, allow_hyphen_values = true)]
    pub horizon: Option<i32>,
    /// Write realized pool and average RPS per period here.
    #[arg(long)]
    pub realized: Option<String>,
    /// Write each respondent's realized RPS here.
    #[arg(long)]
    pub respondent_scores: Option<String>,
    /// Write the correlation table of the six series here.
    #[arg(long)]
    pub correlations: Option<String>,
    #[command(flatten)]
    pub bins: BinArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = serde_json::json!({
                "error": "usage",
                "message": e.render().to_string().trim_end(),
            });
            eprintln!("{record}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let result: Result<(), CliError> = match cli.command {
        Command::Score(a) => commands::score(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Check(a) => commands::check(&a),
        Command::Panel(a) => commands::panel(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
