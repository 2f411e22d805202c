//! `clgbn`: learn, average, query and cross-validate conditional linear-Gaussian
//! networks on two-visit difference data.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "clgbn", version, about)]
pub struct Cli {
    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master random seed; a random one is drawn and recorded when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Pearson correlation matrix and thresholded correlation network.
    Corrnet(CorrnetArgs),
    /// One constrained hill-climbing run.
    Learn(LearnArgs),
    /// Bootstrap model averaging and the consensus network.
    Average(AverageArgs),
    /// Fit the parameters of a given structure.
    Fit(FitArgs),
    /// Logic-sampling probability or expectation query.
    Query(QueryArgs),
    /// Intervene on a node, then optionally query the mutilated network.
    Intervene(InterveneArgs),
    /// k-fold cross-validation of the learning pipeline.
    Cv(CvArgs),
    /// Separate consensus networks per level of a discrete column.
    Subgroups(SubgroupArgs),
    /// Subtract age-matched atlas references from a two-visit table.
    Adjust(AdjustArgs),
    /// Draw samples from a fitted model.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    /// One row per subject with `<feature>_t1`/`<feature>_t2` columns.
    Longitudinal,
    /// A ready difference table.
    Deltas,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodingArg {
    Binary,
    ThreeLevel,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeArg {
    Blocks,
    Indicators,
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "longitudinal")]
    pub format: InputFormat,
    /// Reference atlas (`feature,age,value`); longitudinal input only.
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    pub treatment_coding: CodingArg,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
}

#[derive(Debug, Args, Serialize)]
pub struct ConstraintArgs {
    /// Skip the built-in clinical whitelist/blacklist.
    #[arg(long)]
    pub no_default_constraints: bool,
    /// Extra forced arc `A->B` (repeatable).
    #[arg(long)]
    pub whitelist: Vec<String>,
    /// Extra forbidden arc `A->B` (repeatable).
    #[arg(long)]
    pub blacklist: Vec<String>,
    /// Only add and delete arcs.
    #[arg(long)]
    pub no_reversals: bool,
    /// How discrete parents enter continuous regressions.
    #[arg(long, value_enum, default_value = "blocks")]
    pub regime: RegimeArg,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrnetArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0.4)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct LearnArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub constraints: ConstraintArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct AverageArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub constraints: ConstraintArgs,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 200)]
    pub replicates: usize,
    /// `auto` (estimated from the strengths) or a fixed value.
    #[arg(long, default_value = "auto")]
    pub threshold: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Structure JSON (as written by `learn` or `average`).
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, value_enum, default_value = "blocks")]
    pub regime: RegimeArg,
}

#[derive(Debug, Args, Serialize)]
pub struct QuerySpec {
    /// Event, e.g. `Growth=Good`.
    #[arg(long)]
    pub event: Option<String>,
    /// Evidence, e.g. `Treatment=treated,dT in [5,7],dANB~0`.
    #[arg(long, default_value = "")]
    pub evidence: String,
    /// Report the mean of this continuous variable instead of an event probability.
    #[arg(long)]
    pub expect: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Half-width of `X~v` intervals.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub query: QuerySpec,
}

#[derive(Debug, Args, Serialize)]
pub struct InterveneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub node: String,
    /// Point mass for a continuous node.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["level", "mean"])]
    pub value: Option<f64>,
    /// Level for a discrete node.
    #[arg(long)]
    pub level: Option<String>,
    /// Gaussian intervention mean (with `--sd`).
    #[arg(long, allow_hyphen_values = true, requires = "sd")]
    pub mean: Option<f64>,
    #[arg(long)]
    pub sd: Option<f64>,
    #[command(flatten)]
    pub query: QuerySpec,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerArg {
    Single,
    Averaged,
    Fixed,
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub constraints: ConstraintArgs,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "averaged")]
    pub learner: LearnerArg,
    /// Bootstrap replicates per fold (averaged learner).
    #[arg(long = "B", default_value_t = 50)]
    pub replicates: usize,
    #[arg(long, default_value = "auto")]
    pub threshold: String,
    /// Structure for the fixed learner.
    #[arg(long, required_if_eq("learner", "fixed"))]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SubgroupArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub constraints: ConstraintArgs,
    #[arg(long, default_value = "Treatment")]
    pub by: String,
    #[arg(long = "B", default_value_t = 200)]
    pub replicates: usize,
    #[arg(long, default_value = "auto")]
    pub threshold: String,
}

#[derive(Debug, Args, Serialize)]
pub struct AdjustArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short = 'n', long = "rows", default_value_t = 100)]
    pub rows: usize,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
}

const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}
