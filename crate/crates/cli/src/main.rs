use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use diffplan::sim::ScenarioKind;

mod commands;

#[derive(Parser)]
#[command(name = "diffplan", version, about = "Diffusion trajectory planner with rule-based scoring and a closed-loop benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training dataset from scripted-expert rollouts.
    GenData(GenDataArgs),
    /// Train the diffusion planner on a dataset file.
    Train(TrainArgs),
    /// Run closed-loop episodes and write one JSON log per episode.
    Simulate(SimulateArgs),
    /// Aggregate episode logs into a metrics CSV.
    Eval(EvalArgs),
    /// Closed-loop metrics for several anchor counts on shared scenarios.
    Ablate(AblateArgs),
    /// Metrics and comfort summaries of an episode directory.
    Report(ReportArgs),
    /// Cost breakdown of one ego-frame trajectory.
    Score(ScoreArgs),
    /// Comfort index of a trajectory against a reference.
    Comfort(ComfortArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Number of scenarios.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep every `stride`-th tick of each scenario.
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    /// Scenario length in seconds.
    #[arg(long, default_value_t = 15.0)]
    pub duration: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Diffusion steps K.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    Mock,
    Http,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlannerKind {
    Diffusion,
    Expert,
    Standstill,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionKind {
    Scorer,
    Random,
}

#[derive(Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub provider: ProviderKind,
    #[arg(long)]
    pub provider_url: Option<String>,
    #[arg(long, default_value_t = diffplan::regulator::DEFAULT_PROVIDER_TIMEOUT_MS)]
    pub provider_timeout_ms: u64,
    /// Prompt template file for the HTTP provider.
    #[arg(long)]
    pub prompt_template: Option<PathBuf>,
}

#[derive(Args)]
pub struct PlannerArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub anchors: usize,
    /// DDIM steps; 0 runs full DDPM sampling.
    #[arg(long, default_value_t = 10)]
    pub ddim_steps: usize,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// A scenario kind or `all` to cycle through every kind.
    #[arg(long, default_value = "all")]
    pub scenario_kind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of episodes.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 15.0)]
    pub duration: f64,
    #[arg(long, value_enum, default_value = "diffusion")]
    pub planner: PlannerKind,
    #[arg(long, value_enum, default_value = "scorer")]
    pub selection: SelectionKind,
    #[command(flatten)]
    pub model: PlannerArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Directory for episode logs.
    #[arg(long, default_value = "episodes")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Comma-separated anchor counts.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8")]
    pub anchors: Vec<usize>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub scenarios: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 15.0)]
    pub duration: f64,
    /// DDIM steps; 0 runs full DDPM sampling.
    #[arg(long, default_value_t = 10)]
    pub ddim_steps: usize,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[arg(long, default_value = "ablation.csv")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "episodes")]
    pub episodes: PathBuf,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Directory for the CSV tables; defaults to the report's directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Scorer weights; defaults to the built-in table.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Ego status; defaults to the origin, heading +x, at the first-segment speed.
    #[arg(long)]
    pub ego: Option<PathBuf>,
}

#[derive(Args)]
pub struct ComfortArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = diffplan::comfort::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Six channel weights as a JSON array.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub ego: Option<PathBuf>,
    /// Print the per-horizon CSV table instead of JSON.
    #[arg(long)]
    pub csv: bool,
}

pub fn parse_kinds(s: &str) -> Result<Vec<ScenarioKind>> {
    if s == "all" {
        return Ok(ScenarioKind::ALL.to_vec());
    }
    s.split(',').map(|k| Ok(k.trim().parse::<ScenarioKind>()?)).collect()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Report(a) => commands::report(&a),
        Command::Score(a) => commands::score(&a),
        Command::Comfort(a) => commands::comfort(&a),
    }
}
