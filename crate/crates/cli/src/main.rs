mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("gate failed: {0}")]
    Gate(String),
    #[error(transparent)]
    Core(#[from] srnas::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Gate(_) => 1,
            CliError::Usage(_) | CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "srnas", version, about = "Latency-constrained width/depth search for super-resolution")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "SRNAS_CONFIG")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set search.gamma=0.02`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a latency dataset.
    Bench(BenchArgs),
    /// Train the speed model on a latency dataset.
    FitSpeed(FitArgs),
    /// Run the architecture search.
    Search(SearchArgs),
    /// Fine-tune an extracted model.
    Finetune(FinetuneArgs),
    /// Score a model (or plain bicubic) on HR images.
    Eval(EvalArgs),
    /// Write a compact model and its architecture description.
    Export(ExportArgs),
    /// Write a procedural PNG corpus.
    Corpus(CorpusArgs),
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// `analytic` or `measured`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum validation MAPE (fraction).
    #[arg(long)]
    pub gate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub speed: PathBuf,
    /// Latency threshold in ms.
    #[arg(long)]
    pub vt: Option<f64>,
    /// Threshold as a fraction of the initial predicted latency.
    #[arg(long, conflicts_with = "vt")]
    pub vt_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of HR training PNGs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Continue from the state saved in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub compact: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Compact model; omit together with `--bicubic` to score bicubic only.
    #[arg(long, required_unless_present = "bicubic")]
    pub model: Option<PathBuf>,
    /// Use plain bicubic upscaling as the model.
    #[arg(long)]
    pub bicubic: bool,
    /// Directory of HR PNGs.
    #[arg(long)]
    pub hr: PathBuf,
    /// Directory of matching LR PNGs; generated by bicubic downscaling if absent.
    #[arg(long)]
    pub lr: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Border crop for the metrics; defaults to the scale.
    #[arg(long)]
    pub shave: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub compact: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Speed model used to annotate per-block latency.
    #[arg(long)]
    pub speed: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let result = config::RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| match &cli.cmd {
        Command::Bench(a) => commands::bench(&cfg, a),
        Command::FitSpeed(a) => commands::fit_speed(&cfg, a),
        Command::Search(a) => commands::search(&cfg, a),
        Command::Finetune(a) => commands::finetune(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Export(a) => commands::export(&cfg, a),
        Command::Corpus(a) => commands::corpus(&cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
