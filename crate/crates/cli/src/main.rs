//! `mbgen`: synthesize or ingest data, fit item tokenizers, train, decode and
//! evaluate. Every sub-command reads and writes fixed file names inside the
//! output directory and leaves a `manifest-<command>.json` behind.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::RunConfig;
use run::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mbgen", version, about = "Multi-behavior generative recommendation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory shared by the pipeline stages.
    #[arg(long, global = true, env = "MBGEN_OUT", default_value = "mbgen-out")]
    out: PathBuf,
    /// Global seed; every stage derives its randomness from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batched decoding (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dataset file (default: <out>/dataset.json).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Tokenizer checkpoint (default: <out>/tokenizer.ckpt).
    #[arg(long, global = true)]
    tokenizer: Option<PathBuf>,
    /// Model checkpoint (default: <out>/model.ckpt).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset with item features.
    SynthData(SynthArgs),
    /// Read a user,item,behavior,timestamp log.
    Ingest(IngestArgs),
    /// Assign item codes (SID, CID or the residual-quantization baseline).
    FitTokenizer(TokenizerArgs),
    /// Train the encoder-decoder on the training region.
    Train(TrainArgs),
    /// Write ranked predictions for held-out interactions.
    Predict(PredictArgs),
    /// Compute HR@K and NDCG@K per task.
    Evaluate(EvaluateArgs),
    /// Prefix histogram statistics of a tokenizer's codes.
    AnalyzeCodes,
    /// Joint and behavior-aware metrics over several beam counts.
    SweepBeams(SweepArgs),
    /// Parameter counts and multiply-accumulates per forward pass.
    CountFlops(FlopsArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    Planted,
    Skewed,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Generator spec in TOML; its seed is replaced by the global seed.
    #[arg(long, conflicts_with = "preset")]
    #[serde(skip)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "planted")]
    preset: Preset,
    #[arg(long, default_value_t = 2000)]
    users: usize,
}

#[derive(Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    #[serde(skip)]
    input: PathBuf,
    /// Behavior names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    behaviors: Vec<String>,
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 5)]
    min_count: usize,
    /// Per-item features `item,f1,...,fd`, copied into the output directory.
    #[arg(long)]
    #[serde(skip)]
    features: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Sid,
    Cid,
    Rqvae,
}

#[derive(Args, Serialize)]
struct TokenizerArgs {
    #[arg(long, group = "kind")]
    sid: bool,
    #[arg(long, group = "kind")]
    cid: bool,
    #[arg(long, group = "kind")]
    rqvae: bool,
    /// Codebook size per digit.
    #[arg(long)]
    k: Option<usize>,
    /// Digits per item.
    #[arg(long)]
    m: Option<usize>,
    /// Quantized levels of the baseline (default: m).
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    /// Train on every prefix of the training region.
    #[arg(long)]
    sliding_window: bool,
    /// Validate every this many steps (0 disables checkpoint selection).
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum SplitArg {
    Validation,
    Test,
}

impl SplitArg {
    fn split(self) -> mbgen_core::datamodel::Split {
        match self {
            SplitArg::Validation => mbgen_core::datamodel::Split::Validation,
            SplitArg::Test => mbgen_core::datamodel::Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum TaskArg {
    Target,
    BehaviorSpecific,
    BehaviorItem,
    BehaviorAware,
}

impl TaskArg {
    fn task(self) -> mbgen_core::eval::Task {
        use mbgen_core::eval::Task;
        match self {
            TaskArg::Target => Task::Target,
            TaskArg::BehaviorSpecific => Task::BehaviorSpecific,
            TaskArg::BehaviorItem => Task::BehaviorItem,
            TaskArg::BehaviorAware => Task::BehaviorAware,
        }
    }
}

#[derive(Args, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    n_beams: Option<usize>,
    /// Evaluate only the first this many users (0: all).
    #[arg(long)]
    users: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[arg(long, value_enum, default_value = "behavior-item")]
    task: TaskArg,
    /// Results per user.
    #[arg(long)]
    n: Option<usize>,
    /// Prompt behavior for `behavior-specific` (default: the held-out one).
    #[arg(long)]
    behavior: Option<String>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// Tasks to score (repeatable; default: all four).
    #[arg(long, value_enum)]
    task: Vec<TaskArg>,
    /// Exit with status 1 when the planted-data thresholds are not met.
    #[arg(long)]
    check: bool,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,50")]
    beams: Vec<usize>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Serialize)]
struct FlopsArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    experts: Vec<usize>,
    /// Encoder length for the MAC count (default: the configured maximum).
    #[arg(long)]
    encoder_len: Option<usize>,
}

fn resolve_config(g: &Global) -> CliResult<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) if !p.is_file() => {
            return Err(CliError::Usage(format!(
                "config file not found at {}",
                p.display()
            )))
        }
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.propagate_seed();
    Ok(cfg)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .try_init();
}

fn dispatch(cli: Cli) -> CliResult<String> {
    init_logging(cli.global.verbose);
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let cfg = resolve_config(&cli.global)?;
    let g = &cli.global;
    match &cli.command {
        Command::SynthData(a) => commands::synth_data(g, cfg, a),
        Command::Ingest(a) => commands::ingest(g, cfg, a),
        Command::FitTokenizer(a) => commands::fit_tokenizer(g, cfg, a),
        Command::Train(a) => commands::train(g, cfg, a),
        Command::Predict(a) => commands::predict(g, cfg, a),
        Command::Evaluate(a) => commands::evaluate(g, cfg, a),
        Command::AnalyzeCodes => commands::analyze_codes(g, cfg),
        Command::SweepBeams(a) => commands::sweep_beams(g, cfg, a),
        Command::CountFlops(a) => commands::count_flops(g, cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(cli) {
        Ok(hash) => {
            println!("manifest {hash}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
