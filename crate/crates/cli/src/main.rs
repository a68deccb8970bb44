mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sanas_core::SanasError;

#[derive(Parser)]
#[command(name = "sanas", version, about = "Adaptive architecture search for keyword spotting on audio streams")]
struct Cli {
    /// Worker threads (default: SANAS_THREADS, else every core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize labelled streams and write train/val/test splits.
    PrepareData(PrepareArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Score a checkpoint on a split or on one long stream.
    Eval(EvalArgs),
    /// Collect runs into accuracy/cost scatter and Pareto-front CSVs.
    Pareto(ParetoArgs),
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct Source {
    /// Synthetic tonal-pattern task.
    #[arg(long, group = "source")]
    toy: bool,
    /// Root of an extracted Speech Commands archive.
    #[arg(long, value_name = "DIR", group = "source")]
    speech_commands: Option<PathBuf>,
}

#[derive(Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    min_snr_db: f64,
    #[arg(long, default_value_t = 20.0)]
    max_snr_db: f64,
    /// Stream length bounds in seconds (toy default 3/3, Speech Commands 1/3).
    #[arg(long)]
    min_dur: Option<f64>,
    #[arg(long)]
    max_dur: Option<f64>,
    /// Toy task: number of word classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Toy task: streams per class, background noise included.
    #[arg(long)]
    streams_per_class: Option<usize>,
    /// Speech Commands: use only the first N clips.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StaticArch {
    Backbone,
    Full,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Train one fixed sub-graph by back-propagation instead of the controller.
    #[arg(long = "static", value_enum)]
    static_arch: Option<StaticArch>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: SplitArg,
    /// Long WAV to run through the streaming decoder.
    #[arg(long, value_name = "WAV", requires = "spans")]
    stream: Option<PathBuf>,
    /// JSON list of `{label, start, end}` word spans for `--stream`.
    #[arg(long, value_name = "JSON", requires = "stream")]
    spans: Option<PathBuf>,
    /// Refuse checkpoints trained on a different graph.
    #[arg(long, value_name = "GRAPH")]
    graph: Option<String>,
    /// Prepared dataset (default: the one named in the checkpoint's config).
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Metrics bundle path (default: next to the checkpoint).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ParetoArgs {
    /// Directory whose sub-directories are training runs.
    #[arg(long, value_name = "DIR")]
    runs: PathBuf,
    /// Scatter CSV; the front goes to `<stem>-front.csv` beside it.
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, SanasError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("SANAS_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| SanasError::Usage(format!("SANAS_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), SanasError> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(SanasError::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| SanasError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::PrepareData(a) => commands::prepare_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Pareto(a) => commands::pareto(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
