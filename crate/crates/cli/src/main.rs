//! `echosr`: train, run and inspect the super-resolution model.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod analyze;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "echosr", version, about = "Lightweight image super-resolution")]
struct Cli {
    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a run file.
    Train(TrainArgs),
    /// Super-resolve one PNG.
    Infer(InferArgs),
    /// Y-channel PSNR/SSIM over a directory of HR images.
    Eval(EvalArgs),
    /// Effective receptive field heatmaps.
    Erf(ErfArgs),
    /// Forward-pass latency.
    Bench(BenchArgs),
    /// Parameter count by module.
    Params(ParamsArgs),
}

/// Where model weights come from when a command can also use a fresh init.
#[derive(Args, Debug)]
struct ModelSource {
    #[arg(long, conflicts_with_all = ["preset", "scale", "config"])]
    checkpoint: Option<PathBuf>,
    /// Use freshly initialized weights.
    #[arg(long)]
    random_init: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["echosr", "echosr-lite"])]
    preset: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    scale: Option<u64>,
    /// Initialization seed for --random-init.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Multiplies iterations and learning-rate milestones.
    #[arg(long)]
    iter_scale: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["echosr", "echosr-lite"])]
    preset: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    scale: Option<u64>,
    /// Print the resolved plan and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required_unless_present = "identity")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hr_dir: Option<PathBuf>,
    /// LR inputs named like their HR images; synthesized by bicubic downsampling when absent.
    #[arg(long)]
    lr_dir: Option<PathBuf>,
    #[arg(long)]
    crop_border: Option<usize>,
    /// Score the HR images against themselves (pipeline sanity check).
    #[arg(long, conflicts_with = "checkpoint")]
    identity: bool,
    /// Scale for --identity.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    scale: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Block {
    Full,
    Mrfe,
    Cofb,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("weights").args(["checkpoint", "random_init"]).required(true))]
struct ErfArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long, value_enum, default_value_t = Block::Full)]
    block: Block,
    /// Output path prefix; `.png` and `.json` are appended.
    #[arg(long)]
    out: PathBuf,
    /// Also write the before/after area-ratio table of the cascade block.
    #[arg(long)]
    compare: bool,
    #[arg(long, default_value_t = 0)]
    group: usize,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    size: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    erf_seed: u64,
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("weights").args(["checkpoint", "random_init"]).required(true))]
struct BenchArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Square LR input side.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    size: u64,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["echosr", "echosr-lite"])]
    preset: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    scale: Option<u64>,
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ECHOSR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("ECHOSR_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        usage_error(&msg);
    }
    let json = cli.json;
    let result = match cli.command {
        Command::Train(a) => run::train(a, json),
        Command::Infer(a) => run::infer(a, json),
        Command::Eval(a) => run::eval(a, json),
        Command::Erf(a) => analyze::erf(a, json),
        Command::Bench(a) => analyze::bench(a, json),
        Command::Params(a) => analyze::params(a, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain joined with `: `, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !last.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
        last = text;
    }
    msg
}

/// Reports a usage problem clap cannot express and exits with code 2.
fn usage_error(msg: &str) -> ! {
    Cli::command().error(clap::error::ErrorKind::ArgumentConflict, msg).exit()
}

/// Prints `value` as pretty JSON on stdout.
fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
