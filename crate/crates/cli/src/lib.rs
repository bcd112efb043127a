//! The `dcdm` command line, usable in-process through [`main_from`].

mod commands;
mod config;

use std::ffi::OsString;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcdm::tensor::GridShape;
use dcdm::{Error, ErrorCategory};

use crate::config::RunConfig;

/// Camera-controlled, multi-shot toy video diffusion tools.
#[derive(Debug, Parser)]
#[command(name = "dcdm", version, about)]
struct Cli {
    /// Master seed for every random stream (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rewrite a prompt into explicit subjects, attributes, scene and actions.
    ExtendPrompt(commands::ExtendArgs),
    /// Print the camera-motion label for a prompt.
    Classify(commands::ClassifyArgs),
    /// Generate camera-structured noise and write it as a .dcdn file.
    GenNoise(commands::GenNoiseArgs),
    /// Check sparse shot attention against the masked dense oracle.
    AttnCheck(commands::AttnCheckArgs),
    /// Write a CSV of attention pair counts and timings.
    AttnBench(commands::AttnBenchArgs),
    /// Train the toy denoiser on moving-sinusoid videos.
    TrainToy(commands::TrainArgs),
    /// Sample a video from a trained checkpoint.
    Sample(commands::SampleArgs),
    /// Estimate per-transition displacement of a .dcdn video.
    EvalMotion(commands::EvalArgs),
}

/// Noise options shared by `gen-noise` and `sample`.
#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    /// Camera template JSON file.
    #[arg(long, value_name = "PATH")]
    template: Option<PathBuf>,
    /// Motion category, used when no template file is given.
    #[arg(long)]
    category: Option<dcdm::camera::MotionCategory>,
    /// Pixels per frame for pans, scale rate for zooms.
    #[arg(long)]
    speed: Option<f64>,
    /// Temporal coherence in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// nearest or bilinear.
    #[arg(long)]
    warp_mode: Option<dcdm::noise::WarpMode>,
}

pub fn parse_shape(s: &str) -> Result<GridShape, String> {
    s.parse::<GridShape>().map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Validation => 1,
        ErrorCategory::Runtime => 2,
        ErrorCategory::Transport => 3,
    }
}

fn category_name(c: ErrorCategory) -> &'static str {
    match c {
        ErrorCategory::Validation => "validation",
        ErrorCategory::Runtime => "runtime",
        ErrorCategory::Transport => "transport",
    }
}

fn run(cli: Cli) -> dcdm::Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = commands::Context {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        config,
    };
    match cli.command {
        Command::ExtendPrompt(a) => commands::extend(&ctx, a),
        Command::Classify(a) => commands::classify(&ctx, a),
        Command::GenNoise(a) => commands::gen_noise(&ctx, a),
        Command::AttnCheck(a) => commands::attn_check(&ctx, a),
        Command::AttnBench(a) => commands::attn_bench(&ctx, a),
        Command::TrainToy(a) => commands::train(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::EvalMotion(a) => commands::eval_motion(&ctx, a),
    }
}

/// Parses `args` (program name first), runs the command and maps any error
/// to its exit code after printing it to stderr.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: validation: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {detail}", category_name(e.category()));
            ExitCode::from(exit_code(&e))
        }
    }
}
