mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "inrflow", version, about = "Neural field surrogates for 3D flow data", args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Require bitwise reproducible results (recorded in checkpoint metadata).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "INRFLOW_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate configurations from the analytic flow.
    GenSynth(commands::GenSynth),
    /// Fit a backbone to one field.
    TrainBackbone(commands::TrainBackbone),
    /// Train encoder, hyper-net and base backbone on a configuration directory.
    TrainHyper(commands::TrainHyper),
    /// Predict features at coordinates from a CSV.
    Query(commands::Query),
    /// Sample a plane on a uniform grid.
    Slice(commands::Slice),
    /// Error metrics and quantity correlations.
    Eval(commands::Eval),
    /// Compare analytic gradients against central differences.
    Gradcheck(commands::Gradcheck),
    /// Describe a checkpoint.
    Info(commands::Info),
}

const SUBCOMMANDS: [&str; 8] = ["gen-synth", "train-backbone", "train-hyper", "query", "slice", "eval", "gradcheck", "info"];

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect(), &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(commands::EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
