use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use moderr_cli::config::ExperimentConfig;
use moderr_cli::{execute, CliError, Command, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Source1d,
    Darcy,
    Rates,
    ToyParticle,
}

/// Iterative model-error experiments.
#[derive(Debug, Parser)]
#[command(name = "moderr", version)]
struct Args {
    command: Cmd,
    /// TOML file or preset name (paper-source1d, paper-darcy-noise{1,2,3}).
    #[arg(long)]
    config: Option<String>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Reduced Darcy grids and particle count.
    #[arg(long)]
    small: bool,
    /// Exit with status 3 when a published qualitative claim is not reproduced.
    #[arg(long)]
    check: bool,
}

fn run(args: Args) -> Result<(), CliError> {
    if let Some(k) = args.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let command = match args.command {
        Cmd::Source1d => Command::Source1d,
        Cmd::Darcy => Command::Darcy,
        Cmd::Rates => Command::Rates,
        Cmd::ToyParticle => Command::ToyParticle,
    };
    let (mut config, config_source) = match &args.config {
        Some(src) => (ExperimentConfig::load(src)?, src.clone()),
        None => (ExperimentConfig::default(), "defaults".to_string()),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("out").join(command.name()));
    execute(&RunOptions {
        command,
        config,
        config_source,
        out,
        small: args.small,
        check: args.check,
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
