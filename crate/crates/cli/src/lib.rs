//! Experiment drivers behind the `moderr` binary.
//!
//! Every command is a pure function of its configuration and seed: CSV outputs are
//! byte-identical across reruns and thread counts. Each run also writes `manifest.txt`
//! and the effective configuration as `config.toml`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

use checks::Check;
use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] moderr::Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Source1d,
    Darcy,
    Rates,
    ToyParticle,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Source1d => "source1d",
            Command::Darcy => "darcy",
            Command::Rates => "rates",
            Command::ToyParticle => "toy-particle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub command: Command,
    pub config: ExperimentConfig,
    /// Where the configuration came from, for the manifest.
    pub config_source: String,
    pub out: PathBuf,
    pub small: bool,
    pub check: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub files: Vec<String>,
    pub checks: Vec<Check>,
}

/// Runs one command, writes its outputs under `opts.out`, and evaluates the checks.
///
/// With `opts.check` a failed check is an error; otherwise checks are only reported.
pub fn execute(opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let mut cfg = opts.config.clone();
    if opts.small {
        cfg.darcy = cfg.darcy.small();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out)?;
    let started = Instant::now();
    let seed = cfg.seed;
    let mut manifest: Vec<(String, String)> = vec![
        ("command".into(), opts.command.name().into()),
        ("seed".into(), seed.to_string()),
        ("config_source".into(), opts.config_source.clone()),
        ("small".into(), opts.small.to_string()),
        ("moderr_version".into(), env!("CARGO_PKG_VERSION").into()),
        ("threads".into(), rayon::current_num_threads().to_string()),
    ];
    let (mut files, checks) = match opts.command {
        Command::Source1d => {
            let report = experiments::source1d::run_source1d(&cfg.source1d, seed)?;
            output::print_source1d(&report);
            (output::write_source1d(&opts.out, &report)?, checks::source1d_checks(&report))
        }
        Command::Darcy => {
            let report = experiments::darcy::run_darcy(&cfg)?;
            output::print_darcy(&report);
            manifest.push(("fine_solves".into(), report.fine_solves.to_string()));
            manifest.push((
                "iterative_accurate_calls".into(),
                report.iterative.metadata.accurate_calls.to_string(),
            ));
            manifest.push((
                "enhanced_accurate_calls".into(),
                report.enhanced.metadata.accurate_calls.to_string(),
            ));
            (output::write_darcy(&opts.out, &report)?, checks::darcy_checks(&report))
        }
        Command::Rates => {
            let report = experiments::rates::run_rates(&cfg.rates, seed)?;
            output::print_rates(&report);
            (output::write_rates(&opts.out, &report)?, checks::rates_checks(&report))
        }
        Command::ToyParticle => {
            let report = experiments::toy::run_sqrt_n(&cfg.toy, seed)?;
            output::print_toy(&report);
            (output::write_toy(&opts.out, &report)?, checks::toy_checks(&report))
        }
    };
    std::fs::write(opts.out.join("config.toml"), cfg.to_toml())?;
    files.push("config.toml".into());
    for c in &checks {
        manifest.push((format!("check.{}", c.name.replace(' ', "_")), c.passed.to_string()));
    }
    manifest.push(("files".into(), files.join(";")));
    manifest.push(("wall_time_s".into(), format!("{:.3}", started.elapsed().as_secs_f64())));
    output::write_manifest(&opts.out, &manifest)?;
    files.push("manifest.txt".into());

    for c in &checks {
        println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    if opts.check {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        if !failed.is_empty() {
            return Err(CliError::CheckFailed(failed.join(", ")));
        }
    }
    Ok(RunOutcome { files, checks })
}
