use abp_cli::commands::{self, Outcome};
use abp_cli::config::{parse_config, ExperimentConfig, OUTPUT_DIR_ENV};
use abp_cli::error::CliError;
use abp_cli::acceptance;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "abp", version, about = "Adaptive biasing potential sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Adaptive run (or ensemble of runs).
    Run(ConfigArg),
    /// Run with the frozen bias of `[fixed_bias]`.
    RunFixedBias(ConfigArg),
    /// Replica estimate of t Var(mu_bar_t) against the quadrature oracle.
    Variance(ConfigArg),
    /// Quadrature reference tables for a torus model.
    Oracle(ConfigArg),
    /// Spectral Galerkin run of the stochastic heat equation.
    SpdeRun(ConfigArg),
    /// Acceptance suite.
    Check {
        /// Comma-separated criterion numbers; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(arg: &ConfigArg) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&arg.config).map_err(|e| CliError::Config(format!("{}: {e}", arg.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(dir) = &arg.out {
        cfg.output.dir = Some(dir.clone());
    }
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::Run(a) => commands::command_run(&load(&a)?),
        Command::RunFixedBias(a) => commands::command_fixed_bias(&load(&a)?),
        Command::Variance(a) => commands::command_variance(&load(&a)?),
        Command::Oracle(a) => commands::command_oracle(&load(&a)?),
        Command::SpdeRun(a) => commands::command_spde(&load(&a)?),
        Command::Check { only, out } => {
            let ids = if only.is_empty() { acceptance::ALL.to_vec() } else { only };
            let dir = out
                .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| "abp-out".into());
            commands::command_check(&ids, &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(out) => {
            for l in &out.lines {
                println!("{l}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
