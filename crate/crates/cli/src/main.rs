use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use distiag_cli::sweep::parse_values;
use distiag_cli::{run_experiment, sweep, Axis, CliResult, ExperimentConfig};

/// Decentralized policy evaluation experiments.
///
/// Exit codes: 0 success, 2 bad configuration, 3 rank-deficient data,
/// 4 divergence.
#[derive(Parser)]
#[command(name = "distiag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method once and write traces, summary and chart.
    Run {
        /// Config file (`key = value` lines); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Repeat the run over several values of one parameter.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values, at least two.
        #[arg(long)]
        values: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the default config file.
    Defaults,
}

fn load(config: Option<PathBuf>, output: Option<PathBuf>) -> CliResult<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p, std::env::vars())?,
        None => ExperimentConfig::parse("", std::env::vars())?,
    };
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load(config, output)?;
            let out = run_experiment(&cfg)?;
            for m in &out.summary.methods {
                match m.final_gap {
                    Some(g) => println!(
                        "{:<11} final gap {g:.3e}  epochs to 1e-6 {:?}",
                        m.method.name(),
                        m.epochs_to_tolerance
                    ),
                    None => println!(
                        "{:<11} {}",
                        m.method.name(),
                        m.error.as_deref().unwrap_or(m.status)
                    ),
                }
            }
            println!("artifacts in {}", cfg.output.display());
            Ok(out.exit_code())
        }
        Command::Sweep {
            config,
            axis,
            values,
            output,
        } => {
            let cfg = load(config, output)?;
            let s = sweep(&cfg, axis, &parse_values(&values))?;
            for c in &s.cells {
                println!(
                    "{axis}={:<12} {}",
                    c.value,
                    c.error.as_deref().unwrap_or(c.status)
                );
            }
            println!("table in {}", cfg.output.join("sweep_table.csv").display());
            Ok(s.exit_code())
        }
        Command::Defaults => {
            print!("{}", ExperimentConfig::default().to_text());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = match execute(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
