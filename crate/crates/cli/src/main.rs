use std::path::PathBuf;
use std::process::ExitCode;

use adaptrunc_cli::{geweke_command, gold_standard_command, parse_config, run_command, CliResult, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptrunc", version, about = "Adaptive-truncation SMC for nonparametric mixture models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive-truncation sampler and write its outputs.
    Run(Common),
    /// Long fixed-truncation MCMC run for reference values.
    GoldStandard(Common),
    /// Check the MCMC kernel against the prior on a synthetic problem.
    Geweke(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of particles S.
    #[arg(long)]
    particles: Option<usize>,
    /// Stopping tolerance.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Also write the final particle system.
    #[arg(long)]
    snapshot: bool,
}

fn execute(command: Command) -> CliResult<u8> {
    let (common, kind) = match command {
        Command::Run(c) => (c, 0),
        Command::GoldStandard(c) => (c, 1),
        Command::Geweke(c) => (c, 2),
    };
    let mut config = parse_config(&common.config)?;
    config.apply(&Overrides {
        out: common.out,
        seed: common.seed,
        particles: common.particles,
        epsilon: common.epsilon,
        threads: common.threads,
        snapshot: common.snapshot,
    });
    match kind {
        0 => {
            let outcome = run_command(&config)?;
            println!(
                "stop index R = {}{}; outputs in {}",
                outcome.stop_index,
                if outcome.converged { "" } else { " (did not converge)" },
                outcome.out_dir.display()
            );
            Ok(if outcome.converged { 0 } else { 3 })
        }
        1 => {
            let dir = gold_standard_command(&config)?;
            println!("outputs in {}", dir.display());
            Ok(0)
        }
        _ => {
            let report = geweke_command(&config)?;
            for ((name, ks), p) in report.names.iter().zip(&report.ks_statistics).zip(&report.p_values) {
                println!("{name:>12}  KS = {ks:.4}  p = {p:.4}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
