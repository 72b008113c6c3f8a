use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use leap_core::runner::{exit_code, load_experiment, parse_values, run_experiment, sweep_tradeoff, SweepParam};
use leap_core::Result;

/// Iterative imitation learning from privileged experts on tabular POMDPs.
#[derive(Parser)]
#[command(name = "leap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics, snapshots and manifest.
    Run {
        config: PathBuf,
        /// Output directory, replacing `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root seed, replacing `[leap] root_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run once per value of a parameter and write tradeoff.csv.
    Sweep {
        config: PathBuf,
        /// delta, lambda or truncation_window.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0,0.05,0.1.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seed } => {
            let (config, spec) = load_experiment(&config, out.as_deref(), seed)?;
            let summary = run_experiment(&config, &spec)?;
            let report = summary.report();
            for row in &report.rows {
                println!(
                    "pi_{}  J={:.4}  success={:.4}  imitation_gap={:.4}  realizability_gap={:.4} ({})  slack={:.4}",
                    row.iteration,
                    row.j,
                    row.success_rate,
                    row.imitation_gap,
                    row.realizability_gap,
                    row.realizability_method.as_str(),
                    row.theorem1_slack
                );
            }
            println!("best iterate: pi_{}", report.selection.best_iteration);
            println!("wrote {}", summary.out_dir.display());
        }
        Command::Sweep { config, param, values, out, seed } => {
            let param: SweepParam = param.parse()?;
            let values = parse_values(&values)?;
            let (config, spec) = load_experiment(&config, out.as_deref(), seed)?;
            for row in sweep_tradeoff(&config, &spec, param, &values)? {
                println!(
                    "{param}={}  final_success={:.4}±{:.4}  final_J={:.4}  slack={:.4}  realizability_gap={:.4}",
                    row.value,
                    row.final_success,
                    row.final_success_se,
                    row.final_j,
                    row.theorem1_slack,
                    row.realizability_gap
                );
            }
            println!("wrote {}", config.output.dir.join("tradeoff.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("leap: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
